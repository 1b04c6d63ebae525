//! Closed-form swap solutions and small reduced models.
//!
//! The two-particle double well is reduced to three levels in the basis
//! `(psi-, psi+, phi+)` with `psi+- = (|01> +- |10>)/sqrt2` and `phi+` the
//! symmetric doubly-occupied state. `psi-` is dark; the other two couple via
//! `-2J` and `phi+` costs `U`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagator::{propagate_state, propagate_unitary, Hamiltonian, IntegratorConfig};
use crate::pulse::{gauss_legendre, segment_edges, Pulse, SquarePulse};

const ZERO: C64 = C64::new(0.0, 0.0);

/// `cos(theta) I + i sin(theta) sigma_x`: single-particle evolution across one
/// bond after accumulating `theta = int J dt`.
pub fn noninteracting_rotation(theta: f64) -> Matrix2<C64> {
    let c = C64::new(theta.cos(), 0.0);
    let s = C64::new(0.0, theta.sin());
    Matrix2::new(c, s, s, c)
}

/// Smallest `T` with `int_0^T J = pi/2`, searched on `[0, horizon]`.
pub fn noninteracting_swap_time(pulse: &dyn Pulse, horizon: f64) -> Result<f64> {
    first_crossing(pulse, PI / 2.0, horizon)
}

/// First time at which the running integral of a nonnegative pulse reaches
/// `target`.
pub fn first_crossing(pulse: &dyn Pulse, target: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    const PANELS: usize = 4096;
    let edges = segment_edges(0.0, horizon, &pulse.breakpoints());
    let mut acc = 0.0;
    for w in edges.windows(2) {
        let n = ((PANELS as f64) * (w[1] - w[0]) / horizon).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            let a = w[0] + k as f64 * h;
            let b = if k + 1 == n { w[1] } else { a + h };
            let piece = gauss_legendre(|t| pulse.value(t), a, b);
            if acc + piece >= target {
                // bisection on the partial integral within this panel
                let (mut lo, mut hi) = (a, b);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if acc + gauss_legendre(|t| pulse.value(t), a, mid) >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                        break;
                    }
                }
                return Ok(0.5 * (lo + hi));
            }
            acc += piece;
        }
    }
    Err(Error::Unreachable(format!(
        "pulse integral reaches only {acc:.6} of the required {target:.6} within t <= {horizon}"
    )))
}

/// `[[0,0,0],[0,0,-2J],[0,-2J,U]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeLevelHamiltonian {
    pub hopping: f64,
    pub interaction: f64,
}

impl ThreeLevelHamiltonian {
    pub fn matrix(&self) -> DMatrix<f64> {
        let j2 = -2.0 * self.hopping;
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, j2, 0.0, j2, self.interaction])
    }

    /// `E+-` of the bright block.
    pub fn bright_energies(&self) -> (f64, f64) {
        let (j, u) = (self.hopping, self.interaction);
        let r = (16.0 * j * j + u * u).sqrt();
        (0.5 * (u + r), 0.5 * (u - r))
    }
}

/// The three-level model driven by a hopping pulse.
pub struct ThreeLevelDynamics<P> {
    pub pulse: P,
    pub interaction: f64,
}

impl<P: Pulse> Hamiltonian for ThreeLevelDynamics<P> {
    fn dim(&self) -> usize {
        3
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        let j2 = -2.0 * self.pulse.value(t);
        out[0] = ZERO;
        out[1] = psi[2] * j2;
        out[2] = psi[1] * j2 + psi[2] * self.interaction;
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.pulse.breakpoints()
    }
}

/// `|01>` and `|10>` written in the three-level basis.
pub fn distinguishable_states() -> ([C64; 3], [C64; 3]) {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    ([s, s, ZERO], [-s, s, ZERO])
}

/// `|<01|U|10>|^2` for a three-level unitary.
pub fn swap_fidelity(u: &DMatrix<C64>) -> f64 {
    let (ket01, ket10) = distinguishable_states();
    let mut amp = ZERO;
    for i in 0..3 {
        for j in 0..3 {
            amp += ket01[i].conj() * u[(i, j)] * ket10[j];
        }
    }
    amp.norm_sqr()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLevelOutcome {
    pub unitary: DMatrix<C64>,
    pub swap_fidelity: f64,
    /// `U_11`, the dark-state element.
    pub dark_element: C64,
    /// `arg <phi+|U|phi+>`; unconstrained by the swap target.
    pub doublon_phase: f64,
}

/// Propagates the three-level model over `[0, T]`.
pub fn three_level_propagate(
    pulse: &dyn Pulse,
    interaction: f64,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<ThreeLevelOutcome> {
    let dynamics = ThreeLevelDynamics { pulse, interaction };
    let unitary = propagate_unitary(&dynamics, 0.0, duration, cfg)?;
    Ok(ThreeLevelOutcome {
        swap_fidelity: swap_fidelity(&unitary),
        dark_element: unitary[(0, 0)],
        doublon_phase: unitary[(2, 2)].arg(),
        unitary,
    })
}

/// A constant-hopping pulse that swaps two interacting particles exactly.
///
/// With `a = 2 n_plus + 1` and `b = 2 n_minus + 1` the bright energies satisfy
/// `E+ T = a pi` and `E- T = -b pi`, so the bright block returns to `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SquareSolution {
    pub n_plus: u32,
    pub n_minus: u32,
    /// `a / b`, always above 1.
    pub x: f64,
    pub u_over_j: f64,
    pub j_t_product: f64,
    pub u_t_product: f64,
    /// Smallest `J T` among members sharing this `U T`.
    pub on_min_j_frontier: bool,
    /// `U T = 2 pi`, the shortest duration any member reaches.
    pub minimal_time: bool,
}

impl SquareSolution {
    pub fn new(n_plus: u32, n_minus: u32) -> Option<Self> {
        if n_plus <= n_minus {
            return None;
        }
        let a = (2 * n_plus + 1) as f64;
        let b = (2 * n_minus + 1) as f64;
        let x = a / b;
        Some(Self {
            n_plus,
            n_minus,
            x,
            u_over_j: 2.0 * (x - 1.0) / x.sqrt(),
            j_t_product: 0.5 * PI * (a * b).sqrt(),
            u_t_product: (a - b) * PI,
            on_min_j_frontier: false,
            minimal_time: false,
        })
    }

    /// `(J, T)` realising this member at interaction `U`.
    pub fn hopping_and_duration(&self, interaction: f64) -> (f64, f64) {
        (interaction / self.u_over_j, self.u_t_product / interaction)
    }

    pub fn pulse(&self, interaction: f64) -> (SquarePulse, f64) {
        let (j, t) = self.hopping_and_duration(interaction);
        (SquarePulse::new(j, t), t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareFamily {
    /// Sorted by `(U T, J T)`.
    pub members: Vec<SquareSolution>,
}

impl SquareFamily {
    pub fn frontier(&self) -> impl Iterator<Item = &SquareSolution> {
        self.members.iter().filter(|m| m.on_min_j_frontier)
    }

    /// Minimal-time member with the least hopping.
    pub fn fastest(&self) -> Option<&SquareSolution> {
        self.members.iter().filter(|m| m.minimal_time).min_by(|a, b| a.j_t_product.total_cmp(&b.j_t_product))
    }
}

/// Every solution with `max(n_plus, n_minus) <= n_max` and `x > 1`.
pub fn square_solution_family(n_max: u32) -> SquareFamily {
    let mut members: Vec<SquareSolution> = (0..=n_max)
        .flat_map(|p| (0..=n_max).filter_map(move |m| SquareSolution::new(p, m)))
        .collect();
    members.sort_by(|a, b| a.u_t_product.total_cmp(&b.u_t_product).then(a.j_t_product.total_cmp(&b.j_t_product)));
    let t_min = members.iter().map(|m| m.u_t_product).fold(f64::INFINITY, f64::min);
    for i in 0..members.len() {
        let ut = members[i].u_t_product;
        let best = members
            .iter()
            .filter(|m| (m.u_t_product - ut).abs() < 1e-9)
            .map(|m| m.j_t_product)
            .fold(f64::INFINITY, f64::min);
        members[i].on_min_j_frontier = members[i].j_t_product <= best + 1e-12;
        members[i].minimal_time = (ut - t_min).abs() < 1e-9;
    }
    SquareFamily { members }
}

/// Largest swap fidelity of constant pulses `J in (0, j_max]` of duration `T`,
/// found on a uniform grid.
pub fn best_constant_pulse_fidelity(
    interaction: f64,
    duration: f64,
    j_max: f64,
    samples: usize,
    cfg: &IntegratorConfig,
) -> Result<(f64, f64)> {
    let results: Vec<(f64, f64)> = (1..=samples)
        .into_par_iter()
        .map(|i| {
            let j = j_max * i as f64 / samples as f64;
            let out = three_level_propagate(&SquarePulse::new(j, duration), interaction, duration, cfg)?;
            Ok((j, out.swap_fidelity))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoleCheck {
    /// `int_0^T J`.
    pub phase: f64,
    /// Nearest integer `m` to `phase / 2 pi`.
    pub winding: i64,
    pub is_hole_safe: bool,
    /// `|<1|U|1>|^2` for a particle next to an empty site.
    pub return_probability: f64,
    /// `(1 + Re <1|U|1>) / 2`; equals 1 only when the particle comes back with
    /// its phase intact.
    pub invariance_fidelity: f64,
}

pub const HOLE_PHASE_TOLERANCE: f64 = 1e-3;

/// Checks whether a pulse leaves a particle beside a hole untouched.
pub fn hole_phase_check(pulse: &dyn Pulse, duration: f64, cfg: &IntegratorConfig) -> Result<HoleCheck> {
    let phase = crate::pulse::pulse_area(pulse, 0.0, duration, 2048);
    let winding = (phase / (2.0 * PI)).round() as i64;
    let is_hole_safe = (phase - 2.0 * PI * winding as f64).abs() <= HOLE_PHASE_TOLERANCE;

    struct Hop<'a>(&'a dyn Pulse);
    impl Hamiltonian for Hop<'_> {
        fn dim(&self) -> usize {
            2
        }
        fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
            let j = self.0.value(t);
            out[0] = psi[1] * -j;
            out[1] = psi[0] * -j;
        }
        fn breakpoints(&self) -> Vec<f64> {
            self.0.breakpoints()
        }
    }
    let psi = propagate_state(&Hop(pulse), &[C64::new(1.0, 0.0), ZERO], 0.0, duration, cfg)?.into_final_state();
    Ok(HoleCheck {
        phase,
        winding,
        is_hole_safe,
        return_probability: psi[0].norm_sqr(),
        invariance_fidelity: 0.5 * (1.0 + psi[0].re),
    })
}

/// Superlattice depths over one period `2T`:
/// `V(x, t) = V_x cos^2(x + chi) + V_2 cos^2(2x + phi)` with `k = 1`.
pub struct LatticeModulation {
    pub long_depth: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub short_depth: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub short_phase: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Displacement `chi(t)` of the long lattice.
    pub long_shift: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub period: f64,
}

impl LatticeModulation {
    /// Time-independent depths.
    pub fn stationary(long_depth: f64, short_depth: f64, period: f64) -> Self {
        Self {
            long_depth: Box::new(move |_| long_depth),
            short_depth: Box::new(move |_| short_depth),
            short_phase: Box::new(|_| 0.0),
            long_shift: Box::new(|_| 0.0),
            period,
        }
    }

    /// Constant depths with the long lattice moved by half its period during
    /// the second half of the cycle.
    pub fn mirrored(long_depth: f64, short_depth: f64, period: f64) -> Self {
        let half = 0.5 * period;
        Self {
            long_shift: Box::new(move |t| if t < half { 0.0 } else { PI / 2.0 }),
            ..Self::stationary(long_depth, short_depth, period)
        }
    }

    /// `dV/dx` at `(x, t)`.
    pub fn potential_slope(&self, x: f64, t: f64) -> f64 {
        let (vx, v2) = ((self.long_depth)(t), (self.short_depth)(t));
        let (chi, phi) = ((self.long_shift)(t), (self.short_phase)(t));
        -vx * (2.0 * (x + chi)).sin() - 2.0 * v2 * (2.0 * (2.0 * x + phi)).sin()
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.5 * self.period]
    }
}

/// `int_0^{2T} dt int_0^{pi/2} dx dV/dx` by composite Gauss-Legendre
/// quadrature in both variables.
pub fn zero_force_average(modulation: &LatticeModulation, panels: usize) -> f64 {
    let panels = panels.max(1);
    let spatial = |t: f64| {
        let h = (PI / 2.0) / panels as f64;
        (0..panels)
            .map(|k| gauss_legendre(|x| modulation.potential_slope(x, t), k as f64 * h, (k + 1) as f64 * h))
            .sum::<f64>()
    };
    let edges = segment_edges(0.0, modulation.period, &modulation.breakpoints());
    let mut total = 0.0;
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / panels as f64;
        for k in 0..panels {
            let a = w[0] + k as f64 * h;
            total += gauss_legendre(&spatial, a, a + h);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::FnPulse;
    use proptest::prelude::*;

    fn cfg(t: f64) -> IntegratorConfig {
        IntegratorConfig::for_half_period(t)
    }

    #[test]
    fn rotation_examples() {
        let id = noninteracting_rotation(0.0);
        assert_eq!(id, Matrix2::identity());
        let swap = noninteracting_rotation(PI / 2.0);
        assert!((swap[(0, 1)] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(swap[(0, 0)].norm() < 1e-15);
        let bs = noninteracting_rotation(PI / 4.0);
        assert!((bs[(1, 0)].norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn swap_time_for_constant_pulses() {
        let j = 0.8;
        let t = noninteracting_swap_time(&FnPulse(move |_| j), 100.0).unwrap();
        assert!((t - PI / (2.0 * j)).abs() < 1e-12);
        let t2 = noninteracting_swap_time(&FnPulse(move |_| 2.0 * j), 100.0).unwrap();
        assert!((t2 - PI / (4.0 * j)).abs() < 1e-12);
        assert!(matches!(noninteracting_swap_time(&SquarePulse::new(0.1, 1.0), 100.0), Err(Error::Unreachable(_))));
    }

    #[test]
    fn smooth_pulse_swap_time_against_closed_form_integral() {
        // int_0^t J sin^2(pi s / T0) ds = J (t/2 - T0 sin(2 pi t/T0) / (4 pi))
        let j = 1.0;
        let t0 = PI * PI / j;
        let pulse = FnPulse(move |s: f64| j * (PI * s / t0).sin().powi(2));
        let t = noninteracting_swap_time(&pulse, t0).unwrap();
        let g = |t: f64| j * (t / 2.0 - t0 * (2.0 * PI * t / t0).sin() / (4.0 * PI)) - PI / 2.0;
        assert!(g(t).abs() < 1e-10);
        assert!(t < t0 / 2.0 + 1.0);
    }

    #[test]
    fn family_members_satisfy_phase_conditions() {
        let fam = square_solution_family(3);
        assert_eq!(fam.members.len(), 6);
        for m in &fam.members {
            assert!(m.x > 1.0);
            let u = 1.3;
            let (j, t) = m.hopping_and_duration(u);
            let (ep, em) = ThreeLevelHamiltonian { hopping: j, interaction: u }.bright_energies();
            assert!((ep * t - (2 * m.n_plus + 1) as f64 * PI).abs() < 1e-10);
            assert!((em * t + (2 * m.n_minus + 1) as f64 * PI).abs() < 1e-10);
            assert!((m.u_over_j - 2.0 * (m.x - 1.0) / m.x.sqrt()).abs() < 1e-15);
        }
        let fastest = fam.fastest().unwrap();
        assert_eq!((fastest.n_plus, fastest.n_minus), (1, 0));
        assert!((fastest.u_t_product - 2.0 * PI).abs() < 1e-12);
        assert!((fastest.u_over_j - 4.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!(fam.frontier().all(|m| m.n_minus == 0));
        assert!(square_solution_family(0).members.is_empty());
    }

    #[test]
    fn bright_block_flips_sign_at_first_solution() {
        // closed form: exp(-i T H_b) with H_b = U/2 + (-2J sx + U/2 sz)
        let u = 1.0;
        let m = SquareSolution::new(1, 0).unwrap();
        let (j, t) = m.hopping_and_duration(u);
        let r = (4.0 * j * j + u * u / 4.0).sqrt();
        let phase = C64::new(0.0, -u * t / 2.0).exp();
        let c = (r * t).cos();
        let s = (r * t).sin();
        let upp = phase * C64::new(c, -s * (-u / 2.0) / r);
        assert!((upp + C64::new(1.0, 0.0)).norm() < 1e-12);

        let (pulse, t) = m.pulse(u);
        let out = three_level_propagate(&pulse, u, t, &cfg(t)).unwrap();
        assert!((out.unitary[(1, 1)] + C64::new(1.0, 0.0)).norm() < 1e-8);
        assert!(out.swap_fidelity > 1.0 - 1e-6);
    }

    #[test]
    fn no_drive_no_swap() {
        let out = three_level_propagate(&SquarePulse::new(0.0, 2.0), 1.0, 2.0, &cfg(2.0)).unwrap();
        assert!(out.swap_fidelity < 1e-20);
        assert!((out.doublon_phase + 2.0).abs() < 1e-9);
    }

    #[test]
    fn below_minimal_time_constant_pulses_fall_short() {
        let u = 1.0;
        for frac in [0.5, 0.8, 0.95] {
            let t = frac * 2.0 * PI / u;
            let (_, f) = best_constant_pulse_fidelity(u, t, 4.0, 200, &cfg(t)).unwrap();
            assert!(f < 1.0 - 1e-3, "T = {t}: F = {f}");
        }
    }

    #[test]
    fn hole_scenarios() {
        let check = |area: f64| {
            let t = 3.0;
            hole_phase_check(&SquarePulse::new(area / t, t), t, &cfg(t)).unwrap()
        };
        let full = check(2.0 * PI);
        assert!(full.is_hole_safe && full.winding == 1);
        assert!(full.return_probability > 1.0 - 1e-10 && full.invariance_fidelity > 1.0 - 1e-10);
        let half = check(PI);
        assert!(!half.is_hole_safe);
        assert!(half.return_probability > 1.0 - 1e-10);
        assert!(half.invariance_fidelity < 1e-10);
        let quarter = check(PI / 2.0);
        assert!(quarter.return_probability < 1e-10);
        assert!((quarter.invariance_fidelity - 0.5).abs() < 1e-10);
        assert!(check(2.0 * PI + 5e-4).is_hole_safe);
        assert!(!check(2.0 * PI + 2e-3).is_hole_safe);
    }

    #[test]
    fn force_average_examples() {
        let vx = 12.0;
        let v2 = 30.0;
        // static: spatial part is V(pi/2) - V(0) = -V_x at each instant
        let stat = zero_force_average(&LatticeModulation::stationary(vx, v2, 2.0), 16);
        assert!((stat - (-vx * 2.0)).abs() < 1e-10);
        assert!(zero_force_average(&LatticeModulation::stationary(0.0, v2, 2.0), 16).abs() < 1e-10);
        assert!(zero_force_average(&LatticeModulation::mirrored(vx, v2, 2.0), 16).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dark_state_is_untouched(c1 in 0.0f64..3.0, c2 in 0.0f64..3.0, u in 0.1f64..3.0, t in 0.5f64..8.0) {
            let pulse = FnPulse(move |s: f64| c1 * (PI * s / t).sin().powi(2) + c2 * (2.0 * PI * s / t).sin().powi(2));
            let out = three_level_propagate(&pulse, u, t, &cfg(t)).unwrap();
            prop_assert!((out.dark_element.norm() - 1.0).abs() < 1e-8);
        }

        #[test]
        fn transfer_probability_is_sin_squared(j in 0.0f64..2.0, t in 0.1f64..5.0) {
            let rot = noninteracting_rotation(j * t);
            prop_assert!((rot[(1, 0)].norm_sqr() - (j * t).sin().powi(2)).abs() < 1e-12);
        }
    }
}

//! Gradient-based pulse design.
//!
//! The objective is the subspace fidelity
//! `F = (1/d) Re sum_n <psi_n| U_g^dagger U(T; x) |psi_n>` over `d` control
//! vectors. Its gradient is obtained without finite differences: each
//! `U_g psi_n` is carried backward to `t = 0`, then `psi_n`, the carried
//! vector `xi_n` and the accumulators
//! `df_{n,i}/dt = (1/d) Im <xi_n| dH/dx_i |psi_n>` are integrated forward
//! together on one RK4 grid, and `dF/dx_i = sum_n f_{n,i}(T)`.
//!
//! Pulses are built from `f_n(t) = sin^2(pi n t / T)` with nonnegative
//! weights. [`optimize`] minimises `E = sum c_n^2` subject to the fidelity
//! target and, optionally, `int J = 2 pi m`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{propagate_state, time_grid, Hamiltonian, IntegratorConfig, Rk4};
use crate::pulse::Pulse;

const ZERO: C64 = C64::new(0.0, 0.0);
const MINUS_I: C64 = C64::new(0.0, -1.0);

/// `sin^2(pi n t / T)` for `n >= 1`.
pub fn mode_function(n: usize, t: f64, duration: f64) -> f64 {
    (PI * n as f64 * t / duration).sin().powi(2)
}

/// `out[k] = f_{k+1}(t)`, using `sin^2(n a) = (1 - cos(2 n a)) / 2` and the
/// Chebyshev recurrence so only one cosine is evaluated.
pub fn mode_values(t: f64, duration: f64, out: &mut [f64]) {
    let c1 = (2.0 * PI * t / duration).cos();
    let (mut prev, mut cur) = (1.0, c1);
    for o in out.iter_mut() {
        *o = 0.5 * (1.0 - cur);
        let next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
    }
}

/// `J(t) = sum_n c_n f_n(t)` on `[0, T]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseAnsatz {
    pub coefficients: Vec<f64>,
    pub duration: f64,
}

impl PulseAnsatz {
    pub fn new(coefficients: Vec<f64>, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidArgument(format!("pulse duration must be positive, got {duration}")));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pulse coefficient".into()));
        }
        Ok(Self { coefficients, duration })
    }

    /// `c = (pi / T) e_1`, the single-mode pulse with `int J = pi / 2`.
    pub fn noninteracting_start(modes: usize, duration: f64) -> Self {
        let mut coefficients = vec![0.0; modes];
        if let Some(c) = coefficients.first_mut() {
            *c = PI / duration;
        }
        Self { coefficients, duration }
    }

    pub fn modes(&self) -> usize {
        self.coefficients.len()
    }

    /// `sum c_n^2`.
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    /// `int_0^T J = (T / 2) sum c_n`.
    pub fn area(&self) -> f64 {
        0.5 * self.duration * self.coefficients.iter().sum::<f64>()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coefficients.iter().all(|&c| c >= 0.0)
    }

    /// `dJ/dt`.
    pub fn slope(&self, t: f64) -> f64 {
        if !(0.0..=self.duration).contains(&t) {
            return 0.0;
        }
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = PI * (k + 1) as f64 / self.duration;
                c * w * (2.0 * w * t).sin()
            })
            .sum()
    }
}

impl Pulse for PulseAnsatz {
    fn value(&self, t: f64) -> f64 {
        if !(0.0..=self.duration).contains(&t) {
            return 0.0;
        }
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c * mode_function(k + 1, t, self.duration))
            .sum()
    }
}

/// `H(t; x)` together with its parameter derivatives.
pub trait ParametrizedHamiltonian: Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    /// `out = H(t; x) psi`.
    fn apply(&self, x: &[f64], t: f64, psi: &[C64], out: &mut [C64]);
    /// `out = dH/dx_i (t; x) psi`.
    fn apply_derivative(&self, x: &[f64], i: usize, t: f64, psi: &[C64], out: &mut [C64]);

    /// `out[i] = <bra| dH/dx_i |ket>` for every parameter.
    fn derivative_expectations(&self, x: &[f64], t: f64, bra: &[C64], ket: &[C64], out: &mut [C64]) {
        let mut tmp = vec![ZERO; ket.len()];
        for (i, o) in out.iter_mut().enumerate() {
            self.apply_derivative(x, i, t, ket, &mut tmp);
            *o = bra.iter().zip(&tmp).map(|(b, k)| b.conj() * k).sum();
        }
    }

    fn breakpoints(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Weights `a` with `int J = a . x`, when the parameters are pulse
    /// coefficients.
    fn area_weights(&self) -> Option<Vec<f64>> {
        None
    }
}

/// `H = H_0 + J(t) K` with `J` from the sine-squared ansatz.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzHamiltonian {
    drift: DMatrix<f64>,
    coupling: DMatrix<f64>,
    drift_entries: Vec<(usize, usize, f64)>,
    coupling_entries: Vec<(usize, usize, f64)>,
    duration: f64,
    modes: usize,
}

fn nonzeros(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

impl AnsatzHamiltonian {
    pub fn new(drift: DMatrix<f64>, coupling: DMatrix<f64>, duration: f64, modes: usize) -> Result<Self> {
        let d = drift.nrows();
        if drift.ncols() != d || coupling.shape() != (d, d) {
            return Err(Error::InvalidArgument("drift and coupling must be square and of equal size".into()));
        }
        if drift != drift.transpose() || coupling != coupling.transpose() {
            return Err(Error::InvalidArgument("drift and coupling must be symmetric".into()));
        }
        if !(duration > 0.0) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        Ok(Self {
            drift_entries: nonzeros(&drift),
            coupling_entries: nonzeros(&coupling),
            drift,
            coupling,
            duration,
            modes,
        })
    }

    /// The three-level swap model with interaction `U`.
    pub fn three_level(interaction: f64, duration: f64, modes: usize) -> Self {
        let mut drift = DMatrix::zeros(3, 3);
        drift[(2, 2)] = interaction;
        let coupling = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0, -2.0, 0.0]);
        Self::new(drift, coupling, duration, modes).expect("valid three-level model")
    }

    /// One particle on two sites, `H = -J(t) sigma_x`.
    pub fn two_site(duration: f64, modes: usize) -> Self {
        let coupling = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        Self::new(DMatrix::zeros(2, 2), coupling, duration, modes).expect("valid two-site model")
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.drift.clone(), self.coupling.clone(), duration, self.modes)
    }

    fn hopping(&self, x: &[f64], t: f64) -> f64 {
        let mut f = [0.0; 16];
        if x.len() <= f.len() {
            mode_values(t, self.duration, &mut f[..x.len()]);
            x.iter().zip(&f).map(|(c, v)| c * v).sum()
        } else {
            x.iter().enumerate().map(|(k, c)| c * mode_function(k + 1, t, self.duration)).sum()
        }
    }
}

fn sparse_apply(entries: &[(usize, usize, f64)], scale: f64, psi: &[C64], out: &mut [C64]) {
    for &(i, j, v) in entries {
        out[i] += psi[j] * (v * scale);
    }
}

impl ParametrizedHamiltonian for AnsatzHamiltonian {
    fn dim(&self) -> usize {
        self.drift.nrows()
    }

    fn n_params(&self) -> usize {
        self.modes
    }

    fn apply(&self, x: &[f64], t: f64, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        sparse_apply(&self.drift_entries, 1.0, psi, out);
        sparse_apply(&self.coupling_entries, self.hopping(x, t), psi, out);
    }

    fn apply_derivative(&self, _x: &[f64], i: usize, t: f64, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        sparse_apply(&self.coupling_entries, mode_function(i + 1, t, self.duration), psi, out);
    }

    fn derivative_expectations(&self, _x: &[f64], t: f64, bra: &[C64], ket: &[C64], out: &mut [C64]) {
        // <bra|K|ket>, then scaled by each mode
        let base: C64 = self.coupling_entries.iter().map(|&(i, j, v)| bra[i].conj() * ket[j] * v).sum();
        let c1 = (2.0 * PI * t / self.duration).cos();
        let (mut prev, mut cur) = (1.0, c1);
        for o in out.iter_mut() {
            *o = base * (0.5 * (1.0 - cur));
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
    }

    fn area_weights(&self) -> Option<Vec<f64>> {
        Some(vec![0.5 * self.duration; self.modes])
    }
}

/// `H(t; x)` at fixed parameters, as a plain Hamiltonian.
struct Bound<'a, H: ?Sized> {
    h: &'a H,
    x: &'a [f64],
}

impl<H: ParametrizedHamiltonian + ?Sized> Hamiltonian for Bound<'_, H> {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        self.h.apply(self.x, t, psi, out);
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.h.breakpoints(self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConstraints {
    /// Required fidelity of a returned pulse.
    pub fidelity_target: f64,
    pub nonnegative: bool,
    /// Integer `m` in `int J = 2 pi m`.
    pub hole_phase: Option<i64>,
}

impl Default for ControlConstraints {
    fn default() -> Self {
        Self { fidelity_target: 1.0 - 1e-4, nonnegative: true, hole_phase: None }
    }
}

pub struct ControlProblem<H> {
    pub hamiltonian: H,
    pub target: DMatrix<C64>,
    pub control_basis: Vec<Vec<C64>>,
    pub duration: f64,
    pub integrator: IntegratorConfig,
    pub constraints: ControlConstraints,
}

impl<H: ParametrizedHamiltonian> ControlProblem<H> {
    pub fn new(
        hamiltonian: H,
        target: DMatrix<C64>,
        control_basis: Vec<Vec<C64>>,
        duration: f64,
        integrator: IntegratorConfig,
        constraints: ControlConstraints,
    ) -> Result<Self> {
        let d = hamiltonian.dim();
        if target.nrows() != d || target.ncols() != d {
            return Err(Error::InvalidArgument(format!("target must be {d}x{d}")));
        }
        let defect = crate::propagator::unitarity_defect(&target);
        if defect > 1e-12 {
            return Err(Error::InvalidArgument(format!("target is not unitary (defect {defect:e})")));
        }
        if control_basis.is_empty() {
            return Err(Error::InvalidArgument("control basis is empty".into()));
        }
        for (a, u) in control_basis.iter().enumerate() {
            if u.len() != d {
                return Err(Error::BasisMismatch(format!("control vector {a} has length {}", u.len())));
            }
            for (b, v) in control_basis.iter().enumerate() {
                let ip: C64 = u.iter().zip(v).map(|(p, q)| p.conj() * q).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (ip - C64::new(expect, 0.0)).norm() > 1e-12 {
                    return Err(Error::InvalidArgument("control basis is not orthonormal".into()));
                }
            }
        }
        if !(duration > 0.0) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        Ok(Self { hamiltonian, target, control_basis, duration, integrator, constraints })
    }

    pub fn n_params(&self) -> usize {
        self.hamiltonian.n_params()
    }

    fn check_params(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    fn targets(&self) -> Vec<Vec<C64>> {
        self.control_basis
            .iter()
            .map(|psi| {
                (0..self.target.nrows())
                    .map(|i| (0..psi.len()).map(|j| self.target[(i, j)] * psi[j]).sum())
                    .collect()
            })
            .collect()
    }
}

impl ControlProblem<AnsatzHamiltonian> {
    /// Swap of two interacting particles in a double well: on the controlled
    /// subspace `{psi-, psi+}` the target is `diag(1, -1)`; the doublon phase
    /// is left free.
    pub fn three_level_swap(interaction: f64, duration: f64, modes: usize) -> Result<Self> {
        let one = C64::new(1.0, 0.0);
        let mut target = DMatrix::identity(3, 3);
        target[(1, 1)] = -one;
        let basis = vec![vec![one, ZERO, ZERO], vec![ZERO, one, ZERO]];
        Self::new(
            AnsatzHamiltonian::three_level(interaction, duration, modes),
            target,
            basis,
            duration,
            IntegratorConfig::for_half_period(duration),
            ControlConstraints::default(),
        )
    }

    /// The same controls over a different duration, with the modes stretched
    /// to fit.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        let hamiltonian = self.hamiltonian.with_duration(duration)?;
        let mut integrator = self.integrator.clone();
        integrator.dt *= duration / self.duration;
        Self::new(
            hamiltonian,
            self.target.clone(),
            self.control_basis.clone(),
            duration,
            integrator,
            self.constraints.clone(),
        )
    }
}

/// Subspace fidelity at parameters `x`.
pub fn fidelity<H: ParametrizedHamiltonian>(problem: &ControlProblem<H>, x: &[f64]) -> Result<f64> {
    problem.check_params(x)?;
    let bound = Bound { h: &problem.hamiltonian, x };
    let cfg = IntegratorConfig { record_every: 0, ..problem.integrator.clone() };
    let d = problem.control_basis.len() as f64;
    let overlaps: Vec<f64> = problem
        .control_basis
        .par_iter()
        .zip(problem.targets().par_iter())
        .map(|(psi, tgt)| {
            let out = propagate_state(&bound, psi, 0.0, problem.duration, &cfg)?.into_final_state();
            Ok(tgt.iter().zip(&out).map(|(a, b)| a.conj() * b).sum::<C64>().re)
        })
        .collect::<Result<_>>()?;
    Ok(overlaps.iter().sum::<f64>() / d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientResult {
    pub fidelity: f64,
    pub gradient: Vec<f64>,
    /// `f_{n,i}(T)`, one row per control vector.
    pub contributions: Vec<Vec<f64>>,
}

/// Fidelity and its exact gradient.
pub fn gradient<H: ParametrizedHamiltonian>(problem: &ControlProblem<H>, x: &[f64]) -> Result<GradientResult> {
    problem.check_params(x)?;
    let h = &problem.hamiltonian;
    let bound = Bound { h, x };
    let cfg = IntegratorConfig { record_every: 0, ..problem.integrator.clone() };
    let dim = h.dim();
    let p = h.n_params();
    let d = problem.control_basis.len() as f64;
    let t_end = problem.duration;
    let grid = time_grid(0.0, t_end, cfg.dt, &h.breakpoints(x));

    let per_vector: Vec<(f64, Vec<f64>)> = problem
        .control_basis
        .par_iter()
        .zip(problem.targets().par_iter())
        .map(|(psi, tgt)| {
            let xi0 = propagate_state(&bound, tgt, t_end, 0.0, &cfg)?.into_final_state();

            let mut y = Vec::with_capacity(2 * dim + p);
            y.extend_from_slice(psi);
            y.extend_from_slice(&xi0);
            y.extend(std::iter::repeat(ZERO).take(p));
            let mut rk = Rk4::new(y.len());
            let mut expect = vec![ZERO; p];
            let mut deriv = |t: f64, v: &[C64], dv: &mut [C64]| {
                let (vp, vx) = v[..2 * dim].split_at(dim);
                let (dp, rest) = dv.split_at_mut(dim);
                let (dx, df) = rest.split_at_mut(dim);
                h.apply(x, t, vp, dp);
                h.apply(x, t, vx, dx);
                dp.iter_mut().chain(dx.iter_mut()).for_each(|z| *z *= MINUS_I);
                h.derivative_expectations(x, t, vx, vp, &mut expect);
                for (o, e) in df.iter_mut().zip(&expect) {
                    *o = C64::new(e.im / d, 0.0);
                }
            };
            for seg in &grid {
                let step = seg.step();
                for k in 0..seg.steps {
                    rk.step(&mut y, seg.start + k as f64 * step, step, seg, &mut deriv);
                }
                if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::NonFinite { time: seg.end });
                }
            }
            let overlap = tgt.iter().zip(&y[..dim]).map(|(a, b)| a.conj() * b).sum::<C64>().re / d;
            Ok((overlap, y[2 * dim..].iter().map(|z| z.re).collect()))
        })
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; p];
    for (_, f) in &per_vector {
        for (g, v) in grad.iter_mut().zip(f) {
            *g += v;
        }
    }
    Ok(GradientResult {
        fidelity: per_vector.iter().map(|(o, _)| o).sum(),
        gradient: grad,
        contributions: per_vector.into_iter().map(|(_, f)| f).collect(),
    })
}

/// Absolute scale below which gradient components are compared absolutely.
pub const FD_SCALE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdEntry {
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub step: f64,
    pub entries: Vec<FdEntry>,
    pub max_relative_error: f64,
}

/// `1e-6 |x|`, or `1e-6` at the origin.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        1e-6 * n
    } else {
        1e-6
    }
}

/// Compares a supplied gradient with central differences of the fidelity.
///
/// Each component's error is `|g - fd| / max(|g|, |fd|, FD_SCALE_FLOOR)`.
pub fn compare_with_finite_differences<H: ParametrizedHamiltonian>(
    problem: &ControlProblem<H>,
    x: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<FdReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    if analytic.len() != x.len() {
        return Err(Error::InvalidArgument("gradient length does not match parameters".into()));
    }
    let entries = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            let numeric = (fidelity(problem, &xp)? - fidelity(problem, &xm)?) / (2.0 * step);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs()).max(FD_SCALE_FLOOR);
            Ok(FdEntry { analytic: a, numeric, relative_error: (a - numeric).abs() / scale })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(FdReport { step, entries, max_relative_error })
}

pub fn finite_difference_check<H: ParametrizedHamiltonian>(
    problem: &ControlProblem<H>,
    x: &[f64],
    step: f64,
) -> Result<FdReport> {
    if x.is_empty() {
        problem.check_params(x)?;
        return Ok(FdReport { step, entries: Vec::new(), max_relative_error: 0.0 });
    }
    let g = gradient(problem, x)?;
    compare_with_finite_differences(problem, x, &g.gradient, step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Starting point of the first run; defaults to the noninteracting pulse.
    pub x0: Option<Vec<f64>>,
    /// Additional randomised starts.
    pub restarts: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// `1 - F` is driven below this value; smaller than the acceptance gap so
    /// returned pulses clear the target with margin.
    pub infidelity_goal: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { x0: None, restarts: 8, seed: 0, max_outer: 25, max_inner: 100, infidelity_goal: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub iteration: usize,
    pub fidelity: f64,
    pub energy: f64,
    /// Augmented-Lagrangian merit under the current multipliers.
    pub merit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub start: Vec<f64>,
    pub x: Vec<f64>,
    pub fidelity: f64,
    pub energy: f64,
    pub feasible: bool,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub fidelity: f64,
    pub energy: f64,
    pub area: Option<f64>,
    /// Index of the run that produced `x` (0 is the default start).
    pub run: usize,
    pub seed: u64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibleDiagnosis {
    pub best_x: Vec<f64>,
    pub best_fidelity: f64,
    pub required_fidelity: f64,
    pub runs: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum OptimizeOutcome {
    Solved(Solution),
    Infeasible(InfeasibleDiagnosis),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub outcome: OptimizeOutcome,
    pub runs: Vec<RunSummary>,
}

struct Merit<'a, H> {
    problem: &'a ControlProblem<H>,
    weights: Option<Vec<f64>>,
    area_target: f64,
    eps: f64,
    lambda: f64,
    mu: f64,
    rho: f64,
}

struct Point {
    x: Vec<f64>,
    merit: f64,
    fidelity: f64,
    energy: f64,
    area_residual: f64,
    grad: Vec<f64>,
}

impl<H: ParametrizedHamiltonian> Merit<'_, H> {
    fn residual(&self, x: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() - self.area_target,
            None => 0.0,
        }
    }

    fn value(&self, x: &[f64], f: f64) -> (f64, f64, f64) {
        let energy: f64 = x.iter().map(|c| c * c).sum();
        let g = 1.0 - f - self.eps;
        let h = self.residual(x);
        let shifted = (self.lambda + self.rho * g).max(0.0);
        let merit = energy + (shifted * shifted - self.lambda * self.lambda) / (2.0 * self.rho)
            + self.mu * h
            + 0.5 * self.rho * h * h;
        (merit, energy, h)
    }

    /// Merit at a trial point; points the integrator cannot resolve count as
    /// infinitely bad so that the line search backs off.
    fn eval(&self, x: &[f64]) -> Result<f64> {
        match fidelity(self.problem, x) {
            Ok(f) => Ok(self.value(x, f).0),
            Err(Error::NormDrift { .. } | Error::NonFinite { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    fn eval_grad(&self, x: Vec<f64>) -> Result<Point> {
        let gr = gradient(self.problem, &x)?;
        let f = gr.fidelity;
        let (merit, energy, h) = self.value(&x, f);
        let shifted = (self.lambda + self.rho * (1.0 - f - self.eps)).max(0.0);
        let mut grad: Vec<f64> = x.iter().zip(&gr.gradient).map(|(c, df)| 2.0 * c - shifted * df).collect();
        if let Some(w) = &self.weights {
            let k = self.mu + self.rho * h;
            grad.iter_mut().zip(w).for_each(|(g, a)| *g += k * a);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { time: self.problem.duration });
        }
        Ok(Point { x, merit, fidelity: f, energy, area_residual: h, grad })
    }
}

fn project(x: &mut [f64], nonnegative: bool) {
    if nonnegative {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Two-metric projected gradient: a BFGS-scaled step on the free
/// coordinates, a plain gradient step on coordinates held at zero, then
/// projection onto `c >= 0` and monotone Armijo backtracking on the merit.
fn inner_solve<H: ParametrizedHamiltonian>(
    merit: &Merit<'_, H>,
    start: Vec<f64>,
    outer: usize,
    max_inner: usize,
    tolerance: f64,
    trace: &mut Vec<TraceEntry>,
) -> Result<Point> {
    let nonneg = merit.problem.constraints.nonnegative;
    let mut pt = merit.eval_grad(start)?;
    let n = pt.x.len();
    let scale = inf_norm(&pt.x).max(PI / merit.problem.duration);
    let gamma0 = (0.1 * scale / inf_norm(&pt.grad).max(1e-12)).min(1e3);
    let mut hinv = DMatrix::<f64>::identity(n, n) * gamma0;
    trace.push(TraceEntry { outer, iteration: 0, fidelity: pt.fidelity, energy: pt.energy, merit: pt.merit });

    for it in 1..=max_inner {
        let mut pg: Vec<f64> = pt.x.iter().zip(&pt.grad).map(|(x, g)| x - g).collect();
        project(&mut pg, nonneg);
        let pg_norm = pg.iter().zip(&pt.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if pg_norm <= tolerance * scale.max(1.0) {
            break;
        }
        let eps_active = pg_norm.min(1e-3 * scale);
        let active: Vec<bool> = (0..n).map(|i| nonneg && pt.x[i] <= eps_active && pt.grad[i] > 0.0).collect();
        let mut dir = vec![0.0; n];
        for i in 0..n {
            dir[i] = if active[i] {
                -hinv[(i, i)] * pt.grad[i]
            } else {
                -(0..n).filter(|&j| !active[j]).map(|j| hinv[(i, j)] * pt.grad[j]).sum::<f64>()
            };
        }
        if dir.iter().zip(&pt.grad).map(|(d, g)| d * g).sum::<f64>() >= 0.0 {
            let gamma = hinv.diagonal().max().max(1e-12);
            hinv = DMatrix::identity(n, n) * gamma;
            dir = pt.grad.iter().map(|g| -gamma * g).collect();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = pt.x.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect();
            project(&mut trial, nonneg);
            let decrease: f64 = pt.grad.iter().zip(trial.iter().zip(&pt.x)).map(|(g, (a, b))| g * (a - b)).sum();
            if decrease < 0.0 && merit.eval(&trial)? <= pt.merit + 1e-4 * decrease {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(trial) = accepted else { break };
        let next = merit.eval_grad(trial)?;
        let s = nalgebra::DVector::from_iterator(n, next.x.iter().zip(&pt.x).map(|(a, b)| a - b));
        let y = nalgebra::DVector::from_iterator(n, next.grad.iter().zip(&pt.grad).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // inverse BFGS update
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let stalled = s.amax() <= 1e-14 * scale;
        pt = next;
        trace.push(TraceEntry { outer, iteration: it, fidelity: pt.fidelity, energy: pt.energy, merit: pt.merit });
        if stalled {
            break;
        }
    }
    Ok(pt)
}

fn single_run<H: ParametrizedHamiltonian>(
    problem: &ControlProblem<H>,
    start: Vec<f64>,
    opts: &OptimizeOptions,
) -> Result<RunSummary> {
    let weights = match problem.constraints.hole_phase {
        Some(_) => Some(problem.hamiltonian.area_weights().ok_or_else(|| {
            Error::InvalidArgument("hole-phase constraint needs a pulse-coefficient parametrisation".into())
        })?),
        None => None,
    };
    let area_target = 2.0 * PI * problem.constraints.hole_phase.unwrap_or(0) as f64;
    let mut merit = Merit { problem, weights, area_target, eps: opts.infidelity_goal, lambda: 0.0, mu: 0.0, rho: 1e3 };
    let mut x = start.clone();
    project(&mut x, problem.constraints.nonnegative);
    let mut trace = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut prev_energy = f64::INFINITY;
    let mut prev_fidelity = f64::NEG_INFINITY;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut last = (x.clone(), f64::NEG_INFINITY, f64::INFINITY);

    for outer in 0..opts.max_outer {
        // loose inner solves while the multipliers are still far off
        let tolerance = (1e-2 * 0.1f64.powi(outer as i32)).max(1e-6);
        let pt = inner_solve(&merit, x, outer, opts.max_inner, tolerance, &mut trace)?;
        let g = 1.0 - pt.fidelity - merit.eps;
        let h = pt.area_residual;
        let feasible = pt.fidelity >= problem.constraints.fidelity_target && h.abs() <= crate::analytic::HOLE_PHASE_TOLERANCE;
        if feasible && best.as_ref().is_none_or(|b| pt.energy < b.0) {
            best = Some((pt.energy, pt.x.clone(), pt.fidelity));
        }
        last = (pt.x.clone(), pt.fidelity, pt.energy);

        let violation = g.max(0.0) + h.abs();
        merit.lambda = (merit.lambda + merit.rho * g).max(0.0);
        merit.mu += merit.rho * h;
        if violation > 1e-8 && violation > 0.25 * prev_violation {
            merit.rho = (merit.rho * 10.0).min(1e6);
        }
        let settled = (pt.energy - prev_energy).abs() <= 1e-4 * pt.energy.max(1e-3);
        // a heavily penalised run whose fidelity no longer moves sits at a
        // local maximum of F below the target
        let stuck = !feasible && merit.rho >= 1e4 && pt.fidelity - prev_fidelity < 1e-7;
        prev_violation = violation;
        prev_energy = pt.energy;
        prev_fidelity = pt.fidelity;
        x = pt.x;
        if (feasible && settled) || stuck {
            break;
        }
    }
    let (x, fidelity, energy, feasible) = match best {
        Some((e, x, f)) => (x, f, e, true),
        None => (last.0, last.1, last.2, false),
    };
    Ok(RunSummary { start, x, fidelity, energy, feasible, trace })
}

/// Deterministic starting points: the supplied or default start, then
/// `restarts` uniform draws seeded from `seed + k`.
pub fn starting_points(modes: usize, duration: f64, opts: &OptimizeOptions) -> Vec<Vec<f64>> {
    let first = opts
        .x0
        .clone()
        .unwrap_or_else(|| PulseAnsatz::noninteracting_start(modes, duration).coefficients);
    let hi = 3.0 * PI / duration;
    let mut out = vec![first];
    for k in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        out.push((0..modes).map(|_| rng.gen_range(0.0..hi)).collect());
    }
    out
}

/// Minimises the pulse energy subject to the fidelity target and constraints.
///
/// Runs from every starting point in parallel and keeps the feasible result
/// of least energy (lowest run index on ties). When no run is feasible the
/// best fidelity seen is reported instead.
pub fn optimize<H: ParametrizedHamiltonian>(
    problem: &ControlProblem<H>,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    let m = problem.n_params();
    if m == 0 {
        return Err(Error::InvalidArgument("at least one pulse mode required".into()));
    }
    if let Some(x0) = &opts.x0 {
        problem.check_params(x0)?;
    }
    let starts = starting_points(m, problem.duration, opts);
    let runs: Vec<RunSummary> = starts
        .into_par_iter()
        .map(|s| single_run(problem, s, opts))
        .collect::<Result<_>>()?;

    let best_feasible = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(a.0.cmp(&b.0)));
    let outcome = match best_feasible {
        Some((k, r)) => OptimizeOutcome::Solved(Solution {
            x: r.x.clone(),
            fidelity: r.fidelity,
            energy: r.energy,
            area: problem.hamiltonian.area_weights().map(|w| w.iter().zip(&r.x).map(|(a, c)| a * c).sum()),
            run: k,
            seed: opts.seed,
            trace: r.trace.clone(),
        }),
        None => {
            let (_, r) = runs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.fidelity.total_cmp(&b.1.fidelity).then(b.0.cmp(&a.0)))
                .expect("at least one run");
            OptimizeOutcome::Infeasible(InfeasibleDiagnosis {
                best_x: r.x.clone(),
                best_fidelity: r.fidelity,
                required_fidelity: problem.constraints.fidelity_target,
                runs: runs.len(),
                seed: opts.seed,
                message: format!(
                    "no run reached F >= {}; best F = {:.6}",
                    problem.constraints.fidelity_target, r.fidelity
                ),
            })
        }
    };
    Ok(OptimizeReport { outcome, runs })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: f64 = 2.0;

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    /// One particle on two sites, both site states controlled.
    fn two_site(target: DMatrix<C64>, modes: usize) -> ControlProblem<AnsatzHamiltonian> {
        let basis = vec![vec![one(), ZERO], vec![ZERO, one()]];
        ControlProblem::new(
            AnsatzHamiltonian::two_site(T, modes),
            target,
            basis,
            T,
            IntegratorConfig::for_half_period(T),
            ControlConstraints::default(),
        )
        .unwrap()
    }

    fn i_sigma_x() -> DMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        DMatrix::from_row_slice(2, 2, &[ZERO, i, i, ZERO])
    }

    #[test]
    fn mode_values_match_direct_evaluation() {
        let mut v = [0.0; 6];
        for &t in &[0.0, 0.3, 1.1, 1.999] {
            mode_values(t, T, &mut v);
            for (k, x) in v.iter().enumerate() {
                assert!((x - mode_function(k + 1, t, T)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ansatz_vanishes_smoothly_at_the_ends() {
        let p = PulseAnsatz::new(vec![0.7, 0.2, 1.3], T).unwrap();
        for t in [0.0, T] {
            assert!(p.value(t).abs() < 1e-12);
            assert!(p.slope(t).abs() < 1e-12);
        }
        assert_eq!(p.value(-0.1), 0.0);
        assert_eq!(p.value(T + 0.1), 0.0);
        let area = crate::pulse::pulse_area(&p, 0.0, T, 64);
        assert!((area - p.area()).abs() < 1e-12);
        assert!((p.energy() - (0.49 + 0.04 + 1.69)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(PulseAnsatz::new(vec![1.0], 0.0).is_err());
        assert!(PulseAnsatz::new(vec![f64::NAN], 1.0).is_err());
        let p = two_site(DMatrix::identity(2, 2), 1);
        assert!(fidelity(&p, &[1.0, 2.0]).is_err());
        assert!(gradient(&p, &[f64::INFINITY]).is_err());
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 0)] = C64::new(2.0, 0.0);
        let r = ControlProblem::new(
            AnsatzHamiltonian::two_site(T, 1),
            bad,
            vec![vec![one(), ZERO]],
            T,
            IntegratorConfig::for_half_period(T),
            ControlConstraints::default(),
        );
        assert!(r.is_err());
        let skewed = vec![vec![one(), ZERO], vec![one(), ZERO]];
        let r = ControlProblem::new(
            AnsatzHamiltonian::two_site(T, 1),
            DMatrix::identity(2, 2),
            skewed,
            T,
            IntegratorConfig::for_half_period(T),
            ControlConstraints::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn idle_evolution_has_unit_fidelity_on_identity() {
        let h = AnsatzHamiltonian::three_level(0.0, T, 3);
        let basis = vec![vec![one(), ZERO, ZERO], vec![ZERO, one(), ZERO]];
        let p = ControlProblem::new(
            h,
            DMatrix::identity(3, 3),
            basis,
            T,
            IntegratorConfig::for_half_period(T),
            ControlConstraints::default(),
        )
        .unwrap();
        assert!((fidelity(&p, &[0.0; 3]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_site_fidelity_and_gradient_match_closed_form() {
        let p = two_site(DMatrix::identity(2, 2), 1);
        for c in [0.1, 0.8, 1.9, 2.7] {
            let theta = c * T / 2.0;
            let g = gradient(&p, &[c]).unwrap();
            assert!((g.fidelity - theta.cos()).abs() < 1e-9, "c = {c}");
            assert!((g.gradient[0] + theta.sin() * T / 2.0).abs() < 1e-8, "c = {c}");
            assert!((fidelity(&p, &[c]).unwrap() - g.fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_stationary_point() {
        // theta = pi: F = -1 is a minimum over the single mode
        let p = two_site(DMatrix::identity(2, 2), 2);
        let c = PI / T;
        let g = gradient(&p, &[c, c]).unwrap();
        assert!((g.fidelity + 1.0).abs() < 1e-9);
        assert!(g.gradient.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn contributions_sum_to_gradient() {
        let p = ControlProblem::three_level_swap(1.0, 2.0 * PI, 3).unwrap();
        let g = gradient(&p, &[0.3, 0.1, 0.4]).unwrap();
        for i in 0..3 {
            let s: f64 = g.contributions.iter().map(|r| r[i]).sum();
            assert!((s - g.gradient[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_difference_error_is_second_order_in_step() {
        let p = ControlProblem::three_level_swap(1.0, 2.0 * PI, 2).unwrap();
        let x = [0.4, 0.3];
        let g = gradient(&p, &x).unwrap();
        let coarse = compare_with_finite_differences(&p, &x, &g.gradient, 0.1).unwrap();
        let fine = compare_with_finite_differences(&p, &x, &g.gradient, 0.05).unwrap();
        let ratio = coarse.max_relative_error / fine.max_relative_error;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn empty_parameter_set_gives_empty_report() {
        let p = ControlProblem::three_level_swap(1.0, 2.0 * PI, 0).unwrap();
        let r = finite_difference_check(&p, &[], 1e-6).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.max_relative_error, 0.0);
        assert!(optimize(&p, &OptimizeOptions::default()).is_err());
    }

    #[test]
    fn stretched_problem_rescales_the_grid() {
        let p = ControlProblem::three_level_swap(1.0, 2.0 * PI, 2).unwrap();
        let q = p.with_duration(4.0 * PI).unwrap();
        assert!((q.integrator.dt - 2.0 * p.integrator.dt).abs() < 1e-15);
        assert_eq!(q.hamiltonian.duration(), 4.0 * PI);
    }

    #[test]
    fn starting_points_are_deterministic_and_in_range() {
        let opts = OptimizeOptions { restarts: 5, seed: 11, ..Default::default() };
        let a = starting_points(3, T, &opts);
        assert_eq!(a, starting_points(3, T, &opts));
        assert_eq!(a.len(), 6);
        assert_eq!(a[0], vec![PI / T, 0.0, 0.0]);
        assert!(a[1..].iter().flatten().all(|&c| (0.0..3.0 * PI / T).contains(&c)));
        let other = starting_points(3, T, &OptimizeOptions { seed: 12, ..opts });
        assert_ne!(a[1], other[1]);
    }

    #[test]
    fn minimal_energy_transfer_splits_area_evenly() {
        // every mode contributes T/2 to the area, so the cheapest pulse with
        // int J = theta spreads it equally: E = (2 theta / T)^2 / M, where
        // F = cos(pi/2 - theta) may sit anywhere above the target
        let p = two_site(i_sigma_x(), 2);
        let opts = OptimizeOptions { restarts: 2, ..Default::default() };
        let report = optimize(&p, &opts).unwrap();
        let OptimizeOutcome::Solved(s) = &report.outcome else { panic!("{:?}", report.outcome) };
        assert!(s.fidelity >= 1.0 - 1e-4);
        let theta = PI / 2.0 - s.fidelity.min(1.0).acos();
        let expect = (2.0 * theta / T).powi(2) / 2.0;
        assert!((s.energy - expect).abs() < 1e-3 * expect, "E = {} vs {expect}", s.energy);
        assert!(s.energy < PI * PI / (2.0 * T * T));
        assert!((s.x[0] - s.x[1]).abs() < 1e-2 * s.x[0]);
        assert!(s.x.iter().all(|&c| c >= 0.0));

        // merit is monotone within each outer iteration
        for run in &report.runs {
            for w in run.trace.windows(2) {
                if w[0].outer == w[1].outer {
                    assert!(w[1].merit <= w[0].merit + 1e-12);
                }
            }
        }
        assert_eq!(optimize(&p, &opts).unwrap(), report);
    }

    #[test]
    fn area_constraint_is_enforced() {
        let mut p = two_site(DMatrix::identity(2, 2), 2);
        p.constraints.hole_phase = Some(1);
        let report = optimize(&p, &OptimizeOptions { restarts: 1, ..Default::default() }).unwrap();
        let OptimizeOutcome::Solved(s) = &report.outcome else { panic!("{:?}", report.outcome) };
        assert!((s.area.unwrap() - 2.0 * PI).abs() <= crate::analytic::HOLE_PHASE_TOLERANCE);
        let expect = (4.0 * PI / T).powi(2) / 2.0;
        assert!((s.energy - expect).abs() < 1e-3 * expect);
    }

    #[test]
    fn unreachable_target_is_reported_infeasible() {
        let mut p = two_site(i_sigma_x(), 1);
        p.constraints.hole_phase = Some(0);
        let report = optimize(&p, &OptimizeOptions { restarts: 1, ..Default::default() }).unwrap();
        let OptimizeOutcome::Infeasible(d) = &report.outcome else { panic!("{:?}", report.outcome) };
        assert!(d.best_fidelity < 0.5);
        assert_eq!(d.runs, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn gradient_agrees_with_finite_differences(
            x in proptest::collection::vec(0.0f64..1.5, 3),
            u in 0.2f64..3.0,
        ) {
            let p = ControlProblem::three_level_swap(u, 2.0 * PI, 3).unwrap();
            let r = finite_difference_check(&p, &x, default_fd_step(&x)).unwrap();
            prop_assert!(r.max_relative_error < 1e-4, "{:?}", r);
        }

        #[test]
        fn fidelity_is_bounded(x in proptest::collection::vec(0.0f64..3.0, 2)) {
            let p = ControlProblem::three_level_swap(1.0, PI, 2).unwrap();
            let f = fidelity(&p, &x).unwrap();
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&f));
        }
    }
}

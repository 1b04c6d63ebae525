//! Fixed-step RK4 integration of `i d/dt psi = H(t) psi` (hbar = 1).
//!
//! Step boundaries are aligned with the Hamiltonian's breakpoints so that
//! piecewise-constant pulses never straddle a step. Integration backwards in
//! time (`t1 < t0`) uses the same machinery with a negative step.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::segment_edges;

const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// A (possibly time-dependent) Hamiltonian acting on complex vectors.
pub trait Hamiltonian: Sync {
    fn dim(&self) -> usize;

    /// Writes `H(t) psi` into `out`, overwriting it.
    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]);

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Upper bound on the operator norm at time `t`, when cheaply available.
    fn norm_estimate(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Time-independent dense Hamiltonian.
#[derive(Debug, Clone)]
pub struct DenseHamiltonian(pub DMatrix<C64>);

impl DenseHamiltonian {
    pub fn from_real(m: &DMatrix<f64>) -> Self {
        Self(m.map(|x| C64::new(x, 0.0)))
    }
}

impl Hamiltonian for DenseHamiltonian {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, _t: f64, psi: &[C64], out: &mut [C64]) {
        dense_apply(&self.0, psi, out);
    }

    fn norm_estimate(&self, _t: f64) -> Option<f64> {
        Some(self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }
}

/// Dense Hamiltonian built from a closure at every evaluation. Meant for
/// small systems and tests.
pub struct FnHamiltonian<F> {
    pub dim: usize,
    pub matrix: F,
    pub breakpoints: Vec<f64>,
}

impl<F> Hamiltonian for FnHamiltonian<F>
where
    F: Fn(f64) -> DMatrix<C64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        dense_apply(&(self.matrix)(t), psi, out);
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

pub(crate) fn dense_apply(m: &DMatrix<C64>, psi: &[C64], out: &mut [C64]) {
    let n = m.nrows();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = C64::new(0.0, 0.0);
        for (j, p) in psi.iter().enumerate() {
            acc += m[(i, j)] * p;
        }
        *o = acc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Maximum step size; actual steps are shortened to tile each segment.
    pub dt: f64,
    pub renormalize: bool,
    pub norm_tol: f64,
    /// Record a sample every this many steps; 0 keeps only the endpoints.
    pub record_every: usize,
}

impl IntegratorConfig {
    pub const DEFAULT_NORM_TOL: f64 = 1e-7;
    pub const STEPS_PER_HALF_PERIOD: usize = 2000;

    pub fn with_dt(dt: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            renormalize: false,
            norm_tol: Self::DEFAULT_NORM_TOL,
            record_every: 0,
        }
    }

    /// Default resolution of 2000 steps per half-period `T`.
    pub fn for_half_period(half_period: f64) -> Self {
        Self::with_dt(half_period / Self::STEPS_PER_HALF_PERIOD as f64)
    }

    pub fn recording(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.norm_tol > 0.0) {
            return Err(Error::InvalidArgument("norm_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PropagationRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<C64>>,
    /// Largest relative deviation of the norm from its initial value.
    pub norm_drift: f64,
}

impl PropagationRecord {
    pub fn final_state(&self) -> &[C64] {
        self.states.last().expect("record always holds the initial state")
    }

    pub fn into_final_state(mut self) -> Vec<C64> {
        self.states.pop().expect("record always holds the initial state")
    }
}

/// One integration segment: from `start` to `end` in `steps` equal steps.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl Segment {
    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    /// Clamps a stage time into the open segment so that discontinuous
    /// Hamiltonians are sampled from the correct side.
    pub fn stage_time(&self, t: f64) -> f64 {
        let (lo, hi) = if self.start <= self.end {
            (self.start, self.end)
        } else {
            (self.end, self.start)
        };
        let delta = 1e-9 * (hi - lo);
        t.clamp(lo + delta, hi - delta)
    }
}

/// Splits `[t0, t1]` (either orientation) at breakpoints and picks step
/// counts so that no step exceeds `dt`.
pub(crate) fn time_grid(t0: f64, t1: f64, dt: f64, breakpoints: &[f64]) -> Vec<Segment> {
    if t0 == t1 {
        return Vec::new();
    }
    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    let mut edges = segment_edges(lo, hi, breakpoints);
    if t1 < t0 {
        edges.reverse();
    }
    edges
        .windows(2)
        .map(|w| {
            let len = (w[1] - w[0]).abs();
            let steps = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
            Segment { start: w[0], end: w[1], steps }
        })
        .collect()
}

/// Classical RK4 stepper for `dy/dt = f(t, y)` over complex vectors, with
/// preallocated stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    pub fn step<F>(&mut self, y: &mut [C64], t: f64, h: f64, seg: &Segment, f: &mut F)
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        let Self { k1, k2, k3, k4, tmp } = self;
        f(seg.stage_time(t), y, k1);
        for i in 0..y.len() {
            tmp[i] = y[i] + k1[i] * (0.5 * h);
        }
        f(seg.stage_time(t + 0.5 * h), tmp, k2);
        for i in 0..y.len() {
            tmp[i] = y[i] + k2[i] * (0.5 * h);
        }
        f(seg.stage_time(t + 0.5 * h), tmp, k3);
        for i in 0..y.len() {
            tmp[i] = y[i] + k3[i] * h;
        }
        f(seg.stage_time(t + h), tmp, k4);
        let w = h / 6.0;
        for i in 0..y.len() {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Integrates the Schrödinger equation from `t0` to `t1`.
pub fn propagate_state<H: Hamiltonian + ?Sized>(
    ham: &H,
    psi0: &[C64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<PropagationRecord> {
    cfg.validate()?;
    if psi0.len() != ham.dim() {
        return Err(Error::BasisMismatch(format!(
            "state has {} amplitudes, Hamiltonian acts on {}",
            psi0.len(),
            ham.dim()
        )));
    }
    if let Some(bound) = ham.norm_estimate(t0) {
        if bound * cfg.dt > 0.1 {
            log::warn!("dt * |H| = {:.3} exceeds 0.1; expect poor accuracy", bound * cfg.dt);
        }
    }
    let ref_norm = norm(psi0);
    if !(ref_norm > 0.0) || !ref_norm.is_finite() {
        return Err(Error::InvalidArgument("initial state has zero or non-finite norm".into()));
    }

    let mut y = psi0.to_vec();
    let mut rk = Rk4::new(y.len());
    let mut times = vec![t0];
    let mut states = vec![y.clone()];
    let mut drift: f64 = 0.0;
    let mut deriv = |t: f64, v: &[C64], dv: &mut [C64]| {
        ham.apply(t, v, dv);
        for x in dv.iter_mut() {
            *x *= MINUS_I;
        }
    };

    let mut step_count = 0usize;
    for seg in time_grid(t0, t1, cfg.dt, &ham.breakpoints()) {
        let h = seg.step();
        for k in 0..seg.steps {
            let t = seg.start + k as f64 * h;
            rk.step(&mut y, t, h, &seg, &mut deriv);
            let t_next = if k + 1 == seg.steps { seg.end } else { t + h };

            let n = norm(&y);
            if !n.is_finite() {
                return Err(Error::NonFinite { time: t_next });
            }
            let dev = (n / ref_norm - 1.0).abs();
            drift = drift.max(dev);
            if dev > cfg.norm_tol {
                return Err(Error::NormDrift { drift: dev, tol: cfg.norm_tol, time: t_next });
            }
            if cfg.renormalize {
                let s = ref_norm / n;
                y.iter_mut().for_each(|z| *z *= s);
            }

            step_count += 1;
            if cfg.record_every > 0 && step_count % cfg.record_every == 0 {
                times.push(t_next);
                states.push(y.clone());
            }
        }
    }
    if times.last() != Some(&t1) {
        times.push(t1);
        states.push(y);
    }
    Ok(PropagationRecord { times, states, norm_drift: drift })
}

/// Propagates every basis vector; column `j` of the result is `U(t1, t0) e_j`.
pub fn propagate_unitary<H: Hamiltonian + ?Sized>(
    ham: &H,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<C64>> {
    let d = ham.dim();
    let cfg = IntegratorConfig { record_every: 0, ..cfg.clone() };
    let columns: Vec<Vec<C64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![C64::new(0.0, 0.0); d];
            e[j] = C64::new(1.0, 0.0);
            propagate_state(ham, &e, t0, t1, &cfg).map(PropagationRecord::into_final_state)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(d, d, |i, j| columns[j][i]))
}

/// Maximum elementwise deviation of `U^dagger U` from the identity.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let p = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub dt: f64,
    /// `|psi(dt) - psi(dt/2)|`
    pub coarse_difference: f64,
    /// `|psi(dt/2) - psi(dt/4)|`
    pub fine_difference: f64,
    /// Richardson ratio; 16 for a fourth-order method.
    pub ratio: f64,
    pub estimated_order: f64,
}

/// Runs the propagation at `dt`, `dt/2` and `dt/4` and estimates the order of
/// convergence from successive differences.
pub fn convergence_check<H: Hamiltonian + ?Sized>(
    ham: &H,
    psi0: &[C64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<ConvergenceReport> {
    let run = |dt: f64| -> Result<Vec<C64>> {
        let c = IntegratorConfig { dt, record_every: 0, norm_tol: f64::INFINITY, renormalize: false, ..cfg.clone() };
        Ok(propagate_state(ham, psi0, t0, t1, &c)?.into_final_state())
    };
    let a = run(cfg.dt)?;
    let b = run(cfg.dt / 2.0)?;
    let c = run(cfg.dt / 4.0)?;
    let diff = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let coarse = diff(&a, &b);
    let fine = diff(&b, &c);
    let ratio = coarse / fine;
    Ok(ConvergenceReport {
        dt: cfg.dt,
        coarse_difference: coarse,
        fine_difference: fine,
        ratio,
        estimated_order: ratio.log2(),
    })
}

//! Hopping pulses `J(t)` and the role-swapping schedule that drives the chain.

use std::sync::Arc;

/// A time-dependent hopping amplitude.
pub trait Pulse: Send + Sync {
    fn value(&self, t: f64) -> f64;

    /// Times at which the pulse is discontinuous. Integrators align step
    /// boundaries to these.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Piecewise-constant signal: `amplitude` on `[start, end)`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquarePulse {
    pub amplitude: f64,
    pub start: f64,
    pub end: f64,
}

impl SquarePulse {
    pub fn new(amplitude: f64, duration: f64) -> Self {
        Self { amplitude, start: 0.0, end: duration }
    }
}

impl Pulse for SquarePulse {
    fn value(&self, t: f64) -> f64 {
        if t >= self.start && t < self.end {
            self.amplitude
        } else {
            0.0
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.start, self.end]
    }
}

/// Wraps a closure as a (smooth) pulse.
pub struct FnPulse<F>(pub F);

impl<F> Pulse for FnPulse<F>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPulse;

impl Pulse for ZeroPulse {
    fn value(&self, _t: f64) -> f64 {
        0.0
    }
}

impl<P: Pulse + ?Sized> Pulse for Arc<P> {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

impl<P: Pulse + ?Sized> Pulse for &P {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Five-point Gauss-Legendre rule on `[a, b]`.
pub(crate) fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL5_NODES
        .iter()
        .zip(GL5_WEIGHTS.iter())
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Composite Gauss-Legendre integral of a pulse, with panel edges placed on
/// the pulse's breakpoints.
pub fn pulse_area(pulse: &dyn Pulse, t0: f64, t1: f64, panels: usize) -> f64 {
    let edges = segment_edges(t0, t1, &pulse.breakpoints());
    let total = t1 - t0;
    let mut area = 0.0;
    for w in edges.windows(2) {
        let n = ((panels as f64) * (w[1] - w[0]) / total).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            let a = w[0] + k as f64 * h;
            let b = if k + 1 == n { w[1] } else { a + h };
            area += gauss_legendre(|t| pulse.value(t), a, b);
        }
    }
    area
}

/// Sorted segment boundaries of `[t0, t1]` (t0 < t1) split at the given
/// breakpoints.
pub(crate) fn segment_edges(t0: f64, t1: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut edges = vec![t0];
    let tol = 1e-12 * (t1 - t0).abs().max(1.0);
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 + tol && b < t1 - tol)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|a, b| (*a - *b).abs() <= tol);
    edges.extend(inner);
    edges.push(t1);
    edges
}

/// Time-periodic hopping schedule with period `2T`.
///
/// During half-period `k` the odd bonds `(1,2), (3,4), ...` carry `J1` and the
/// even bonds carry `J2` when `k` is even; the roles are exchanged when `k` is
/// odd. Both pulses are evaluated on the local time `t - kT`.
#[derive(Clone)]
pub struct HoppingSchedule {
    pub j1: Arc<dyn Pulse>,
    pub j2: Arc<dyn Pulse>,
    pub interaction: f64,
    pub half_period: f64,
    pub n_half_periods: usize,
}

impl std::fmt::Debug for HoppingSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HoppingSchedule")
            .field("interaction", &self.interaction)
            .field("half_period", &self.half_period)
            .field("n_half_periods", &self.n_half_periods)
            .finish_non_exhaustive()
    }
}

impl HoppingSchedule {
    /// The canonical ratchet: `J1` active during each half-period, `J2 = 0`.
    pub fn canonical(j1: Arc<dyn Pulse>, interaction: f64, half_period: f64, n_half_periods: usize) -> Self {
        Self {
            j1,
            j2: Arc::new(ZeroPulse),
            interaction,
            half_period,
            n_half_periods,
        }
    }

    pub fn total_time(&self) -> f64 {
        self.half_period * self.n_half_periods as f64
    }

    /// Index of the half-period containing `t` (half-open intervals).
    pub fn half_period_index(&self, t: f64) -> usize {
        if t <= 0.0 {
            0
        } else {
            (t / self.half_period).floor() as usize
        }
    }

    /// `(J_odd, J_even)` at global time `t`.
    pub fn couplings(&self, t: f64) -> (f64, f64) {
        let k = self.half_period_index(t);
        let local = t - k as f64 * self.half_period;
        let a = self.j1.value(local);
        let b = self.j2.value(local);
        if k % 2 == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Half-period boundaries plus the pulses' own breakpoints replicated into
    /// each half-period.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut local: Vec<f64> = self.j1.breakpoints();
        local.extend(self.j2.breakpoints());
        let mut out = Vec::new();
        for k in 0..=self.n_half_periods {
            let base = k as f64 * self.half_period;
            out.push(base);
            if k < self.n_half_periods {
                out.extend(local.iter().map(|b| base + b));
            }
        }
        out
    }

    /// Checks `J1, J2 >= 0` on a uniform sample of one half-period.
    pub fn is_nonnegative(&self, samples: usize) -> bool {
        (0..=samples).all(|i| {
            let t = self.half_period * i as f64 / samples as f64;
            self.j1.value(t) >= 0.0 && self.j2.value(t) >= 0.0
        })
    }
}

//! Double-well band structure of the superlattice
//! `V(x) = V_x cos^2(x) + V_2 cos^2(2x + phi)` and the map from hopping
//! pulses to lattice-depth schedules.
//!
//! Lengths are in units of `1/k` and energies in recoil units, so the
//! single-particle operator is `-d^2/dx^2 + V(x)` on the cell `[0, pi)`.
//! The cell holds two wells separated by a barrier of height `V_2` at
//! `x = pi/2`; the barrier `V_x + V_2` at the cell edge is held fixed so only
//! one bond is modulated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::Pulse;

/// Combined depth `V_x + V_2` that isolates neighbouring double wells.
pub const TOTAL_DEPTH_ER: f64 = 70.0;
pub const DEFAULT_GRID_POINTS: usize = 256;
pub const DEFAULT_SCATTERING_RATIO: f64 = 0.01;
pub const DEFAULT_SWEEP: (f64, f64) = (30.0, 65.0);
pub const DEFAULT_SAMPLES: usize = 40;
/// Maximum eigenvalue change allowed under grid doubling.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// Minimum fraction of `|w|^2` that must sit in one well.
pub const LOCALIZATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperlatticeConfig {
    pub v_x: f64,
    pub v_2: f64,
    pub phi: f64,
}

impl SuperlatticeConfig {
    pub fn new(v_x: f64, v_2: f64) -> Result<Self> {
        let c = Self { v_x, v_2, phi: 0.0 };
        c.validate()?;
        Ok(c)
    }

    /// Central barrier `delta_v` with the edge barrier held at
    /// [`TOTAL_DEPTH_ER`].
    pub fn from_modulation(delta_v: f64) -> Result<Self> {
        if !(0.0..=TOTAL_DEPTH_ER).contains(&delta_v) {
            return Err(Error::OutOfRange { value: delta_v, min: 0.0, max: TOTAL_DEPTH_ER });
        }
        Self::new(TOTAL_DEPTH_ER - delta_v, delta_v)
    }

    fn validate(&self) -> Result<()> {
        if !(self.v_x >= 0.0 && self.v_2 >= 0.0) || !self.v_x.is_finite() || !self.v_2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lattice depths must be finite and nonnegative, got V_x = {}, V_2 = {}",
                self.v_x, self.v_2
            )));
        }
        let quarter = self.phi / (PI / 2.0);
        if (quarter - quarter.round()).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("phi must be a multiple of pi/2, got {}", self.phi)));
        }
        Ok(())
    }

    pub fn potential(&self, x: f64) -> f64 {
        self.v_x * x.cos().powi(2) + self.v_2 * (2.0 * x + self.phi).cos().powi(2)
    }
}

/// Bloch condition across the cell: `psi(x + pi) = +- psi(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellBoundary {
    Periodic,
    Antiperiodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleWellSpectrum {
    /// Lowest four eigenvalues, ascending.
    pub energies: [f64; 4],
    pub grid: Vec<f64>,
    /// Matching eigenfunctions sampled on `grid`, normalised so that
    /// `sum |psi|^2 dx = 1`.
    pub states: Vec<Vec<f64>>,
    pub spacing: f64,
}

/// Fourier-grid kinetic matrix `-d^2/dx^2` on `n` points of a cell of length
/// `pi`, with the given boundary twist.
fn kinetic_matrix(n: usize, boundary: CellBoundary) -> DMatrix<f64> {
    let len = PI;
    let shift = match boundary {
        CellBoundary::Periodic => 0.0,
        CellBoundary::Antiperiodic => 0.5,
    };
    let half = (n / 2) as i64;
    let ks: Vec<f64> = (-half..n as i64 - half).map(|m| 2.0 * PI * (m as f64 + shift) / len).collect();
    let dx = len / n as f64;
    // the matrix depends only on j - l
    let row: Vec<f64> = (0..n)
        .map(|d| ks.iter().map(|k| k * k * (k * d as f64 * dx).cos()).sum::<f64>() / n as f64)
        .collect();
    DMatrix::from_fn(n, n, |j, l| row[j.abs_diff(l)])
}

fn diagonalize(config: &SuperlatticeConfig, n: usize, boundary: CellBoundary) -> DoubleWellSpectrum {
    let dx = PI / n as f64;
    let grid: Vec<f64> = (0..n).map(|j| j as f64 * dx).collect();
    let mut h = kinetic_matrix(n, boundary);
    for (j, x) in grid.iter().enumerate() {
        h[(j, j)] += config.potential(*x);
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut energies = [0.0; 4];
    let mut states = Vec::with_capacity(4);
    let norm = dx.sqrt().recip();
    for (slot, &k) in order.iter().take(4).enumerate() {
        energies[slot] = eig.eigenvalues[k];
        states.push(eig.eigenvectors.column(k).iter().map(|c| c * norm).collect());
    }
    DoubleWellSpectrum { energies, grid, states, spacing: dx }
}

/// Lowest four levels of one superlattice cell, verified against a grid of
/// twice the resolution.
pub fn solve_double_well(
    config: &SuperlatticeConfig,
    grid_points: usize,
    boundary: CellBoundary,
) -> Result<DoubleWellSpectrum> {
    config.validate()?;
    if config.phi != 0.0 {
        return Err(Error::InvalidArgument("only phi = 0 is supported".into()));
    }
    if grid_points < 256 || grid_points % 2 != 0 {
        return Err(Error::InvalidArgument(format!("grid_points must be even and >= 256, got {grid_points}")));
    }
    let coarse = diagonalize(config, grid_points, boundary);
    let fine = diagonalize(config, 2 * grid_points, boundary);
    let change = coarse.energies.iter().zip(&fine.energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if change > CONVERGENCE_TOL {
        return Err(Error::NotConverged { change });
    }
    Ok(coarse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub delta_v: f64,
    pub j: f64,
    /// Hopping through the fixed edge barrier, left over by the isolation.
    pub j_leak: f64,
    pub u: f64,
    pub gap: f64,
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl BandPoint {
    /// `U / E_r` for the given `a_s / a`.
    pub fn interaction(&self, scattering_ratio: f64) -> f64 {
        scattering_ratio * self.u
    }

    /// Whether the interaction stays below the gap to higher bands.
    pub fn is_single_band(&self, scattering_ratio: f64) -> bool {
        self.interaction(scattering_ratio) < self.gap
    }
}

/// Hopping, Wannier overlap and band gap at modulation `delta_v`.
///
/// The periodic cell is a two-site ring with bonds `J` (central barrier)
/// and `J'` (edge barrier); its doublet splits by `2|J + J'|`, and by
/// `2|J - J'|` under the antiperiodic twist, so the two solves separate the
/// modulated hopping from the leakage.
pub fn extract_band_point(delta_v: f64, grid_points: usize) -> Result<BandPoint> {
    let config = SuperlatticeConfig::from_modulation(delta_v)?;
    let periodic = solve_double_well(&config, grid_points, CellBoundary::Periodic)?;
    let twisted = solve_double_well(&config, grid_points, CellBoundary::Antiperiodic)?;
    let split_p = periodic.energies[1] - periodic.energies[0];
    let split_a = twisted.energies[1] - twisted.energies[0];
    let j = 0.25 * (split_p + split_a);
    let j_leak = 0.25 * (split_p - split_a);

    let [e0, e1, e2, _] = periodic.energies;
    let (psi0, psi1) = (&periodic.states[0], &periodic.states[1]);
    let n = psi0.len();
    let left = 0..n / 2;
    let sign = if left.clone().map(|i| psi0[i] * psi1[i]).sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
    let w: Vec<f64> = psi0.iter().zip(psi1).map(|(a, b)| (a + sign * b) / 2f64.sqrt()).collect();
    let dx = periodic.spacing;
    let fraction = left.map(|i| w[i] * w[i]).sum::<f64>() * dx;
    if fraction < LOCALIZATION_THRESHOLD {
        return Err(Error::NotLocalized { fraction });
    }
    // u = a int |w|^4 with a = pi the superlattice period
    let u = PI * w.iter().map(|v| v.powi(4)).sum::<f64>() * dx;
    Ok(BandPoint { delta_v, j, j_leak, u, gap: e2 - 0.5 * (e0 + e1), e0, e1, e2 })
}

/// `ln J = alpha - beta delta_v` over `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub alpha: f64,
    pub beta: f64,
    /// RMS residual in `ln J`.
    pub rms: f64,
    pub start: f64,
    pub end: f64,
}

impl ExponentialFit {
    pub fn hopping(&self, delta_v: f64) -> f64 {
        (self.alpha - self.beta * delta_v).exp()
    }

    pub fn modulation(&self, j: f64) -> f64 {
        (self.alpha - j.ln()) / self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    pub points: Vec<BandPoint>,
    pub fit: ExponentialFit,
    /// Least-squares polynomial for `u(delta_v)`, lowest order first.
    pub u_fit: Vec<f64>,
}

impl BandTable {
    pub fn mean_u(&self) -> f64 {
        self.points.iter().map(|p| p.u).sum::<f64>() / self.points.len() as f64
    }

    pub fn u_spread(&self) -> f64 {
        let (lo, hi) = self.points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.u), b.max(p.u)));
        hi / lo
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].j < w[0].j)
    }

    /// `J` at `delta_v` by log-linear interpolation of the table.
    pub fn interpolate_hopping(&self, delta_v: f64) -> Result<f64> {
        let (first, last) = (self.points[0].delta_v, self.points[self.points.len() - 1].delta_v);
        if !(first..=last).contains(&delta_v) {
            return Err(Error::OutOfRange { value: delta_v, min: first, max: last });
        }
        let k = self.points.partition_point(|p| p.delta_v < delta_v).max(1).min(self.points.len() - 1);
        let (a, b) = (&self.points[k - 1], &self.points[k]);
        let s = (delta_v - a.delta_v) / (b.delta_v - a.delta_v);
        Ok((a.j.ln() * (1.0 - s) + b.j.ln() * s).exp())
    }
}

fn least_squares(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least-squares fit failed: {e}")))
}

/// Longest run of strictly decreasing `J`.
fn decreasing_segment(points: &[BandPoint]) -> (usize, usize) {
    let (mut best, mut start) = ((0, 1), 0);
    for i in 1..=points.len() {
        if i == points.len() || points[i].j >= points[i - 1].j {
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i;
        }
    }
    best
}

/// Tabulates `samples` evenly spaced modulations and fits `ln J` linearly and
/// `u` by a quadratic.
pub fn sweep_and_fit(range: (f64, f64), samples: usize, grid_points: usize) -> Result<BandTable> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty modulation range [{lo}, {hi}]")));
    }
    if lo < 0.0 || hi > TOTAL_DEPTH_ER {
        return Err(Error::OutOfRange { value: if lo < 0.0 { lo } else { hi }, min: 0.0, max: TOTAL_DEPTH_ER });
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("at least two samples required".into()));
    }
    let points: Vec<BandPoint> = (0..samples)
        .into_par_iter()
        .map(|i| extract_band_point(lo + (hi - lo) * i as f64 / (samples - 1) as f64, grid_points))
        .collect::<Result<_>>()?;

    let (a, b) = decreasing_segment(&points);
    if b - a < points.len() {
        log::warn!(
            "hopping is not monotone over the sweep; fitting delta_v in [{}, {}] only",
            points[a].delta_v,
            points[b - 1].delta_v
        );
    }
    if b - a < 2 {
        return Err(Error::InvalidArgument("no monotone segment to fit".into()));
    }
    let seg = &points[a..b];
    let design = DMatrix::from_fn(seg.len(), 2, |i, c| if c == 0 { 1.0 } else { -seg[i].delta_v });
    let coef = least_squares(design, DVector::from_iterator(seg.len(), seg.iter().map(|p| p.j.ln())))?;
    let (alpha, beta) = (coef[0], coef[1]);
    let rms = (seg.iter().map(|p| (p.j.ln() - (alpha - beta * p.delta_v)).powi(2)).sum::<f64>() / seg.len() as f64)
        .sqrt();
    let fit = ExponentialFit { alpha, beta, rms, start: seg[0].delta_v, end: seg[seg.len() - 1].delta_v };

    let order = (points.len() - 1).min(2);
    let design = DMatrix::from_fn(points.len(), order + 1, |i, c| points[i].delta_v.powi(c as i32));
    let u_fit = least_squares(design, DVector::from_iterator(points.len(), points.iter().map(|p| p.u)))?;
    Ok(BandTable { points, fit, u_fit: u_fit.iter().copied().collect() })
}

/// `U` in recoil units, `(a_s / a)` times the sweep-averaged overlap.
pub fn interaction_in_recoil(table: &BandTable, scattering_ratio: f64) -> f64 {
    scattering_ratio * table.mean_u()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticeSample {
    /// Time in the pulse's units.
    pub t: f64,
    /// Time in units of `hbar / E_r`.
    pub t_recoil: f64,
    pub j_er: f64,
    pub delta_v: f64,
    /// `J` fell below the table and `delta_v` was saturated at its top.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeSchedule {
    /// Recoil energies per pulse energy unit.
    pub energy_scale: f64,
    pub samples: Vec<LatticeSample>,
}

/// Converts `J(t)` to `delta_v(t)` through the inverse of the exponential
/// fit.
///
/// The pulse is expressed in units where the interaction is `interaction`;
/// `interaction_er` is the same interaction in recoil units and fixes the
/// energy scale.
pub fn pulse_to_lattice_schedule(
    pulse: &dyn Pulse,
    interaction: f64,
    interaction_er: f64,
    table: &BandTable,
    times: &[f64],
) -> Result<LatticeSchedule> {
    if !(interaction > 0.0 && interaction_er > 0.0) {
        return Err(Error::InvalidArgument("interaction strengths must be positive".into()));
    }
    let scale = interaction_er / interaction;
    let j_max = table.points.iter().map(|p| p.j).fold(0.0, f64::max);
    let j_min = table.points.iter().map(|p| p.j).fold(f64::INFINITY, f64::min);
    let dv_max = table.points.iter().map(|p| p.delta_v).fold(0.0, f64::max);
    let dv_min = table.points.iter().map(|p| p.delta_v).fold(f64::INFINITY, f64::min);
    let samples = times
        .iter()
        .map(|&t| {
            let j_er = pulse.value(t) * scale;
            if j_er > j_max * (1.0 + 1e-12) {
                return Err(Error::OutOfRange { value: j_er, min: j_min, max: j_max });
            }
            let (delta_v, clamped) = if j_er < j_min {
                (dv_max, true)
            } else {
                (table.fit.modulation(j_er).clamp(dv_min, dv_max), false)
            };
            Ok(LatticeSample { t, t_recoil: t / scale, j_er, delta_v, clamped })
        })
        .collect::<Result<_>>()?;
    Ok(LatticeSchedule { energy_scale: scale, samples })
}

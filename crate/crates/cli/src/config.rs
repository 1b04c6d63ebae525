//! Scenario configuration files.
//!
//! Energies are measured in units of the interaction `U` and times in units
//! of `1/U` (hbar = 1); band-structure quantities are in recoil energies.
//! Every command reads its own table from a TOML document, e.g.
//!
//! ```toml
//! [optimize]
//! duration_times_U = 6.283185307179586
//! modes = 3
//! ```
//!
//! Missing tables and fields take their defaults; unknown fields are
//! rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub swap_family: SwapFamilyConfig,
    pub optimize: OptimizeConfig,
    pub transport: TransportConfig,
    pub bands: BandsConfig,
    pub grad_check: GradCheckConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapFamilyConfig {
    /// Largest `n_plus`, `n_minus` to enumerate.
    pub n_max: u32,
    /// Integrator step; defaults to `T / 2000` per member.
    pub dt_times_U: Option<f64>,
}

impl Default for SwapFamilyConfig {
    fn default() -> Self {
        Self { n_max: 3, dt_times_U: None }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub duration_times_U: f64,
    pub modes: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub fidelity_target: f64,
    pub infidelity_goal: f64,
    /// Require `int J = 2 pi m` for this `m`.
    pub hole_phase_winding: Option<i64>,
    /// Initial coefficients in units of `U`; defaults to `(pi / T) e_1`.
    pub initial_coefficients_over_U: Option<Vec<f64>>,
    /// Relative duration change for the timing-robustness check.
    pub timing_perturbation: f64,
    /// Points in the emitted time series.
    pub time_samples: usize,
    pub dt_times_U: Option<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            duration_times_U: 2.0 * PI,
            modes: 3,
            restarts: 8,
            seed: 0,
            max_outer: 25,
            max_inner: 100,
            fidelity_target: 1.0 - 1e-4,
            infidelity_goal: 1e-5,
            hole_phase_winding: None,
            initial_coefficients_over_U: None,
            timing_perturbation: 0.02,
            time_samples: 200,
            dt_times_U: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportModel {
    ManyBody,
    SingleParticle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseShape {
    /// Optimised sine-squared pulse.
    Optimized,
    /// Constant hopping from the exact square-pulse family (or `J T = pi/2`
    /// for the single-particle model).
    Square,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub sites: usize,
    /// 1-based site holding the imprinted qubit.
    pub write_port: usize,
    pub n_half_periods: usize,
    pub half_period_times_U: f64,
    pub model: TransportModel,
    pub pulse: PulseShape,
    /// Modes of the optimised pulse.
    pub modes: usize,
    pub seed: u64,
    /// Qubit amplitudes `alpha |up> + beta |down>` as `[re, im]`.
    pub qubit_up: [f64; 2],
    pub qubit_down: [f64; 2],
    pub samples_per_half_period: usize,
    pub dimension_cap: usize,
    pub dt_times_U: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            sites: 6,
            write_port: 2,
            n_half_periods: 6,
            half_period_times_U: 4.0 * PI,
            model: TransportModel::ManyBody,
            pulse: PulseShape::Optimized,
            modes: 2,
            seed: 0,
            qubit_up: [1.0, 0.0],
            qubit_down: [0.0, 0.0],
            samples_per_half_period: 40,
            dimension_cap: qratchet::hilbert::DEFAULT_DIMENSION_CAP,
            dt_times_U: None,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    pub delta_v_min_Er: f64,
    pub delta_v_max_Er: f64,
    pub samples: usize,
    pub grid_points: usize,
    pub scattering_length_over_period: f64,
    /// An `optimize` report whose pulse is converted to a lattice schedule.
    pub pulse_report: Option<PathBuf>,
    pub schedule_samples: usize,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            delta_v_min_Er: qratchet::bands::DEFAULT_SWEEP.0,
            delta_v_max_Er: qratchet::bands::DEFAULT_SWEEP.1,
            samples: qratchet::bands::DEFAULT_SAMPLES,
            grid_points: qratchet::bands::DEFAULT_GRID_POINTS,
            scattering_length_over_period: qratchet::bands::DEFAULT_SCATTERING_RATIO,
            pulse_report: None,
            schedule_samples: 200,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub problems: usize,
    /// Mode counts are drawn from `1..=max_modes` unless `modes` is set.
    pub max_modes: usize,
    pub modes: Option<usize>,
    pub seed: u64,
    pub tolerance: f64,
    pub interaction_range_over_U: [f64; 2],
    pub duration_range_times_U: [f64; 2],
    pub coefficient_range_over_U: [f64; 2],
    pub dt_times_U: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            problems: 50,
            max_modes: 5,
            modes: None,
            seed: 0,
            tolerance: 1e-5,
            interaction_range_over_U: [0.2, 3.0],
            duration_range_times_U: [PI, 4.0 * PI],
            coefficient_range_over_U: [0.0, 1.5],
            dt_times_U: None,
        }
    }
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

pub(crate) fn check_range(name: &str, r: [f64; 2]) -> Result<(), CliError> {
    require(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1], format!("{name} must be an ordered finite pair"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ScenarioConfig::parse("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = ScenarioConfig::parse("[optimize]\nmodes = 2\nduration_times_U = 12.5\n").unwrap();
        assert_eq!(c.optimize.modes, 2);
        assert_eq!(c.optimize.duration_times_U, 12.5);
        assert_eq!(c.optimize.restarts, 8);
        let c = ScenarioConfig::parse("[transport]\nmodel = \"single-particle\"\npulse = \"square\"\n").unwrap();
        assert_eq!(c.transport.model, TransportModel::SingleParticle);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ScenarioConfig::parse("[optimize]\nduration = 3.0\n").is_err());
        assert!(ScenarioConfig::parse("[nonsense]\n").is_err());
        assert!(ScenarioConfig::parse("[transport]\nmodel = \"classical\"\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ScenarioConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::parse(&text).unwrap(), c);
    }
}

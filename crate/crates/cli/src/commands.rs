//! The subcommands. Each writes its tables and report into the output
//! directory and returns a short human-readable summary.
#![allow(non_snake_case)]

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use qratchet::analytic::{square_solution_family, three_level_propagate, SquareSolution};
use qratchet::bands::{
    interaction_in_recoil, pulse_to_lattice_schedule, sweep_and_fit, BandTable, LatticeSchedule,
};
use qratchet::control::{
    compare_with_finite_differences, default_fd_step, fidelity, finite_difference_check, gradient, optimize,
    ControlProblem, FdReport, OptimizeOptions, OptimizeOutcome, OptimizeReport, PulseAnsatz, Solution,
};
use qratchet::hilbert::{
    product_state_with_qubit, BoundaryCondition, ChainDynamics, ChainHamiltonian, ChainState, FockBasis,
    Observables, Sector, SingleParticleDynamics,
};
use qratchet::propagator::{propagate_state, Hamiltonian, IntegratorConfig};
use qratchet::pulse::{HoppingSchedule, Pulse, SquarePulse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    check_range, require, BandsConfig, GradCheckConfig, OptimizeConfig, PulseShape, ScenarioConfig,
    SwapFamilyConfig, TransportConfig, TransportModel,
};
use crate::output::{num, OutputDir, Table};
use crate::CliError;

/// Energy unit of every non-band command.
const INTERACTION: f64 = 1.0;

fn integrator(dt: Option<f64>, half_period: f64) -> Result<IntegratorConfig, CliError> {
    match dt {
        Some(dt) => {
            require(dt > 0.0 && dt.is_finite(), format!("dt must be positive, got {dt}"))?;
            Ok(IntegratorConfig::with_dt(dt))
        }
        None => Ok(IntegratorConfig::for_half_period(half_period)),
    }
}

// ---------------------------------------------------------------- swap family

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRow {
    pub member: SquareSolution,
    pub fidelity_check: f64,
}

pub fn swap_family(scenario: &ScenarioConfig, out: &mut OutputDir) -> Result<Vec<FamilyRow>, CliError> {
    let cfg: &SwapFamilyConfig = &scenario.swap_family;
    let family = square_solution_family(cfg.n_max);
    let rows = family
        .members
        .iter()
        .map(|m| {
            let (pulse, duration) = m.pulse(INTERACTION);
            let integ = integrator(cfg.dt_times_U, duration)?;
            let outcome = three_level_propagate(&pulse, INTERACTION, duration, &integ)?;
            Ok(FamilyRow { member: *m, fidelity_check: outcome.swap_fidelity })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut table = Table::new([
        "n_plus",
        "n_minus",
        "x",
        "U_over_J",
        "J_T_product",
        "U_T_product",
        "on_min_J_frontier",
        "minimal_time",
        "fidelity_check",
    ]);
    for r in &rows {
        let m = &r.member;
        table.push(vec![
            m.n_plus.to_string(),
            m.n_minus.to_string(),
            num(m.x),
            num(m.u_over_j),
            num(m.j_t_product),
            num(m.u_t_product),
            m.on_min_j_frontier.to_string(),
            m.minimal_time.to_string(),
            num(r.fidelity_check),
        ]);
    }
    out.csv("swap_family.csv", &table)?;
    Ok(rows)
}

// ------------------------------------------------------------------ optimize

#[derive(Debug, Clone, Serialize)]
pub struct TimingCheck {
    pub relative_change: f64,
    pub swap_fidelity_shorter: f64,
    pub swap_fidelity_longer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResult {
    pub duration_times_U: f64,
    pub report: OptimizeReport,
    /// Swap probability `|<01|U(T)|10>|^2` of the returned pulse.
    pub swap_fidelity: Option<f64>,
    pub timing: Option<TimingCheck>,
}

impl OptimizeResult {
    pub fn solution(&self) -> Option<&Solution> {
        match &self.report.outcome {
            OptimizeOutcome::Solved(s) => Some(s),
            OptimizeOutcome::Infeasible(_) => None,
        }
    }
}

fn swap_problem(cfg: &OptimizeConfig) -> Result<ControlProblem<qratchet::control::AnsatzHamiltonian>, CliError> {
    require(cfg.duration_times_U > 0.0, "duration_times_U must be positive")?;
    require(
        cfg.fidelity_target > 0.0 && cfg.fidelity_target <= 1.0,
        "fidelity_target must lie in (0, 1]",
    )?;
    let mut problem = ControlProblem::three_level_swap(INTERACTION, cfg.duration_times_U, cfg.modes)?;
    problem.integrator = integrator(cfg.dt_times_U, cfg.duration_times_U)?;
    problem.constraints.fidelity_target = cfg.fidelity_target;
    problem.constraints.hole_phase = cfg.hole_phase_winding;
    Ok(problem)
}

/// Runs the optimiser without writing anything.
pub fn solve_swap(cfg: &OptimizeConfig) -> Result<OptimizeResult, CliError> {
    require(cfg.modes >= 1, "at least one pulse mode required")?;
    require(cfg.infidelity_goal > 0.0, "infidelity_goal must be positive")?;
    let problem = swap_problem(cfg)?;
    let opts = OptimizeOptions {
        x0: cfg.initial_coefficients_over_U.clone(),
        restarts: cfg.restarts,
        seed: cfg.seed,
        max_outer: cfg.max_outer,
        max_inner: cfg.max_inner,
        infidelity_goal: cfg.infidelity_goal,
    };
    let report = optimize(&problem, &opts)?;
    let mut result = OptimizeResult { duration_times_U: cfg.duration_times_U, report, swap_fidelity: None, timing: None };
    if let Some(x) = result.solution().map(|s| s.x.clone()) {
        let t = cfg.duration_times_U;
        let swap_at = |duration: f64| -> Result<f64, CliError> {
            let pulse = PulseAnsatz::new(x.clone(), duration)?;
            let integ = IntegratorConfig { dt: problem.integrator.dt * duration / t, ..problem.integrator.clone() };
            Ok(three_level_propagate(&pulse, INTERACTION, duration, &integ)?.swap_fidelity)
        };
        let p = cfg.timing_perturbation;
        result.swap_fidelity = Some(swap_at(t)?);
        result.timing = Some(TimingCheck {
            relative_change: p,
            swap_fidelity_shorter: swap_at(t * (1.0 - p))?,
            swap_fidelity_longer: swap_at(t * (1.0 + p))?,
        });
    }
    Ok(result)
}

/// `J(t)` and the swap probability along the returned pulse.
fn pulse_series(pulse: &PulseAnsatz, cfg: &IntegratorConfig, samples: usize) -> Result<Table, CliError> {
    let duration = pulse.duration;
    let steps = (duration / cfg.dt).ceil().max(1.0) as usize;
    let every = (steps / samples.max(1)).max(1);
    let dynamics = qratchet::analytic::ThreeLevelDynamics { pulse: pulse.clone(), interaction: INTERACTION };
    let (ket01, ket10) = qratchet::analytic::distinguishable_states();
    let rec = propagate_state(&dynamics, &ket10, 0.0, duration, &cfg.clone().recording(every))?;
    let mut table = Table::new(["t_times_U", "J_over_U", "swap_fidelity"]);
    for (t, psi) in rec.times.iter().zip(&rec.states) {
        let amp: C64 = ket01.iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
        table.push(vec![num(*t), num(pulse.value(*t)), num(amp.norm_sqr())]);
    }
    Ok(table)
}

pub fn optimize_command(scenario: &ScenarioConfig, out: &mut OutputDir) -> Result<OptimizeResult, CliError> {
    let cfg = &scenario.optimize;
    require(cfg.time_samples >= 1, "time_samples must be at least 1")?;
    let result = solve_swap(cfg)?;
    let mut report = json!({
        "config": scenario,
        "status": match result.solution() { Some(_) => "solved", None => "infeasible" },
        "outcome": &result.report.outcome,
        "swap_fidelity": result.swap_fidelity,
        "timing": &result.timing,
        "runs": result.report.runs.iter().map(|r| json!({
            "start_over_U": r.start,
            "coefficients_over_U": r.x,
            "fidelity": r.fidelity,
            "energy_over_U2": r.energy,
            "feasible": r.feasible,
            "iterations": r.trace.len(),
        })).collect::<Vec<_>>(),
    });
    if let Some(s) = result.solution() {
        report["coefficients_over_U"] = json!(s.x);
        report["duration_times_U"] = json!(cfg.duration_times_U);
        let pulse = PulseAnsatz::new(s.x.clone(), cfg.duration_times_U)?;
        let integ = swap_problem(cfg)?.integrator;
        out.csv("pulse.csv", &pulse_series(&pulse, &integ, cfg.time_samples)?)?;
    }
    out.json("optimize.json", &report)?;
    match &result.report.outcome {
        OptimizeOutcome::Solved(_) => Ok(result),
        OptimizeOutcome::Infeasible(d) => Err(CliError::Infeasible(d.message.clone())),
    }
}

// ----------------------------------------------------------------- transport

/// Site of the qubit after each of `n` perfect swap rounds, starting at
/// `port`. Odd bonds `(1,2), (3,4), ...` act first; a site without an active
/// partner stays put.
pub fn predicted_sites(sites: usize, port: usize, n: usize) -> Vec<usize> {
    let mut pos = port;
    let mut out = vec![pos];
    for k in 0..n {
        let odd_round = k % 2 == 0;
        // partner on the active bond, if any
        let left_of_bond = (pos % 2 == 1) == odd_round;
        let partner = if left_of_bond { pos + 1 } else { pos - 1 };
        if partner >= 1 && partner <= sites {
            pos = partner;
        }
        out.push(pos);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportResult {
    pub predicted_sites: Vec<usize>,
    /// Average up position at `t = kT`, `k = 0..=n`.
    pub positions: Vec<f64>,
    /// `|<target_k|psi(kT)>|^2`.
    pub fidelities: Vec<f64>,
    pub net_displacement: f64,
    pub expected_displacement: i64,
    pub dimension: usize,
    pub pulse_coefficients_over_U: Option<Vec<f64>>,
    pub square_hopping_over_U: Option<f64>,
}

fn transport_pulse(cfg: &TransportConfig) -> Result<(Arc<dyn Pulse>, Option<Vec<f64>>, Option<f64>), CliError> {
    let t = cfg.half_period_times_U;
    match (cfg.pulse, cfg.model) {
        (PulseShape::Square, TransportModel::SingleParticle) => {
            let j = PI / (2.0 * t);
            Ok((Arc::new(SquarePulse::new(j, t)), None, Some(j)))
        }
        (PulseShape::Square, TransportModel::ManyBody) => {
            // the cheapest exact member with U T = t has n_minus = 0
            let n_plus = (t * INTERACTION / PI) / 2.0;
            require(
                (n_plus - n_plus.round()).abs() < 1e-9 && n_plus.round() >= 1.0,
                format!("square pulses need U T to be a positive multiple of 2 pi, got {}", t * INTERACTION),
            )?;
            let member = SquareSolution::new(n_plus.round() as u32, 0).expect("n_plus > n_minus");
            let (pulse, _) = member.pulse(INTERACTION);
            Ok((Arc::new(SquarePulse::new(pulse.amplitude, t)), None, Some(pulse.amplitude)))
        }
        (PulseShape::Optimized, _) => {
            let ocfg = OptimizeConfig {
                duration_times_U: t,
                modes: cfg.modes,
                seed: cfg.seed,
                dt_times_U: cfg.dt_times_U,
                ..OptimizeConfig::default()
            };
            let result = solve_swap(&ocfg)?;
            match result.solution() {
                Some(s) => Ok((Arc::new(PulseAnsatz::new(s.x.clone(), t)?), Some(s.x.clone()), None)),
                None => Err(CliError::Infeasible(format!(
                    "no swap pulse with {} modes at U T = {t}",
                    cfg.modes
                ))),
            }
        }
    }
}

enum Chain {
    Many { basis: FockBasis, hamiltonian: ChainHamiltonian },
    Single,
}

pub fn transport(scenario: &ScenarioConfig, out: &mut OutputDir) -> Result<TransportResult, CliError> {
    let cfg = &scenario.transport;
    let l = cfg.sites;
    require(l >= 2, "transport needs at least two sites")?;
    require(
        cfg.write_port >= 1 && cfg.write_port <= l,
        format!("write_port must lie in 1..={l}"),
    )?;
    require(cfg.half_period_times_U > 0.0, "half_period_times_U must be positive")?;
    require(cfg.samples_per_half_period >= 1, "samples_per_half_period must be at least 1")?;
    let alpha = C64::new(cfg.qubit_up[0], cfg.qubit_up[1]);
    let beta = C64::new(cfg.qubit_down[0], cfg.qubit_down[1]);
    require(
        ((alpha.norm_sqr() + beta.norm_sqr()) - 1.0).abs() < 1e-10,
        "qubit amplitudes must be normalised",
    )?;
    require(alpha.norm_sqr() > 0.0, "the qubit needs an up component to track")?;
    if cfg.model == TransportModel::SingleParticle {
        require(beta.norm_sqr() == 0.0, "the single-particle model carries only the up atom")?;
    }

    let t = cfg.half_period_times_U;
    let integ = integrator(cfg.dt_times_U, t)?;
    let (pulse, coefficients, square_j) = transport_pulse(cfg)?;
    let interaction = match cfg.model {
        TransportModel::ManyBody => INTERACTION,
        TransportModel::SingleParticle => 0.0,
    };
    let schedule = HoppingSchedule::canonical(pulse, interaction, t, cfg.n_half_periods);

    let chain = match cfg.model {
        TransportModel::ManyBody => {
            let sectors = [Sector { n_up: 0, n_down: l }, Sector { n_up: 1, n_down: l - 1 }];
            let basis = FockBasis::with_sectors(l, &sectors, cfg.dimension_cap)?;
            let hamiltonian = ChainHamiltonian::new(&basis, BoundaryCondition::Open)?;
            Chain::Many { basis, hamiltonian }
        }
        TransportModel::SingleParticle => Chain::Single,
    };
    let state_at = |site: usize| -> Result<ChainState, CliError> {
        Ok(match &chain {
            Chain::Many { basis, .. } => product_state_with_qubit(basis, site, alpha, beta)?,
            Chain::Single => ChainState::single_particle(l, site)?,
        })
    };
    let observe = |psi: &ChainState, reference: &ChainState| -> Result<Observables, CliError> {
        Ok(match &chain {
            Chain::Many { basis, .. } => Observables::of(basis, psi, Some(reference))?,
            Chain::Single => Observables::single_particle(psi, Some(reference))?,
        })
    };
    let single;
    let many;
    let dynamics: &dyn Hamiltonian = match &chain {
        Chain::Many { hamiltonian, .. } => {
            many = ChainDynamics { hamiltonian, schedule: &schedule };
            &many
        }
        Chain::Single => {
            single = SingleParticleDynamics::new(l, BoundaryCondition::Open, &schedule)?;
            &single
        }
    };

    let predicted = predicted_sites(l, cfg.write_port, cfg.n_half_periods);
    let targets: Vec<ChainState> = predicted.iter().map(|&s| state_at(s)).collect::<Result<_, _>>()?;
    let mut psi = targets[0].clone();
    let dim = psi.amplitudes().len();

    let mut header = vec!["t_times_U".to_string(), "average_up_position_site".to_string()];
    header.extend((1..=l).map(|i| format!("density_up_site{i}")));
    header.extend((1..=l).map(|i| format!("density_down_site{i}")));
    header.push("target_fidelity".into());
    let mut table = Table::new(header);
    let mut push_row = |time: f64, obs: &Observables| -> Result<f64, CliError> {
        let pos = obs.average_up_position()?;
        let mut row = vec![num(time), num(pos)];
        row.extend(obs.density_up.iter().map(|&d| num(d)));
        row.extend(obs.density_down.iter().map(|&d| num(d)));
        row.push(num(obs.overlap.unwrap_or(f64::NAN)));
        table.push(row);
        Ok(pos)
    };

    let first = observe(&psi, &targets[0])?;
    let mut positions = vec![push_row(0.0, &first)?];
    let mut fidelities = vec![first.overlap.unwrap_or(0.0)];
    let steps = (t / integ.dt).ceil().max(1.0) as usize;
    let every = (steps / cfg.samples_per_half_period).max(1);
    for k in 0..cfg.n_half_periods {
        let t0 = k as f64 * t;
        let rec = propagate_state(dynamics, psi.amplitudes(), t0, t0 + t, &integ.clone().recording(every))?;
        for (time, amps) in rec.times.iter().zip(&rec.states).skip(1) {
            let last = *time >= t0 + t;
            let reference = if last { &targets[k + 1] } else { &targets[k] };
            let obs = observe(&psi.with_amplitudes(amps.clone()), reference)?;
            let pos = push_row(*time, &obs)?;
            if last {
                positions.push(pos);
                fidelities.push(obs.overlap.unwrap_or(0.0));
            }
        }
        psi = psi.with_amplitudes(rec.into_final_state());
    }
    let result = TransportResult {
        expected_displacement: predicted[predicted.len() - 1] as i64 - predicted[0] as i64,
        net_displacement: positions[positions.len() - 1] - positions[0],
        predicted_sites: predicted,
        positions,
        fidelities,
        dimension: dim,
        pulse_coefficients_over_U: coefficients,
        square_hopping_over_U: square_j,
    };
    out.csv("transport.csv", &table)?;
    out.json("transport.json", &json!({ "config": scenario, "result": &result }))?;
    Ok(result)
}

// --------------------------------------------------------------------- bands

#[derive(Debug, Clone, Serialize)]
pub struct BandsResult {
    pub table: BandTable,
    pub interaction_Er: f64,
    pub all_single_band: bool,
    pub schedule: Option<LatticeSchedule>,
    /// RMS of `ln(J_table / J)` over unclamped schedule samples, on the same
    /// footing as the fit residual. `None` without a pulse or when every
    /// sample is clamped.
    pub round_trip_residual: Option<f64>,
    pub clamped_samples: usize,
}

fn read_pulse_report(path: &std::path::Path) -> Result<PulseAnsatz, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read pulse report {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("pulse report {}: {e}", path.display())))?;
    let coefficients: Vec<f64> = serde_json::from_value(v["coefficients_over_U"].clone())
        .map_err(|_| CliError::Config(format!("{} holds no solved pulse", path.display())))?;
    let duration = v["duration_times_U"]
        .as_f64()
        .ok_or_else(|| CliError::Config(format!("{} lacks duration_times_U", path.display())))?;
    Ok(PulseAnsatz::new(coefficients, duration)?)
}

pub fn bands(scenario: &ScenarioConfig, out: &mut OutputDir) -> Result<BandsResult, CliError> {
    let cfg: &BandsConfig = &scenario.bands;
    require(
        cfg.scattering_length_over_period > 0.0,
        "scattering_length_over_period must be positive",
    )?;
    let table = sweep_and_fit((cfg.delta_v_min_Er, cfg.delta_v_max_Er), cfg.samples, cfg.grid_points)?;
    let ratio = cfg.scattering_length_over_period;
    let interaction_er = interaction_in_recoil(&table, ratio);

    let mut csv = Table::new(["deltaV_Er", "J_Er", "J_leak_Er", "u", "gap_Er", "E0_Er", "E1_Er", "E2_Er", "single_band"]);
    for p in &table.points {
        csv.push(vec![
            num(p.delta_v),
            num(p.j),
            num(p.j_leak),
            num(p.u),
            num(p.gap),
            num(p.e0),
            num(p.e1),
            num(p.e2),
            p.is_single_band(ratio).to_string(),
        ]);
    }
    out.csv("bands.csv", &csv)?;

    let (schedule, round_trip_residual, clamped_samples) = match &cfg.pulse_report {
        Some(path) => {
            let pulse = read_pulse_report(path)?;
            let n = cfg.schedule_samples.max(1);
            let times: Vec<f64> = (0..=n).map(|k| pulse.duration * k as f64 / n as f64).collect();
            let s = pulse_to_lattice_schedule(&pulse, INTERACTION, interaction_er, &table, &times)?;
            let mut csv = Table::new(["t_times_U", "t_hbar_over_Er", "J_Er", "deltaV_Er", "clamped"]);
            let mut sq = Vec::new();
            for x in &s.samples {
                csv.push(vec![num(x.t), num(x.t_recoil), num(x.j_er), num(x.delta_v), x.clamped.to_string()]);
                if !x.clamped {
                    sq.push((table.interpolate_hopping(x.delta_v)? / x.j_er).ln().powi(2));
                }
            }
            out.csv("lattice_schedule.csv", &csv)?;
            let rms = (!sq.is_empty()).then(|| (sq.iter().sum::<f64>() / sq.len() as f64).sqrt());
            let clamped = s.samples.len() - sq.len();
            (Some(s), rms, clamped)
        }
        None => (None, None, 0),
    };
    let result = BandsResult {
        all_single_band: table.points.iter().all(|p| p.is_single_band(ratio)),
        interaction_Er: interaction_er,
        table,
        schedule,
        round_trip_residual,
        clamped_samples,
    };
    out.json(
        "bands.json",
        &json!({
            "config": scenario,
            "fit": result.table.fit,
            "u_fit": result.table.u_fit,
            "u_spread": result.table.u_spread(),
            "mean_u": result.table.mean_u(),
            "strictly_decreasing": result.table.is_strictly_decreasing(),
            "interaction_Er": result.interaction_Er,
            "all_single_band": result.all_single_band,
            "round_trip_residual": result.round_trip_residual,
            "clamped_samples": result.clamped_samples,
        }),
    )?;
    Ok(result)
}

// ---------------------------------------------------------------- grad check

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub modes: usize,
    pub interaction_over_U: f64,
    pub duration_times_U: f64,
    pub coefficients_over_U: Vec<f64>,
    pub report: FdReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub cases: Vec<GradCheckCase>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `corrupt` scales the analytic gradient before comparison; it exists so
/// the failure path can be exercised.
pub fn grad_check(scenario: &ScenarioConfig, out: &mut OutputDir, corrupt: bool) -> Result<GradCheckResult, CliError> {
    let cfg: &GradCheckConfig = &scenario.grad_check;
    check_range("interaction_range_over_U", cfg.interaction_range_over_U)?;
    check_range("duration_range_times_U", cfg.duration_range_times_U)?;
    check_range("coefficient_range_over_U", cfg.coefficient_range_over_U)?;
    require(cfg.duration_range_times_U[0] > 0.0, "durations must be positive")?;
    require(cfg.modes.is_some() || cfg.max_modes >= 1, "max_modes must be at least 1")?;
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..r[1]) };

    let mut cases = Vec::with_capacity(cfg.problems);
    for i in 0..cfg.problems {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let modes = cfg.modes.unwrap_or_else(|| rng.gen_range(1..=cfg.max_modes));
        let u = draw(&mut rng, cfg.interaction_range_over_U);
        let t = draw(&mut rng, cfg.duration_range_times_U);
        let x: Vec<f64> = (0..modes).map(|_| draw(&mut rng, cfg.coefficient_range_over_U)).collect();
        let mut problem = ControlProblem::three_level_swap(u, t, modes)?;
        problem.integrator = integrator(cfg.dt_times_U, t)?;
        let step = default_fd_step(&x);
        let report = if corrupt && !x.is_empty() {
            let mut g = gradient(&problem, &x)?.gradient;
            g.iter_mut().for_each(|v| *v = *v * 1.01 + 1e-3);
            compare_with_finite_differences(&problem, &x, &g, step)?
        } else {
            // the fidelity itself must be evaluable even with no parameters
            if x.is_empty() {
                fidelity(&problem, &x)?;
            }
            finite_difference_check(&problem, &x, step)?
        };
        cases.push(GradCheckCase {
            modes,
            interaction_over_U: u,
            duration_times_U: t,
            coefficients_over_U: x,
            report,
        });
    }
    let max_relative_error = cases.iter().map(|c| c.report.max_relative_error).fold(0.0, f64::max);
    let result = GradCheckResult {
        passed: max_relative_error <= cfg.tolerance,
        max_relative_error,
        tolerance: cfg.tolerance,
        cases,
    };
    out.json("grad_check.json", &json!({ "config": scenario, "result": &result }))?;
    if result.passed {
        Ok(result)
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            result.max_relative_error, result.tolerance
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_walk_reflects_at_the_ends() {
        assert_eq!(predicted_sites(6, 2, 6), vec![2, 1, 1, 2, 3, 4, 5]);
        assert_eq!(predicted_sites(6, 5, 6), vec![5, 6, 6, 5, 4, 3, 2]);
        assert_eq!(predicted_sites(6, 1, 2), vec![1, 2, 3]);
        assert_eq!(predicted_sites(5, 5, 1), vec![5, 5]);
    }

    #[test]
    fn unreachable_square_duration_is_a_config_error() {
        let cfg = TransportConfig {
            pulse: PulseShape::Square,
            half_period_times_U: 3.0,
            ..TransportConfig::default()
        };
        assert!(matches!(transport_pulse(&cfg), Err(CliError::Config(_))));
        let cfg = TransportConfig { half_period_times_U: 4.0 * PI, ..cfg };
        let (_, _, j) = transport_pulse(&cfg).unwrap();
        let member = SquareSolution::new(2, 0).unwrap();
        assert!((j.unwrap() - 1.0 / member.u_over_j).abs() < 1e-15);
    }
}

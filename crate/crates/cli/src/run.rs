//! Pipeline orchestration: orbit, iPRC, sensitivities, entrainment and
//! robustness, collected into tables before anything touches the disk.

use std::f64::consts::PI;
use std::fmt;

use phasekit::config::{PrcMethod, RunConfig};
use phasekit::entrainment::{
    attach_sensitivities, coupling_from_prc, locking_points, simulate_entrainment, CouplingFunction,
    InputWaveform, LockingReport,
};
use phasekit::model::builtin::ModelRegistry;
use phasekit::model::{ModelDefinition, ParameterVector};
use phasekit::orbit::{find_periodic_orbit, OrbitOptions, PeriodicOrbit};
use phasekit::prc::{compute_finite_prc, compute_iprc, PhaseResponse, PrcOptions};
use phasekit::robustness::{measure, normalize, rank_and_partition};
use phasekit::sensitivity::{
    compute_sensitivity, finite_difference_oracle, relative_sensitivities, SensitivityBundle, SensitivityOptions,
};
use phasekit::spectral::wrap_pm_pi;
use phasekit::Error;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::output::{Cell, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Orbit,
    Prc,
    Sens,
    Entrain,
    Robust,
    Pipeline,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Orbit => "orbit",
            Stage::Prc => "prc",
            Stage::Sens => "sens",
            Stage::Entrain => "entrain",
            Stage::Robust => "robust",
            Stage::Pipeline => "pipeline",
        })
    }
}

impl Stage {
    fn depth(self) -> u8 {
        match self {
            Stage::Orbit => 0,
            Stage::Prc => 1,
            Stage::Sens => 2,
            Stage::Entrain => 3,
            Stage::Robust | Stage::Pipeline => 4,
        }
    }

    fn emits(self, table_stage: Stage) -> bool {
        self == Stage::Pipeline || self == table_stage
    }
}

/// Validated configuration with the model's defaults filled in.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub model: ModelDefinition,
    pub params: ParameterVector,
    pub hash: String,
}

/// Everything the solvers need; fails before any solve when the
/// configuration is invalid.
pub fn resolve(config: &RunConfig) -> Result<ResolvedRun, CliError> {
    let registry = ModelRegistry::builtin();
    let (model, params) = config.resolve(&registry)?;
    let mut config = config.clone();
    config.params = params.iter().map(|(k, v)| (k.to_string(), v)).collect();
    let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Output(e.to_string()))?;
    let digest = Sha256::digest(&canonical);
    let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(ResolvedRun {
        config,
        model,
        params,
        hash,
    })
}

pub struct RunOutput {
    pub tables: Vec<Table>,
    /// Contents of `run.json`.
    pub meta: Value,
}

struct Options {
    orbit: OrbitOptions,
    prc: PrcOptions,
    sens: SensitivityOptions,
}

fn options(cfg: &RunConfig) -> Options {
    Options {
        orbit: OrbitOptions {
            grid: cfg.grid,
            tol: cfg.tol,
            newton_tol: cfg.newton_tol,
            ..OrbitOptions::default()
        },
        prc: PrcOptions {
            tol: cfg.tol,
            convergence: cfg.prc.convergence,
            ..PrcOptions::default()
        },
        sens: SensitivityOptions {
            tol: cfg.tol,
            ..SensitivityOptions::default()
        },
    }
}

/// Runs `stage` and everything it depends on. `jobs = 0` lets the pool
/// pick its own size.
pub fn execute(stage: Stage, run: &ResolvedRun, jobs: usize) -> Result<RunOutput, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    pool.install(|| execute_in_pool(stage, run))
}

fn execute_in_pool(stage: Stage, run: &ResolvedRun) -> Result<RunOutput, CliError> {
    let cfg = &run.config;
    let model = &run.model;
    let params = &run.params;
    let opts = options(cfg);
    let mut tables = Vec::new();
    let mut meta = Map::new();
    meta.insert("version".into(), json!(VERSION));
    meta.insert("config_hash".into(), json!(run.hash));
    meta.insert("command".into(), json!(stage.to_string()));
    meta.insert(
        "config".into(),
        serde_json::to_value(cfg).map_err(|e| CliError::Output(e.to_string()))?,
    );

    let orbit = find_periodic_orbit(model, params, model.seed(), &opts.orbit)?;
    meta.insert("orbit".into(), orbit_summary(&orbit));
    if stage.emits(Stage::Orbit) {
        tables.push(orbit_table(&orbit));
    }
    if stage.depth() == 0 {
        return Ok(finish(tables, meta));
    }

    let direct_only = stage == Stage::Prc && cfg.prc.method == PrcMethod::Direct;
    let prc = if direct_only {
        None
    } else {
        let prc = compute_iprc(&orbit, model, params, &opts.prc)?;
        meta.insert(
            "prc".into(),
            json!({
                "max_normalization_residual": prc.max_normalization_residual(),
                "periodicity_defect": prc.periodicity_defect,
            }),
        );
        if stage.emits(Stage::Prc) {
            tables.push(iprc_table(&prc));
        }
        Some(prc)
    };
    if stage.emits(Stage::Prc) && cfg.prc.method != PrcMethod::Adjoint {
        let name = if cfg.prc.method == PrcMethod::Direct { "prc" } else { "prc_direct" };
        tables.push(direct_table(name, &orbit, prc.as_ref(), run, &opts)?);
    }
    if stage.depth() == 1 {
        return Ok(finish(tables, meta));
    }
    let prc = prc.expect("adjoint iPRC is computed for every later stage");

    let selected = cfg.selected_parameters(params);
    let absolute: Vec<SensitivityBundle> = selected
        .par_iter()
        .map(|&k| compute_sensitivity(&orbit, &prc, model, params, k, &opts.sens))
        .collect::<Result<_, Error>>()?;
    let bundles = if cfg.relative {
        absolute
            .iter()
            .map(|b| relative_sensitivities(b, params))
            .collect::<Result<Vec<_>, Error>>()?
    } else {
        absolute.clone()
    };
    meta.insert("relative".into(), json!(cfg.relative));
    if stage.emits(Stage::Sens) {
        let fd = if cfg.check_fd {
            Some(fd_checks(run, &absolute, &opts)?)
        } else {
            None
        };
        tables.push(sens_summary(run, &bundles, fd.as_deref()));
        tables.push(sens_curves(&orbit, &bundles));
    }
    if stage.depth() == 2 {
        return Ok(finish(tables, meta));
    }

    let omega_u = orbit.omega - cfg.detune;
    if !(omega_u > 0.0) {
        return Err(Error::Config(format!(
            "detune {} leaves no positive forcing frequency (omega = {})",
            cfg.detune, orbit.omega
        ))
        .into());
    }
    let input = InputWaveform::new(cfg.input.clone(), omega_u)?;
    let gamma = coupling_from_prc(&prc, &input)?;
    let mut locking = locking_points(&gamma, cfg.detune, cfg.epsilon)?;
    if !locking.drifts() {
        attach_sensitivities(
            &mut locking,
            &gamma,
            &input,
            bundles
                .iter()
                .map(|b| (b.k, b.name.as_str(), b.s_omega, b.z_q.as_slice())),
        )?;
    }
    meta.insert(
        "entrainment".into(),
        json!({
            "omega_u": omega_u,
            "detuning": cfg.detune,
            "epsilon": cfg.epsilon,
            "drifts": locking.drifts(),
            "chi": locking.selected_root().map(|r| r.chi),
        }),
    );
    if stage.emits(Stage::Entrain) {
        tables.push(gamma_table(&gamma, &locking));
        tables.push(locking_table(&locking));
        tables.push(locking_sens_table(&locking));
        if cfg.validate {
            let sim = simulate_entrainment(
                model,
                params,
                &orbit,
                &input,
                cfg.epsilon,
                &orbit.state(0),
                cfg.periods,
                &opts.prc,
            )?;
            let mut t = Table::new("simulation", ["t", "chi", "chi_unwrapped"]);
            for i in 0..sim.times.len() {
                t.push(vec![sim.times[i].into(), sim.chi[i].into(), sim.chi_unwrapped[i].into()]);
            }
            tables.push(t);
            let predicted = locking.selected_root().map(|r| r.chi);
            meta.insert(
                "validation".into(),
                json!({
                    "final_chi": sim.final_chi,
                    "locked": sim.locked,
                    "slips": sim.slips,
                    "predicted_chi": predicted,
                    "error": predicted.map(|c| wrap_pm_pi(sim.final_chi - c).abs()),
                }),
            );
        }
    }
    if stage.depth() == 3 {
        return Ok(finish(tables, meta));
    }

    if locking.drifts() {
        return Err(Error::Precondition(
            "the forcing does not entrain the oscillator (no stable locking point); \
             entrainment sensitivities and the ranking need one"
                .into(),
        )
        .into());
    }
    let report = measure(&bundles, Some(&locking), |name| cfg.group_of(model, name))?;
    let norm = normalize(&report)?;
    let ranking = rank_and_partition(&norm, cfg.threshold)?;

    let mut summary = Table::new(
        "robustness",
        [
            "rank",
            "param",
            "group",
            "value",
            "S_omega",
            "S_T",
            "R_omega",
            "R_T",
            "R_q",
            "R_chi",
            "S_chi",
            "S_chi_omega",
            "S_chi_gamma",
            "norm_R_omega",
            "norm_R_T",
            "norm_R_q",
            "norm_R_chi",
            "period_dominant",
            "retained",
        ],
    );
    let mut bars = Table::new(
        "bars",
        ["rank", "param", "group", "norm_S_chi", "norm_S_chi_omega", "norm_S_chi_gamma", "retained"],
    );
    for (rank, &i) in ranking.order.iter().enumerate() {
        let r = &report.rows[i];
        let n = &norm.rows[i];
        let retained = ranking.retained.contains(&i);
        summary.push(vec![
            (rank + 1).into(),
            r.name.as_str().into(),
            r.group.clone().into(),
            params.value(r.k).into(),
            r.s_omega.into(),
            r.s_period.into(),
            r.r_omega.into(),
            r.r_period.into(),
            r.r_q.into(),
            r.r_chi.into(),
            r.s_chi.into(),
            r.s_chi_omega.into(),
            r.s_chi_gamma.into(),
            n.r_omega.into(),
            n.r_period.into(),
            n.r_q.into(),
            n.r_chi.into(),
            n.period_dominant().into(),
            retained.into(),
        ]);
        bars.push(vec![
            (rank + 1).into(),
            n.name.as_str().into(),
            n.group.clone().into(),
            n.s_chi.into(),
            n.s_chi_omega.into(),
            n.s_chi_gamma.into(),
            retained.into(),
        ]);
    }
    let mut scatter = Table::new("scatter", ["param", "group", "norm_R_omega", "norm_R_q", "period_dominant"]);
    for n in &norm.rows {
        scatter.push(vec![
            n.name.as_str().into(),
            n.group.clone().into(),
            n.r_omega.into(),
            n.r_q.into(),
            n.period_dominant().into(),
        ]);
    }
    meta.insert(
        "ranking".into(),
        json!({
            "threshold": ranking.threshold,
            "order": ranking.order.iter().map(|&i| &norm.rows[i].name).collect::<Vec<_>>(),
            "retained": ranking.retained.iter().map(|&i| &norm.rows[i].name).collect::<Vec<_>>(),
        }),
    );
    tables.extend([summary, scatter, bars]);
    Ok(finish(tables, meta))
}

fn finish(tables: Vec<Table>, mut meta: Map<String, Value>) -> RunOutput {
    meta.insert(
        "tables".into(),
        json!(tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>()),
    );
    RunOutput {
        tables,
        meta: Value::Object(meta),
    }
}

fn orbit_summary(orbit: &PeriodicOrbit) -> Value {
    json!({
        "omega": orbit.omega,
        "period": orbit.period,
        "trivial_multiplier": [orbit.trivial_multiplier.re, orbit.trivial_multiplier.im],
        "multipliers": orbit.multipliers.iter().map(|m| [m.re, m.im]).collect::<Vec<_>>(),
        "hyperbolic": orbit.hyperbolic,
        "periodicity_residual": orbit.periodicity_residual,
        "newton_iterations": orbit.newton_iterations,
        "diameter": orbit.diameter(),
    })
}

fn state_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn orbit_table(orbit: &PeriodicOrbit) -> Table {
    let mut t = Table::new(
        "orbit",
        std::iter::once("theta".to_string()).chain(state_columns("x", orbit.dim())),
    );
    for (j, theta) in orbit.phases().into_iter().enumerate() {
        let mut row = vec![Cell::Num(theta)];
        row.extend(orbit.state(j).into_iter().map(Cell::Num));
        t.push(row);
    }
    t
}

fn iprc_table(prc: &PhaseResponse) -> Table {
    let n = prc.state.nrows();
    let mut t = Table::new(
        "prc",
        ["theta".to_string(), "q".to_string()]
            .into_iter()
            .chain(state_columns("q_x", n)),
    );
    let grid = prc.grid_size();
    for j in 0..grid {
        let mut row = vec![Cell::Num(2.0 * PI * j as f64 / grid as f64), Cell::Num(prc.input[j])];
        row.extend(prc.state_at(j).into_iter().map(Cell::Num));
        t.push(row);
    }
    t
}

fn direct_table(
    name: &str,
    orbit: &PeriodicOrbit,
    prc: Option<&PhaseResponse>,
    run: &ResolvedRun,
    opts: &Options,
) -> Result<Table, CliError> {
    let cfg = &run.config;
    let phases = cfg.prc.phases.phases();
    let samples = compute_finite_prc(orbit, &run.model, &run.params, cfg.prc.epsilon, &phases, &opts.prc)?;
    let q = prc.map(|p| CouplingFunction::from_samples(p.input.as_slice().to_vec()));
    let mut t = Table::new(
        name,
        ["theta", "eps", "dtheta", "dtheta_over_eps", "q", "periods", "residual", "error"],
    );
    for (theta, s) in phases.iter().zip(samples) {
        let q_at = q.as_ref().map(|q| q.eval(*theta));
        match s {
            Ok(s) => t.push(vec![
                s.theta.into(),
                s.epsilon.into(),
                s.shift.into(),
                (s.shift / s.epsilon).into(),
                q_at.into(),
                s.periods.into(),
                s.residual.into(),
                Cell::Empty,
            ]),
            Err(e) => t.push(vec![
                (*theta).into(),
                cfg.prc.epsilon.into(),
                Cell::Empty,
                Cell::Empty,
                q_at.into(),
                Cell::Empty,
                Cell::Empty,
                e.kind().into(),
            ]),
        }
    }
    Ok(t)
}

/// Relative errors of the adjoint bundles against central differences.
struct FdCheck {
    s_omega: f64,
    err_s_omega: f64,
    err_z_x: f64,
    err_z_q: f64,
}

fn rel_sup(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 { diff / scale } else { diff }
}

fn fd_checks(run: &ResolvedRun, absolute: &[SensitivityBundle], opts: &Options) -> Result<Vec<FdCheck>, CliError> {
    absolute
        .par_iter()
        .map(|b| {
            let h = run.config.fd_step * run.params.value(b.k).abs().max(1.0);
            let fd = finite_difference_oracle(&run.model, &run.params, b.k, h, &opts.orbit, &opts.prc)?;
            Ok(FdCheck {
                s_omega: fd.s_omega,
                err_s_omega: rel_sup(&[b.s_omega], &[fd.s_omega]),
                err_z_x: rel_sup(b.z_x.as_slice(), fd.z_x.as_slice()),
                err_z_q: rel_sup(b.z_q.as_slice(), fd.z_q.as_slice()),
            })
        })
        .collect()
}

fn sens_summary(run: &ResolvedRun, bundles: &[SensitivityBundle], fd: Option<&[FdCheck]>) -> Table {
    let mut cols = vec!["param", "group", "value", "S_omega", "S_T", "R_omega", "R_q"];
    if fd.is_some() {
        cols.extend(["fd_S_omega", "fd_err_S_omega", "fd_err_Z_x", "fd_err_Z_q"]);
    }
    let mut t = Table::new("sens_summary", cols);
    for (i, b) in bundles.iter().enumerate() {
        let mut row = vec![
            b.name.as_str().into(),
            run.config.group_of(&run.model, &b.name).into(),
            run.params.value(b.k).into(),
            b.s_omega.into(),
            b.s_period().into(),
            b.s_omega.abs().into(),
            phasekit::robustness::l2_norm(b.z_q.as_slice()).into(),
        ];
        if let Some(fd) = fd {
            // finite differences are taken in absolute terms
            let f = &fd[i];
            row.extend([f.s_omega.into(), f.err_s_omega.into(), f.err_z_x.into(), f.err_z_q.into()]);
        }
        t.push(row);
    }
    t
}

fn sens_curves(orbit: &PeriodicOrbit, bundles: &[SensitivityBundle]) -> Table {
    let phases = orbit.phases();
    let mut t = Table::new("sens_curves", ["param", "theta", "Z_q"]);
    for b in bundles {
        for (j, theta) in phases.iter().enumerate() {
            t.push(vec![b.name.as_str().into(), (*theta).into(), b.z_q[j].into()]);
        }
    }
    t
}

fn gamma_table(gamma: &CouplingFunction, locking: &LockingReport) -> Table {
    let mut t = Table::new("gamma", ["chi", "gamma", "dgamma", "V"]);
    for (j, chi) in gamma.phases().into_iter().enumerate() {
        t.push(vec![
            chi.into(),
            gamma.values[j].into(),
            gamma.derivative[j].into(),
            (locking.detuning + locking.epsilon * gamma.values[j]).into(),
        ]);
    }
    t
}

fn locking_table(locking: &LockingReport) -> Table {
    let mut t = Table::new("locking", ["root", "chi", "slope", "stable", "selected"]);
    for (i, r) in locking.roots.iter().enumerate() {
        t.push(vec![
            i.into(),
            r.chi.into(),
            r.slope.into(),
            r.stable.into(),
            (locking.selected == Some(i)).into(),
        ]);
    }
    t
}

fn locking_sens_table(locking: &LockingReport) -> Table {
    let mut t = Table::new("locking_sens", ["param", "S_chi", "S_chi_omega", "S_chi_gamma"]);
    for s in &locking.sensitivities {
        t.push(vec![
            s.name.as_str().into(),
            s.s_chi.into(),
            s.from_omega.into(),
            s.from_gamma.into(),
        ]);
    }
    t
}

//! JSON experiment configuration, embedded presets, dry-run validation and
//! the orchestration that turns a configuration into artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    convergence_study, inverse_floor, metastability_probe, rescaled_ensemble, total_monomers, uniform_times,
    ConvergenceSetup, InitialProfile, MetastabilitySetup,
};
use crate::error::{Error, Result};
use crate::kinetics::{
    classify_regime, discrete_rates, read_rate_csv, AssumptionCheck, PowerLaws, RateFn, RateModel, Regime,
};
use crate::ls::{LsGrid, LsSolver};
use crate::output::{sha256_hex, Artifacts, Table};
use crate::row;
use crate::ssa::{first_passage_times, PassageSetup, RawCoefficients};
use crate::stationary::{
    sample_frozen_bath, stationary_states, verify_stationary_measure_support, FrozenBathRun, SupportReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
    Convergence,
    Stationary,
    Custom,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        intercept: f64,
    },
    PowerLaw {
        prefactor: f64,
        exponent: f64,
    },
    /// Column of the CSV named by `rates.table`.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub a: RateSpec,
    pub b: RateSpec,
    pub alpha: f64,
    pub beta: f64,
    /// `x,a,b` CSV, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    /// Required for tabulated laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laws: Option<PowerLaws>,
}

impl RatesConfig {
    pub fn model(&self, base_dir: &Path) -> Result<RateModel> {
        let tables = match &self.table {
            Some(p) => Some(read_rate_csv(&base_dir.join(p))?),
            None => None,
        };
        let law = |spec: &RateSpec, column: usize| -> Result<RateFn> {
            Ok(match spec {
                RateSpec::Constant { value } => RateFn::Constant(*value),
                RateSpec::Linear { slope, intercept } => RateFn::Linear { slope: *slope, intercept: *intercept },
                RateSpec::PowerLaw { prefactor, exponent } => {
                    RateFn::PowerLaw { prefactor: *prefactor, exponent: *exponent }
                }
                RateSpec::Table => {
                    let (a, b) =
                        tables.as_ref().ok_or_else(|| Error::Config("tabulated rate needs rates.table".into()))?;
                    RateFn::Table(std::sync::Arc::new(if column == 0 { a.clone() } else { b.clone() }))
                }
            })
        };
        let (a, b) = (law(&self.a, 0)?, law(&self.b, 1)?);
        match self.laws {
            Some(laws) => RateModel::with_laws(a, b, self.alpha, self.beta, laws),
            None => RateModel::new(a, b, self.alpha, self.beta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: usize,
    pub x_max: f64,
    pub cfl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Refuse runs whose predicted event count exceeds this.
    pub ceiling: f64,
    /// Warn above this predicted event count.
    pub warn: f64,
    /// Per-trajectory stall guard.
    pub per_trajectory: u64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { ceiling: 1e10, warn: 1e8, per_trajectory: 1_000_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageConfig {
    /// `T_ρ` waits for `max(1, ⌊rho/ε⌋)` clusters of size `⌊1/ε⌋`.
    pub rho: f64,
    /// Censoring time in units of `1/ε` of raw time.
    pub time_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetastabilityConfig {
    pub threshold: f64,
    pub band: f64,
    pub time_limit: f64,
    /// Trajectories whose `u(t)` is written on `[0, t_end]`.
    pub sample_trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenBathConfig {
    pub burn_in: f64,
    pub window: f64,
    /// Relative half-window drift allowed on top of four standard errors.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryConfig {
    pub c: f64,
    pub n_max: usize,
    pub q0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_bath: Option<FrozenBathConfig>,
}

fn default_n_out() -> usize {
    64
}

fn default_occupation() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub rates: RatesConfig,
    pub eps: Vec<f64>,
    /// Rescaled total mass; the chains start with `round(m/ε²)` particles.
    pub m: f64,
    #[serde(default)]
    pub initial: InitialProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default = "default_occupation")]
    pub occupation_n_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<PassageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metastability: Option<MetastabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationaryConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }

    /// The embedded configuration named `fig1`, `fig2` or `fig3`.
    pub fn preset(name: &str) -> Result<Self> {
        let constant = |value| RateSpec::Constant { value };
        let base = |experiment, a, b, eps: Vec<f64>, m, n_traj| ExperimentConfig {
            experiment,
            rates: RatesConfig { a, b, alpha: 1.0, beta: 1.0, table: None, laws: None },
            eps,
            m,
            initial: InitialProfile::pure_monomer(),
            t_end: None,
            n_out: 64,
            grid: None,
            ensemble: EnsembleConfig { n_traj, seed: 20_240_601, workers: 0 },
            budget: BudgetConfig::default(),
            occupation_n_max: 4,
            output_dir: None,
            passage: None,
            metastability: None,
            stationary: None,
        };
        match name {
            "fig1" => Ok(ExperimentConfig {
                t_end: Some(1.0),
                grid: Some(GridConfig { cells: 800, x_max: 4.0, cfl: 0.9 }),
                ..base(ExperimentKind::Fig1, constant(1.0), constant(2.0), vec![0.04, 0.02, 0.01], 3.0, 50)
            }),
            "fig2" => Ok(ExperimentConfig {
                passage: Some(PassageConfig { rho: 0.01, time_limit: 5.0 }),
                ..base(
                    ExperimentKind::Fig2,
                    constant(5.0),
                    RateSpec::Linear { slope: 1.0, intercept: 0.0 },
                    vec![0.1, 0.07, 0.05, 0.035, 0.025],
                    1.0,
                    200,
                )
            }),
            "fig3" => Ok(ExperimentConfig {
                t_end: Some(60.0),
                n_out: 240,
                metastability: Some(MetastabilityConfig {
                    threshold: 0.5,
                    band: 0.1,
                    time_limit: 2000.0,
                    sample_trajectories: 10,
                }),
                ..base(
                    ExperimentKind::Fig3,
                    RateSpec::Linear { slope: 1.0, intercept: 0.0 },
                    constant(1.0),
                    vec![0.04, 0.025],
                    3.0,
                    50,
                )
            }),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected fig1, fig2 or fig3"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub experiment: String,
    pub regime: Option<String>,
    pub rho: Option<String>,
    /// Largest stable LS time step at `u = m`.
    pub cfl_dt: Option<f64>,
    /// Heuristic `Σ n_traj · M · T · max(a m + b)` over the ε list.
    pub predicted_events: f64,
    pub warnings: Vec<String>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn needs_grid(kind: ExperimentKind) -> bool {
    matches!(kind, ExperimentKind::Fig1 | ExperimentKind::Convergence | ExperimentKind::Custom)
}

/// Simulated horizon used by the budget heuristic.
fn horizon(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.experiment {
        ExperimentKind::Fig2 => cfg.passage.map(|p| p.time_limit),
        ExperimentKind::Fig3 => cfg.t_end.or(cfg.metastability.map(|m| m.time_limit)),
        ExperimentKind::Stationary => cfg.stationary.and_then(|s| s.frozen_bath).map(|f| f.burn_in + f.window),
        _ => cfg.t_end,
    }
}

/// Dry run: every problem is collected, not just the first.
pub fn validate(cfg: &ExperimentConfig, base_dir: &Path) -> ValidationReport {
    let mut rep = ValidationReport { experiment: cfg.experiment.to_string(), ..Default::default() };
    let mut bad = |msg: String| rep.violations.push(msg);
    if cfg.eps.is_empty() && cfg.experiment != ExperimentKind::Stationary {
        bad("eps list is empty".into());
    }
    for &e in &cfg.eps {
        if !(e > 0.0 && e <= 1.0) {
            bad(format!("eps = {e} must lie in (0, 1]"));
        }
    }
    if !(cfg.m > 0.0 && cfg.m.is_finite()) {
        bad(format!("m = {} must be positive", cfg.m));
    }
    if cfg.n_out == 0 {
        bad("n_out must be >= 1".into());
    }
    if cfg.ensemble.n_traj < 2 {
        bad(format!("n_traj = {} must be >= 2 for standard errors", cfg.ensemble.n_traj));
    }
    if let Err(e) = cfg.initial.validate() {
        bad(e.to_string());
    }
    let wants_t = matches!(
        cfg.experiment,
        ExperimentKind::Fig1 | ExperimentKind::Fig3 | ExperimentKind::Convergence | ExperimentKind::Custom
    );
    match cfg.t_end {
        Some(t) if !(t > 0.0 && t.is_finite()) => bad(format!("t_end = {t} must be positive")),
        None if wants_t => bad(format!("{} needs t_end", cfg.experiment)),
        _ => {}
    }
    let grid = match cfg.grid {
        Some(g) => match LsGrid::new(g.x_max, g.cells) {
            Ok(grid) if g.cfl > 0.0 && g.cfl <= 1.0 => Some((grid, g.cfl)),
            Ok(_) => {
                bad(format!("cfl = {} must lie in (0, 1]", g.cfl));
                None
            }
            Err(e) => {
                bad(e.to_string());
                None
            }
        },
        None if needs_grid(cfg.experiment) => {
            bad(format!("{} needs a grid block", cfg.experiment));
            None
        }
        None => None,
    };
    match cfg.experiment {
        ExperimentKind::Fig2 if cfg.passage.is_none() => bad("fig2 needs a passage block".into()),
        ExperimentKind::Fig3 if cfg.metastability.is_none() => bad("fig3 needs a metastability block".into()),
        ExperimentKind::Stationary if cfg.stationary.is_none() => bad("stationary needs a stationary block".into()),
        _ => {}
    }
    if let Some(p) = cfg.passage {
        if !(p.rho >= 0.0 && p.time_limit > 0.0) {
            bad("passage needs rho >= 0 and time_limit > 0".into());
        }
    }
    if let Some(ms) = cfg.metastability {
        if !(0.0..=1.0).contains(&ms.threshold) || !(0.0..=1.0).contains(&ms.band) || !(ms.time_limit > 0.0) {
            bad("metastability needs threshold, band in [0, 1] and time_limit > 0".into());
        }
    }

    let model = match cfg.rates.model(base_dir) {
        Ok(m) => Some(m),
        Err(e) => {
            bad(format!("{}: {e}", e.kind()));
            None
        }
    };
    let mut max_rate = None;
    if let Some(model) = &model {
        match classify_regime(model) {
            Ok(regime) => {
                rep.regime = Some(regime.name().to_owned());
                rep.rho = Some(regime.rho().to_string());
                if let Some(st) = cfg.stationary {
                    let check = discrete_rates(model, st.n_max.max(1) + 1)
                        .and_then(|rates| stationary_states(&regime, &rates, st.c, st.q0, st.n_max.max(1)));
                    if let Err(e) = check {
                        rep.violations.push(format!("{}: {e}", e.kind()));
                    }
                }
            }
            Err(e) => rep.violations.push(format!("{}: {e}", e.kind())),
        }
        let x_hi = cfg.grid.map_or(1.0, |g| g.x_max);
        let rate = (0..=256)
            .map(|k| {
                let x = x_hi * k as f64 / 256.0;
                model.a.eval(x).abs() * cfg.m + model.b.eval(x).abs()
            })
            .fold(0.0, f64::max);
        max_rate = Some(rate);
        let check = AssumptionCheck { x_hi: x_hi.max(1.0), ..AssumptionCheck::default() };
        rep.warnings.extend(model.check_assumptions(&check));
        if let Some((grid, cfl)) = grid {
            match LsSolver::new(model.clone(), cfl) {
                Ok(mut solver) => rep.cfl_dt = Some(solver.stable_dt(&grid, cfg.m)),
                Err(e) => rep.violations.push(e.to_string()),
            }
        }
    }
    if let (Some(rate), Some(t)) = (max_rate, horizon(cfg)) {
        let n_traj = cfg.ensemble.n_traj as f64;
        let c = cfg.stationary.map_or(cfg.m, |s| s.c);
        rep.predicted_events = cfg.eps.iter().map(|&e| n_traj * total_monomers(c, e) as f64 * t * rate).sum();
        if rep.predicted_events > cfg.budget.ceiling {
            rep.violations.push(format!(
                "predicted {:.2e} events exceed the budget ceiling {:.2e}",
                rep.predicted_events, cfg.budget.ceiling
            ));
        } else if rep.predicted_events > cfg.budget.warn {
            rep.warnings.push(format!("predicted {:.2e} events; this run will be slow", rep.predicted_events));
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub modules: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub artifacts: Artifacts,
    pub checks: Vec<Check>,
    /// Diagnostics that are worth reporting but are not pass/fail.
    pub flags: Vec<String>,
    pub report: ValidationReport,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: RateModel,
    regime: Regime,
    artifacts: Artifacts,
    checks: Vec<Check>,
    flags: Vec<String>,
}

impl Context<'_> {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_owned(), passed, detail });
    }
}

/// Validates and runs `cfg`. Artifacts are returned in memory; nothing is
/// written here.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path) -> Result<RunOutput> {
    let report = validate(cfg, base_dir);
    if !report.is_ok() {
        return Err(Error::Config(report.violations.join("; ")));
    }
    let model = cfg.rates.model(base_dir)?;
    let regime = classify_regime(&model)?;
    let mut ctx =
        Context { cfg, model, regime, artifacts: Artifacts::default(), checks: Vec::new(), flags: Vec::new() };
    match cfg.experiment {
        ExperimentKind::Fig1 | ExperimentKind::Convergence => run_convergence(&mut ctx)?,
        ExperimentKind::Fig2 => run_passage(&mut ctx)?,
        ExperimentKind::Fig3 => run_metastability(&mut ctx)?,
        ExperimentKind::Stationary => run_stationary(&mut ctx)?,
        ExperimentKind::Custom => run_custom(&mut ctx)?,
    }
    let mut artifacts = ctx.artifacts;
    let checks = ctx.checks;
    let flags = ctx.flags;
    let hashes = artifacts.names().map(|n| (n.to_owned(), sha256_hex(artifacts.get(n).unwrap_or_default()))).collect();
    let version = env!("CARGO_PKG_VERSION").to_owned();
    let manifest = Manifest {
        experiment: cfg.experiment.to_string(),
        config_hash: cfg.hash()?,
        seed: cfg.ensemble.seed,
        version: version.clone(),
        modules: [(env!("CARGO_PKG_NAME").to_owned(), version)].into_iter().collect(),
        artifacts: hashes,
    };
    artifacts.json("manifest.json", &manifest)?;
    artifacts.json("summary.json", &serde_json::json!({ "validation": report, "checks": checks, "flags": flags }))?;
    artifacts.json("config.json", cfg)?;
    Ok(RunOutput { artifacts, checks, flags, report })
}

fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.4e}")).collect();
    format!("[{}]", items.join(", "))
}

fn convergence_setup(ctx: &Context<'_>) -> Result<ConvergenceSetup> {
    let cfg = ctx.cfg;
    let g = cfg.grid.ok_or_else(|| Error::Config("missing grid".into()))?;
    Ok(ConvergenceSetup {
        model: ctx.model.clone(),
        m: cfg.m,
        eps_list: cfg.eps.clone(),
        n_traj: cfg.ensemble.n_traj,
        t_end: cfg.t_end.unwrap_or(1.0),
        n_out: cfg.n_out,
        seed: cfg.ensemble.seed,
        workers: cfg.ensemble.workers,
        event_budget: cfg.budget.per_trajectory,
        initial: cfg.initial.clone(),
        grid: LsGrid::new(g.x_max, g.cells)?,
        cfl: g.cfl,
        occupation_n_max: cfg.occupation_n_max,
        full_mass_check: false,
    })
}

fn series_table(summaries: &[crate::analysis::EnsembleSummary]) -> Table {
    let mut t = Table::new(&["eps", "t", "u_mean", "u_se", "number_mean", "number_se", "mass_mean", "mass_se"]);
    for s in summaries {
        for k in 0..s.times.len() {
            t.push(row![
                s.eps,
                s.times[k],
                s.u_mean[k],
                s.u_se[k],
                s.number_mean[k],
                s.number_se[k],
                s.mass_mean[k],
                s.mass_se[k]
            ]);
        }
    }
    t
}

fn run_convergence(ctx: &mut Context<'_>) -> Result<()> {
    let setup = convergence_setup(ctx)?;
    let study = convergence_study(&setup)?;
    let m = ctx.cfg.m;

    let reference = &study.reference;
    let mut t = Table::new(&["t", "u_ode", "number_ode", "u_pde", "number_pde", "mass_pde"]);
    for (k, p) in reference.pde.iter().enumerate() {
        let ode = reference.ode.as_ref().and_then(|o| o.get(k));
        t.push(row![p.t, ode.map(|o| o.u), ode.map(|o| o.n), p.u, p.number, p.first_moment]);
    }
    ctx.artifacts.table("reference.csv", &t)?;

    let state = &reference.final_profile;
    let mut t = Table::new(&["x", "density"]);
    for (j, f) in state.f.iter().enumerate() {
        t.push(row![state.grid.center(j), *f]);
    }
    ctx.artifacts.table("profile_pde.csv", &t)?;

    let mut t = Table::new(&["eps", "x", "weight"]);
    for (level, snap) in study.snapshots.iter().enumerate() {
        for &(x, w) in &snap.atoms {
            t.push(row![study.rows[level].eps, x, w]);
        }
    }
    ctx.artifacts.table("snapshot.csv", &t)?;
    ctx.artifacts.table("series.csv", &series_table(&study.summaries))?;

    let mut t = Table::new(&[
        "eps",
        "n_traj",
        "error",
        "order",
        "flat",
        "number_gap",
        "mass_gap",
        "deviating",
        "events",
        "mass_failures",
    ]);
    for (k, r) in study.rows.iter().enumerate() {
        let order = k.checked_sub(1).map(|j| study.orders[j]);
        t.push(row![
            r.eps,
            r.n_traj,
            r.error,
            order,
            r.distance.flat,
            r.distance.number_gap,
            r.distance.mass_gap,
            r.deviating,
            r.events,
            r.mass_failures
        ]);
    }
    ctx.artifacts.table("convergence.csv", &t)?;

    let mut t = Table::new(&["eps", "size", "scaled_occupancy", "se"]);
    for r in &study.rows {
        if let (Some(mean), Some(se)) = (&r.occupancy, &r.occupancy_se) {
            for (n, (v, s)) in mean.iter().zip(se).enumerate() {
                t.push(row![r.eps, n + 2, *v, *s]);
            }
        }
    }
    ctx.artifacts.table("occupancy.csv", &t)?;

    let errors: Vec<f64> = study.rows.iter().map(|r| r.error).collect();
    ctx.check("error_decreasing", study.monotone, format!("e(eps) = {}", list(&errors)));
    if let Some(last) = study.rows.last() {
        ctx.check(
            "finest_error_within_5pct",
            last.error <= 0.05 * m,
            format!("e({}) = {:.4e}, 5% of m = {:.4e}", last.eps, last.error, 0.05 * m),
        );
    }
    let k2: Vec<Option<f64>> =
        study.rows.iter().map(|r| r.occupancy.as_ref().and_then(|o| o.first().copied())).collect();
    if k2.iter().all(Option::is_some) {
        let k2: Vec<f64> = k2.into_iter().flatten().collect();
        ctx.check(
            "boundary_occupancy_decreasing",
            k2.windows(2).all(|w| w[1] < w[0]),
            format!("eps<k2> = {}", list(&k2)),
        );
    }
    ctx.check(
        "mass_identity",
        study.summaries.iter().all(|s| s.mass_identity),
        "integer mass identity at every output time".into(),
    );
    for r in study.rows.iter().filter(|r| r.deviating > 0) {
        ctx.flags.push(format!("eps = {}: {} of {} trajectories left u_ref ± 10% m", r.eps, r.deviating, r.n_traj));
    }
    Ok(())
}

fn run_passage(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let p = cfg.passage.ok_or_else(|| Error::Config("missing passage block".into()))?;
    let model = ctx.model.clone();
    let setups: Vec<PassageSetup> = cfg
        .eps
        .iter()
        .map(|&eps| {
            let (a, b) = (model.a.clone(), model.b.clone());
            let e2 = eps * eps;
            PassageSetup {
                eps,
                coeffs: RawCoefficients::new(
                    e2 * e2 * model.alpha,
                    e2 * model.beta,
                    move |i| e2 * a.eval(eps * i as f64),
                    move |i| b.eval(eps * i as f64),
                ),
                mass: total_monomers(cfg.m, eps),
                target_size: inverse_floor(eps),
                rho_count: ((p.rho / eps + 1e-9).floor() as u64).max(1),
            }
        })
        .collect();
    let time_limits: Vec<f64> = cfg.eps.iter().map(|e| p.time_limit / e).collect();
    let mut rows = Vec::with_capacity(setups.len());
    for (setup, limit) in setups.iter().zip(&time_limits) {
        let level = first_passage_times(
            std::slice::from_ref(setup),
            cfg.ensemble.n_traj,
            cfg.ensemble.seed.wrapping_add(rows.len() as u64),
            cfg.ensemble.workers,
            *limit,
            cfg.budget.per_trajectory,
        )?;
        rows.extend(level);
    }
    let mut t = Table::new(&[
        "eps",
        "mass",
        "target_size",
        "rho_count",
        "n_traj",
        "eps_t0",
        "se_t0",
        "eps_trho",
        "se_trho",
        "censored",
    ]);
    for (r, s) in rows.iter().zip(&setups) {
        t.push(row![
            r.eps,
            s.mass,
            s.target_size,
            s.rho_count,
            r.n_traj,
            r.mean_scaled_t0,
            r.se_t0,
            r.mean_scaled_trho,
            r.se_trho,
            r.n_censored
        ]);
    }
    ctx.artifacts.table("passage.csv", &t)?;
    if let [.., prev, last] = rows.as_slice() {
        let change = (last.mean_scaled_t0 - prev.mean_scaled_t0).abs() / prev.mean_scaled_t0;
        ctx.check(
            "t0_plateau",
            change < 0.25,
            format!(
                "eps T0: {:.4e} ± {:.1e} -> {:.4e} ± {:.1e} ({:.1}%)",
                prev.mean_scaled_t0,
                prev.se_t0,
                last.mean_scaled_t0,
                last.se_t0,
                100.0 * change
            ),
        );
    }
    let censored: usize = rows.iter().map(|r| r.n_censored).sum();
    ctx.check("no_censoring", censored == 0, format!("{censored} censored trajectories"));
    Ok(())
}

fn run_metastability(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let ms = cfg.metastability.ok_or_else(|| Error::Config("missing metastability block".into()))?;
    let setup = MetastabilitySetup {
        model: ctx.model.clone(),
        m: cfg.m,
        eps_list: cfg.eps.clone(),
        n_traj: cfg.ensemble.n_traj,
        threshold: ms.threshold,
        band: ms.band,
        time_limit: ms.time_limit,
        seed: cfg.ensemble.seed,
        workers: cfg.ensemble.workers,
        event_budget: cfg.budget.per_trajectory,
    };
    let table = metastability_probe(&setup)?;

    let mut t = Table::new(&["eps", "traj", "switch_time", "t0", "band_fraction", "censored"]);
    for r in &table.rows {
        for (k, rec) in r.records.iter().enumerate() {
            t.push(row![r.eps, k, rec.switch_time, rec.t0, rec.band_fraction, rec.censored]);
        }
    }
    ctx.artifacts.table("switch_times.csv", &t)?;

    let mut t = Table::new(&[
        "eps",
        "n_traj",
        "mean_switch",
        "se_switch",
        "mean_t0",
        "se_t0",
        "censored",
        "min_band_fraction",
        "log_growth",
    ]);
    for (k, r) in table.rows.iter().enumerate() {
        let growth = k.checked_sub(1).map(|j| table.log_growth[j]);
        t.push(row![
            r.eps,
            r.n_traj,
            r.mean_switch,
            r.se_switch,
            r.mean_t0,
            r.se_t0,
            r.n_censored,
            r.min_band_fraction,
            growth
        ]);
    }
    ctx.artifacts.table("metastability.csv", &t)?;

    if ms.sample_trajectories > 0 {
        let t_end = cfg.t_end.unwrap_or(ms.time_limit);
        let grid = LsGrid::new(cfg.grid.map_or(4.0, |g| g.x_max), 1)?;
        let sample = ConvergenceSetup {
            model: ctx.model.clone(),
            m: cfg.m,
            eps_list: cfg.eps.clone(),
            n_traj: ms.sample_trajectories,
            t_end,
            n_out: cfg.n_out,
            seed: cfg.ensemble.seed ^ 0x5A5A_5A5A,
            workers: cfg.ensemble.workers,
            event_budget: cfg.budget.per_trajectory,
            initial: cfg.initial.clone(),
            grid,
            cfl: 1.0,
            occupation_n_max: 1,
            full_mass_check: false,
        };
        let mut t = Table::new(&["eps", "traj", "t", "u"]);
        for (level, &eps) in cfg.eps.iter().enumerate() {
            for (k, rec) in rescaled_ensemble(&sample, eps, None, level as u64)?.iter().enumerate() {
                for (time, u) in uniform_times(t_end, cfg.n_out).iter().zip(rec.u_series()) {
                    t.push(row![eps, k, *time, u]);
                }
            }
        }
        ctx.artifacts.table("trajectories.csv", &t)?;
    }

    let means: Vec<f64> = table.rows.iter().map(|r| r.mean_switch).collect();
    ctx.check(
        "switch_time_increasing",
        means.windows(2).all(|w| w[1] > w[0]),
        format!("mean switch times {}", list(&means)),
    );
    let bands: Vec<f64> = table.rows.iter().map(|r| r.min_band_fraction).collect();
    ctx.check(
        "pre_switch_band",
        bands.iter().all(|b| *b >= 0.9),
        format!("smallest pre-switch band fractions {} (need >= 0.9)", list(&bands)),
    );
    Ok(())
}

fn run_stationary(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let st = cfg.stationary.ok_or_else(|| Error::Config("missing stationary block".into()))?;
    let n_max = st.n_max.max(1);
    let rates = discrete_rates(&ctx.model, n_max + 1)?;
    let profile = stationary_states(&ctx.regime, &rates, st.c, st.q0, n_max)?;
    let mut t = Table::new(&["n", "size", "product", "q"]);
    for (n, q) in profile.q.iter().enumerate() {
        t.push(row![n, n + 2, profile.products.get(n).copied(), *q]);
    }
    ctx.artifacts.table("stationary.csv", &t)?;
    ctx.artifacts.json(
        "stationary_summary.json",
        &serde_json::json!({
            "case": profile.case,
            "regime": ctx.regime.name(),
            "rho": ctx.regime.rho().to_string(),
            "partial_norm": profile.partial_norm,
            "tail_bound": profile.tail_bound,
        }),
    )?;

    let Some(fb) = st.frozen_bath else { return Ok(()) };
    let run = FrozenBathRun {
        model: ctx.model.clone(),
        c: st.c,
        burn_in: fb.burn_in,
        window: fb.window,
        n_max: cfg.occupation_n_max,
        n_traj: cfg.ensemble.n_traj,
        seed: cfg.ensemble.seed,
        workers: cfg.ensemble.workers,
        event_budget: cfg.budget.per_trajectory,
    };
    let samples = cfg.eps.iter().map(|&eps| sample_frozen_bath(&run, eps)).collect::<Result<Vec<_>>>()?;
    let support_rates = discrete_rates(&ctx.model, cfg.occupation_n_max.max(1) + 1)?;
    match verify_stationary_measure_support(&samples, &ctx.regime, &support_rates, st.c, fb.tolerance)? {
        SupportReport::Ratios(tables) => {
            let mut t = Table::new(&["eps", "n", "ratio", "se", "predicted", "z"]);
            let mut worst: f64 = 0.0;
            for (eps, rows) in &tables {
                for r in rows {
                    worst = worst.max(r.z_score().abs());
                    t.push(row![*eps, r.n, r.ratio, r.se, r.predicted, r.z_score()]);
                }
            }
            ctx.artifacts.table("frozen_bath.csv", &t)?;
            ctx.check("ratios_within_3se", worst <= 3.0, format!("largest |z| = {worst:.3}"));
        }
        SupportReport::Vanishing { levels, .. } | SupportReport::Unidentified(levels) => write_levels(ctx, &levels)?,
    }
    Ok(())
}

fn write_levels(ctx: &mut Context<'_>, levels: &[crate::stationary::ScaledOccupancy]) -> Result<()> {
    let mut t = Table::new(&["eps", "size", "scaled_occupancy", "se"]);
    for l in levels {
        for (n, (v, s)) in l.mean.iter().zip(&l.se).enumerate() {
            t.push(row![l.eps, n + 2, *v, *s]);
        }
    }
    ctx.artifacts.table("frozen_bath.csv", &t)?;
    let mut sorted: Vec<_> = levels.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let factors: Vec<f64> = sorted
        .windows(2)
        .flat_map(|w| w[0].mean.iter().zip(&w[1].mean).map(|(c, f)| c / f).collect::<Vec<_>>())
        .collect();
    if !factors.is_empty() {
        let worst = factors.iter().copied().fold(f64::INFINITY, f64::min);
        ctx.check("occupancy_vanishing", worst > 1.0, format!("smallest decrease factor {worst:.3}"));
    }
    Ok(())
}

fn run_custom(ctx: &mut Context<'_>) -> Result<()> {
    let setup = convergence_setup(ctx)?;
    let reference = crate::analysis::reference_solution(&setup);
    let mut summaries = Vec::new();
    for (level, &eps) in setup.eps_list.iter().enumerate() {
        let records = rescaled_ensemble(&setup, eps, None, level as u64)?;
        summaries.push(crate::analysis::summarize(&records)?);
    }
    ctx.artifacts.table("series.csv", &series_table(&summaries))?;
    match reference {
        Ok(r) => {
            let mut t = Table::new(&["t", "u_pde", "number_pde", "mass_pde"]);
            for p in &r.pde {
                t.push(row![p.t, p.u, p.number, p.first_moment]);
            }
            ctx.artifacts.table("reference.csv", &t)?;
        }
        Err(Error::RegimeExit { t }) => {
            ctx.check("reference_incoming", false, format!("reference left the incoming regime at t = {t}"))
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_validate() {
        for name in ["fig1", "fig2", "fig3"] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
            let rep = validate(&cfg, Path::new("."));
            assert!(rep.is_ok(), "{name}: {:?}", rep.violations);
        }
        assert!(ExperimentConfig::preset("fig4").is_err());
    }

    #[test]
    fn fig1_validation_facts() {
        let rep = validate(&ExperimentConfig::preset("fig1").unwrap(), Path::new("."));
        assert_eq!(rep.regime.as_deref(), Some("Balanced"));
        assert_eq!(rep.rho.as_deref(), Some("2"));
        // 0.9 dx / max(|a m - b|, b) with dx = 4/800
        assert!((rep.cfl_dt.unwrap() - 0.9 * 0.005 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn budget_heuristic_at_small_eps() {
        let mut cfg = ExperimentConfig::preset("fig1").unwrap();
        cfg.eps = vec![1e-3];
        let rep = validate(&cfg, Path::new("."));
        // 50 trajectories · 3e6 particles · T = 1 · max(a m + b) = 5
        assert!((rep.predicted_events - 7.5e8).abs() < 1.0);
        assert!(rep.is_ok());
        assert_eq!(rep.warnings.len(), 1);
        cfg.budget.ceiling = 1e8;
        assert!(!validate(&cfg, Path::new(".")).is_ok());
    }

    #[test]
    fn all_violations_are_listed() {
        let mut cfg = ExperimentConfig::preset("fig1").unwrap();
        cfg.eps = vec![0.0, 2.0];
        cfg.m = -1.0;
        cfg.ensemble.n_traj = 1;
        cfg.grid = None;
        let rep = validate(&cfg, Path::new("."));
        assert_eq!(rep.violations.len(), 5, "{:?}", rep.violations);
    }

    #[test]
    fn forwarded_refusals() {
        let mut cfg = ExperimentConfig::preset("fig1").unwrap();
        cfg.rates.a = RateSpec::PowerLaw { prefactor: 1.0, exponent: 1.0 };
        cfg.rates.b = RateSpec::PowerLaw { prefactor: 1.0, exponent: 2.0 };
        let rep = validate(&cfg, Path::new("."));
        assert!(rep.violations.iter().any(|v| v.starts_with("UnsupportedRegime")));

        let mut cfg = ExperimentConfig::preset("fig1").unwrap();
        cfg.experiment = ExperimentKind::Stationary;
        cfg.stationary = Some(StationaryConfig { c: 2.0, n_max: 10, q0: 1.0, frozen_bath: None });
        let rep = validate(&cfg, Path::new("."));
        assert!(rep.violations.iter().any(|v| v.starts_with("UnsupportedRegime")), "{:?}", rep.violations);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::preset("fig2").unwrap()).unwrap();
        v["colour"] = serde_json::json!("blue");
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn stationary_run_writes_profile() {
        let mut cfg = ExperimentConfig::preset("fig1").unwrap();
        cfg.experiment = ExperimentKind::Stationary;
        cfg.stationary = Some(StationaryConfig { c: 1.0, n_max: 8, q0: 1.0, frozen_bath: None });
        let out = run(&cfg, Path::new(".")).unwrap();
        let csv = String::from_utf8(out.artifacts.get("stationary.csv").unwrap().to_vec()).unwrap();
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.lines().nth(2).unwrap().ends_with("5.0000000000000000e-1"));
    }
}

//! Ensemble statistics, measure distances and the ε → 0 studies that tie
//! simulated chains to the deterministic references.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinetics::{classify_regime, Boundary, EpsilonFamily, RateModel, Regime};
use crate::ls::{LsGrid, LsOptions, LsSample, LsSolver, LsState};
use crate::measure::{flat_dictionary, AtomicMeasure, SizeMeasure};
use crate::moments::{integrate_moments, MomentParams, MomentState};
use crate::rng::run_indexed;
use crate::ssa::{run_trajectory, Band, ChainState, Mode, Outcome, RunOptions, StopRule, TrajectoryRecord, Watch};
use crate::stats::mean_se;

/// `⌊1/ε⌋`, robust to `1/ε` landing just below an integer.
pub fn inverse_floor(eps: f64) -> usize {
    (1.0 / eps + 1e-9).floor() as usize
}

/// `round(m / ε²)`
pub fn total_monomers(m: f64, eps: f64) -> u64 {
    (m / (eps * eps)).round() as u64
}

/// `n + 1` equally spaced times on `[0, t_end]`.
pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|k| t_end * k as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub eps: f64,
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_se: Vec<f64>,
    pub number_mean: Vec<f64>,
    pub number_se: Vec<f64>,
    pub mass_mean: Vec<f64>,
    pub mass_se: Vec<f64>,
    /// Ensemble means of the occupation window averages `ε ⟨k_{n+2}⟩`.
    pub occupation_mean: Option<Vec<f64>>,
    pub occupation_se: Option<Vec<f64>>,
    /// `Σ n1 + Σ i k_i = n_traj M` at every output time, on the integers.
    pub mass_identity: bool,
}

/// Per-time means and standard errors across trajectories that share `ε`
/// and output times.
pub fn summarize(records: &[TrajectoryRecord]) -> Result<EnsembleSummary> {
    let first = records.first().ok_or_else(|| invalid("empty ensemble"))?;
    if records.len() < 2 {
        return Err(invalid("standard errors need at least two trajectories"));
    }
    let eps = first.eps;
    let e2 = eps * eps;
    let n_out = records.iter().map(|r| r.samples.len()).min().unwrap_or(0);
    let times = first.output_times[..n_out].to_vec();
    let mut summary = EnsembleSummary {
        eps,
        n_traj: records.len(),
        times,
        u_mean: vec![],
        u_se: vec![],
        number_mean: vec![],
        number_se: vec![],
        mass_mean: vec![],
        mass_se: vec![],
        occupation_mean: None,
        occupation_se: None,
        mass_identity: true,
    };
    let total_mass: u64 = records.iter().map(|r| r.final_state.mass()).sum();
    for k in 0..n_out {
        let col = |f: &dyn Fn(&TrajectoryRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let (m, s) = mean_se(&col(&|r| e2 * r.samples[k].n1 as f64));
        summary.u_mean.push(m);
        summary.u_se.push(s);
        let (m, s) = mean_se(&col(&|r| eps * r.samples[k].n_clusters as f64));
        summary.number_mean.push(m);
        summary.number_se.push(s);
        let (m, s) = mean_se(&col(&|r| e2 * r.samples[k].cluster_mass as f64));
        summary.mass_mean.push(m);
        summary.mass_se.push(s);
        let integer_total: u64 = records.iter().map(|r| r.samples[k].n1 + r.samples[k].cluster_mass).sum();
        summary.mass_identity &= integer_total == total_mass;
    }
    let occ: Option<Vec<Vec<f64>>> = records.iter().map(|r| r.occupation.as_ref().map(|o| o.averages())).collect();
    if let Some(occ) = occ {
        let width = occ.iter().map(Vec::len).min().unwrap_or(0);
        let (m, s) = (0..width).map(|n| mean_se(&occ.iter().map(|o| o[n]).collect::<Vec<_>>())).unzip();
        summary.occupation_mean = Some(m);
        summary.occupation_se = Some(s);
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureDistance {
    /// `sup_k |⟨(1+x) μ, φ_k⟩ - ⟨(1+x) ν, φ_k⟩|` over the fixed dictionary.
    pub flat: f64,
    /// `|⟨μ,1⟩ - ⟨ν,1⟩|`
    pub number_gap: f64,
    /// `|⟨μ,x⟩ - ⟨ν,x⟩|`
    pub mass_gap: f64,
}

/// Bounded-Lipschitz style distance on the dictionary of
/// [`flat_dictionary`] over `[0, x_hi]`.
pub fn flat_distance(mu: &impl SizeMeasure, nu: &impl SizeMeasure, x_hi: f64) -> MeasureDistance {
    let flat = flat_dictionary(x_hi)
        .iter()
        .map(|phi| {
            let g = |x: f64| (1.0 + x) * phi.value(x);
            (mu.pair(&g) - nu.pair(&g)).abs()
        })
        .fold(0.0, f64::max);
    MeasureDistance {
        flat,
        number_gap: (mu.pair(&|_| 1.0) - nu.pair(&|_| 1.0)).abs(),
        mass_gap: (mu.pair(&|x| x) - nu.pair(&|x| x)).abs(),
    }
}

/// Initial cluster density `f(x)`, piecewise linear through `points` and
/// zero outside them; no points is a pure-monomer start.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialProfile {
    pub points: Vec<(f64, f64)>,
}

impl InitialProfile {
    pub fn pure_monomer() -> Self {
        Self::default()
    }

    pub fn density(&self, x: f64) -> f64 {
        let p = &self.points;
        match p.iter().position(|(xk, _)| *xk >= x) {
            None => 0.0,
            Some(0) => {
                if p[0].0 == x {
                    p[0].1
                } else {
                    0.0
                }
            }
            Some(k) => {
                let ((x0, y0), (x1, y1)) = (p[k - 1], p[k]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(invalid("initial profile abscissae must increase strictly"));
        }
        if self.points.iter().any(|(x, y)| !(x.is_finite() && *x >= 0.0 && y.is_finite() && *y >= 0.0)) {
            return Err(invalid("initial profile points must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Chain with `k_i = round(f(εi))` for `i >= 2` and the remaining mass
    /// as monomers.
    pub fn chain(&self, m: f64, eps: f64) -> Result<ChainState> {
        self.validate()?;
        let mass = total_monomers(m, eps);
        let x_end = self.points.last().map_or(0.0, |p| p.0);
        let table: Vec<(usize, u64)> = (2..=(x_end / eps).floor() as usize)
            .map(|i| (i, self.density(eps * i as f64).round() as u64))
            .filter(|(_, k)| *k > 0)
            .collect();
        let clusters: u64 = table.iter().map(|(i, k)| *i as u64 * k).sum();
        let n1 = mass.checked_sub(clusters).ok_or_else(|| {
            invalid(format!("initial clusters hold more than the {mass} particles available at ε = {eps}"))
        })?;
        ChainState::from_table(n1, &table)
    }

    pub fn ls_state(&self, grid: LsGrid, m: f64) -> Result<LsState> {
        self.validate()?;
        if self.points.is_empty() {
            return Ok(LsState::pure_monomer(grid, m));
        }
        LsState::from_profile(grid, m, |x| self.density(x))
    }
}

/// Deterministic reference for a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    /// `"moments"` or `"ls"`
    pub source: &'static str,
    pub ode: Option<Vec<MomentState>>,
    pub pde: Vec<LsSample>,
    pub final_profile: LsState,
    /// Last output time at which the boundary is still incoming, if the
    /// reference starts incoming.
    pub incoming_until: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub model: RateModel,
    pub m: f64,
    pub eps_list: Vec<f64>,
    pub n_traj: usize,
    pub t_end: f64,
    pub n_out: usize,
    pub seed: u64,
    pub workers: usize,
    pub event_budget: u64,
    pub initial: InitialProfile,
    pub grid: LsGrid,
    pub cfl: f64,
    pub occupation_n_max: usize,
    /// Recompute the mass identity from the counts after every event.
    pub full_mass_check: bool,
}

/// PDE solution on the output grid, replaced by the moment ODEs for `u`
/// when the rates are size independent.
pub fn reference_solution(setup: &ConvergenceSetup) -> Result<Reference> {
    let times = uniform_times(setup.t_end, setup.n_out);
    let mut solver = LsSolver::new(setup.model.clone(), setup.cfl)?;
    let regime = solver.regime;
    let opts = LsOptions { cfl: setup.cfl, output_times: times.clone(), profile_times: vec![], keep_steps: false };
    let init = setup.initial.ls_state(setup.grid, setup.m)?;
    let start = MomentState { t: 0.0, n: init.number(), p: init.first_moment(), u: init.u };
    let pde = solver.solve(init, &opts)?;
    let (u, source, ode) = match MomentParams::from_model(&setup.model, setup.m) {
        Ok(params) if regime.boundary(start.u) == Boundary::Incoming => {
            let ode = integrate_moments(start, &params, &times, 1e-2)?;
            if let Some(t) = ode.rho_crossing {
                return Err(Error::RegimeExit { t });
            }
            (ode.points.iter().map(|p| p.u).collect(), "moments", Some(ode.points))
        }
        _ => (pde.series.iter().map(|s| s.u).collect(), "ls", None),
    };
    if let Some(t) = pde.rho_crossing {
        if regime.boundary(start.u) == Boundary::Incoming {
            return Err(Error::RegimeExit { t });
        }
    }
    let incoming_until = times
        .iter()
        .zip(&u)
        .take_while(|(_, u): &(&f64, &f64)| regime.boundary(**u) == Boundary::Incoming)
        .map(|(t, _)| *t)
        .last();
    Ok(Reference { times, u, source, ode, pde: pde.series, final_profile: pde.final_state, incoming_until })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub n_traj: usize,
    /// `sup_t |ū^ε - u_ref|`
    pub error: f64,
    pub distance: MeasureDistance,
    /// `ε ⟨k_{n+2}⟩_time` on the incoming window.
    pub occupancy: Option<Vec<f64>>,
    pub occupancy_se: Option<Vec<f64>>,
    /// Trajectories whose `u` leaves `u_ref ± 0.1 m` at some output time.
    pub deviating: usize,
    pub events: u64,
    pub mass_checks: u64,
    pub mass_failures: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub reference: Reference,
    pub rows: Vec<ConvergenceRow>,
    pub summaries: Vec<EnsembleSummary>,
    /// Ensemble-mean empirical measures at the final time.
    pub snapshots: Vec<AtomicMeasure>,
    /// `log(e_k / e_{k+1}) / log(ε_k / ε_{k+1})` for consecutive entries.
    pub orders: Vec<f64>,
    /// `e(ε)` strictly decreases along the list.
    pub monotone: bool,
}

/// Runs the rescaled chain ensemble for one `ε` on the reference grid.
pub fn rescaled_ensemble(
    setup: &ConvergenceSetup,
    eps: f64,
    window: Option<(f64, f64)>,
    level: u64,
) -> Result<Vec<TrajectoryRecord>> {
    let family = EpsilonFamily::new(setup.model.clone(), eps)?;
    let mode = Mode::Rescaled(family);
    let opts = RunOptions {
        output_times: uniform_times(setup.t_end, setup.n_out),
        snapshot_times: vec![setup.t_end],
        occupation: window.map(|(t0, t1)| (t0, t1, setup.occupation_n_max)),
        event_budget: setup.event_budget,
        mass_check: if setup.full_mass_check { crate::ssa::MassCheck::Full } else { RunOptions::default().mass_check },
        ..RunOptions::default()
    };
    let init = setup.initial.chain(setup.m, eps)?;
    let stop = StopRule::EndTime(setup.t_end);
    run_indexed(setup.n_traj, setup.seed.wrapping_add(level << 32), setup.workers, |_, rng| {
        run_trajectory(init.clone(), &mode, &stop, &opts, rng)
    })
    .into_iter()
    .collect()
}

pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceTable> {
    if setup.eps_list.is_empty() {
        return Err(invalid("empty ε list"));
    }
    let reference = reference_solution(setup)?;
    let window = reference.incoming_until.filter(|t| *t > 0.0).map(|t| (0.0, t));
    let mut rows = Vec::with_capacity(setup.eps_list.len());
    let mut summaries = Vec::with_capacity(setup.eps_list.len());
    let mut snapshots = Vec::with_capacity(setup.eps_list.len());
    for (level, &eps) in setup.eps_list.iter().enumerate() {
        let records = rescaled_ensemble(setup, eps, window, level as u64)?;
        let summary = summarize(&records)?;
        let error = summary.u_mean.iter().zip(&reference.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let deviating = records
            .iter()
            .filter(|r| r.u_series().iter().zip(&reference.u).any(|(u, ur)| (u - ur).abs() > 0.1 * setup.m))
            .count();
        let finals: Vec<_> = records.iter().filter_map(|r| r.snapshots.last().map(|s| &s.1)).collect();
        let mean_measure = AtomicMeasure::ensemble_mean(finals);
        let distance = flat_distance(&mean_measure, &reference.final_profile, setup.grid.x_max);
        rows.push(ConvergenceRow {
            eps,
            n_traj: records.len(),
            error,
            distance,
            occupancy: summary.occupation_mean.clone(),
            occupancy_se: summary.occupation_se.clone(),
            deviating,
            events: records.iter().map(|r| r.events).sum(),
            mass_checks: records.iter().map(|r| r.mass_checks).sum(),
            mass_failures: records.iter().map(|r| r.mass_failures).sum(),
        });
        summaries.push(summary);
        snapshots.push(mean_measure);
    }
    let orders = rows.windows(2).map(|w| (w[0].error / w[1].error).ln() / (w[0].eps / w[1].eps).ln()).collect();
    let monotone = rows.windows(2).all(|w| w[1].error < w[0].error);
    Ok(ConvergenceTable { reference, rows, summaries, snapshots, orders, monotone })
}

#[derive(Debug, Clone)]
pub struct MetastabilitySetup {
    pub model: RateModel,
    pub m: f64,
    pub eps_list: Vec<f64>,
    pub n_traj: usize,
    /// A switch is `u < (1 - threshold) m`.
    pub threshold: f64,
    /// Half-width of the band around `m`, as a fraction of `m`.
    pub band: f64,
    pub time_limit: f64,
    pub seed: u64,
    pub workers: usize,
    pub event_budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub switch_time: Option<f64>,
    pub t0: Option<f64>,
    /// Fraction of `[0, switch)` spent with `u >= (1 - band) m`.
    pub band_fraction: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetastabilityRow {
    pub eps: f64,
    pub n_traj: usize,
    pub mean_switch: f64,
    pub se_switch: f64,
    pub mean_t0: f64,
    pub se_t0: f64,
    pub n_censored: usize,
    pub min_band_fraction: f64,
    pub records: Vec<SwitchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetastabilityTable {
    pub regime: Regime,
    pub rows: Vec<MetastabilityRow>,
    /// `ln(mean switch)` increments between consecutive `ε`.
    pub log_growth: Vec<f64>,
}

pub fn metastability_probe(setup: &MetastabilitySetup) -> Result<MetastabilityTable> {
    if !(0.0..=1.0).contains(&setup.threshold) {
        return Err(invalid(format!("deviation threshold {} must lie in [0, 1]", setup.threshold)));
    }
    let regime = classify_regime(&setup.model)?;
    let mut rows = Vec::with_capacity(setup.eps_list.len());
    for (level, &eps) in setup.eps_list.iter().enumerate() {
        let family = EpsilonFamily::new(setup.model.clone(), eps)?;
        let mode = Mode::Rescaled(family);
        let mass = total_monomers(setup.m, eps);
        // n1 < ceil(y) is n1 < y on the integers.
        let switch_level = ((1.0 - setup.threshold) * mass as f64).ceil() as u64;
        let band_floor = ((1.0 - setup.band) * mass as f64).ceil() as u64;
        let opts = RunOptions {
            watches: vec![
                Watch::MonomersBelow(switch_level),
                Watch::ClustersAtLeast { size: inverse_floor(eps), count: 1 },
            ],
            band: Some(Band { n1_min: band_floor, until_watch: 0 }),
            time_limit: Some(setup.time_limit),
            event_budget: setup.event_budget,
            ..RunOptions::default()
        };
        let stop = StopRule::AllWatches;
        let init = ChainState::pure_monomer(mass);
        let records =
            run_indexed(setup.n_traj, setup.seed.wrapping_add((level as u64) << 32), setup.workers, |_, rng| {
                run_trajectory(init.clone(), &mode, &stop, &opts, rng).map(|r| SwitchRecord {
                    switch_time: r.watch_hits[0],
                    t0: r.watch_hits[1],
                    band_fraction: if r.band_window > 0.0 { r.band_time / r.band_window } else { 1.0 },
                    censored: r.outcome == Outcome::Censored || r.watch_hits[0].is_none(),
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let switches: Vec<f64> = records.iter().filter_map(|r| r.switch_time).collect();
        let t0s: Vec<f64> = records.iter().filter_map(|r| r.t0).collect();
        let (mean_switch, se_switch) = mean_se(&switches);
        let (mean_t0, se_t0) = mean_se(&t0s);
        rows.push(MetastabilityRow {
            eps,
            n_traj: setup.n_traj,
            mean_switch,
            se_switch,
            mean_t0,
            se_t0,
            n_censored: records.iter().filter(|r| r.censored).count(),
            min_band_fraction: records
                .iter()
                .filter(|r| r.switch_time.is_some())
                .map(|r| r.band_fraction)
                .fold(f64::INFINITY, f64::min),
            records,
        });
    }
    let log_growth = rows.windows(2).map(|w| (w[1].mean_switch / w[0].mean_switch).ln()).collect();
    Ok(MetastabilityTable { regime, rows, log_growth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::RateFn;
    use crate::ssa::snapshot_measure;

    fn fig1() -> RateModel {
        RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn floor_is_robust() {
        assert_eq!(inverse_floor(0.1), 10);
        assert_eq!(inverse_floor(0.07), 14);
        assert_eq!(inverse_floor(0.035), 28);
        assert_eq!(inverse_floor(1.0 / 3.0), 3);
    }

    #[test]
    fn distance_identities() {
        let a = snapshot_measure(&ChainState::from_table(10, &[(2, 2), (5, 1)]).unwrap(), 0.1);
        let b = snapshot_measure(&ChainState::from_table(4, &[(2, 4), (3, 2)]).unwrap(), 0.1);
        let c = snapshot_measure(&ChainState::from_table(0, &[(7, 3)]).unwrap(), 0.1);
        assert_eq!(flat_distance(&a, &a, 4.0).flat, 0.0);
        assert_eq!(flat_distance(&a, &b, 4.0), flat_distance(&b, &a, 4.0));
        let ab = flat_distance(&a, &b, 4.0).flat;
        let bc = flat_distance(&b, &c, 4.0).flat;
        let ac = flat_distance(&a, &c, 4.0).flat;
        assert!(ac <= ab + bc + 1e-15);
    }

    #[test]
    fn single_atom_lower_bound() {
        let eps = 0.05;
        let mu = AtomicMeasure { atoms: vec![(1.3, eps)], u: 0.0 };
        let empty = LsState::pure_monomer(LsGrid::new(4.0, 100).unwrap(), 3.0);
        let d = flat_distance(&mu, &empty, 4.0);
        let best = flat_dictionary(4.0).iter().map(|p| p.value(1.3)).fold(0.0, f64::max);
        assert!(d.flat >= eps * 2.3 * best - 1e-15);
        assert!(d.flat > 0.0);
    }

    fn small_setup(eps_list: Vec<f64>) -> ConvergenceSetup {
        ConvergenceSetup {
            model: fig1(),
            m: 3.0,
            eps_list,
            n_traj: 4,
            t_end: 0.25,
            n_out: 8,
            seed: 11,
            workers: 2,
            event_budget: 1 << 30,
            initial: InitialProfile::pure_monomer(),
            grid: LsGrid::new(4.0, 100).unwrap(),
            cfl: 0.9,
            occupation_n_max: 4,
            full_mass_check: true,
        }
    }

    #[test]
    fn single_level_has_no_order() {
        let t = convergence_study(&small_setup(vec![0.1])).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.orders.is_empty());
        assert_eq!(t.reference.source, "moments");
        assert_eq!(t.rows[0].mass_failures, 0);
        assert!(t.summaries[0].mass_identity);
    }

    #[test]
    fn study_is_deterministic() {
        let a = convergence_study(&small_setup(vec![0.1, 0.07])).unwrap();
        let b = convergence_study(&small_setup(vec![0.1, 0.07])).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn initial_profile_conversions() {
        let p = InitialProfile { points: vec![(0.5, 0.0), (1.0, 2.0), (1.5, 0.0)] };
        assert_eq!(p.density(0.2), 0.0);
        assert_eq!(p.density(0.75), 1.0);
        assert_eq!(p.density(1.0), 2.0);
        assert_eq!(p.density(2.0), 0.0);
        let chain = p.chain(3.0, 0.1).unwrap();
        assert_eq!(chain.count(10), 2);
        assert_eq!(chain.mass(), 300);
        assert!(p.chain(0.01, 0.1).is_err());
        let s = p.ls_state(LsGrid::new(4.0, 400).unwrap(), 3.0).unwrap();
        assert!((s.number() - 1.0).abs() < 1e-3);
        assert!((s.u + s.first_moment() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_switch_without_nucleation_or_threshold() {
        let fig3 = |alpha| {
            RateModel::new(RateFn::Linear { slope: 1.0, intercept: 0.0 }, RateFn::Constant(1.0), alpha, 1.0).unwrap()
        };
        let setup = |model, threshold| MetastabilitySetup {
            model,
            m: 3.0,
            eps_list: vec![0.2],
            n_traj: 3,
            threshold,
            band: 0.1,
            time_limit: 2.0,
            seed: 5,
            workers: 1,
            event_budget: 1 << 30,
        };
        for s in [setup(fig3(0.0), 0.5), setup(fig3(1.0), 1.0)] {
            let t = metastability_probe(&s).unwrap();
            assert_eq!(t.rows[0].n_censored, 3);
            assert!(t.rows[0].records.iter().all(|r| r.switch_time.is_none()));
        }
    }
}

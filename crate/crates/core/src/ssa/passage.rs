use serde::Serialize;

use crate::error::Result;
use crate::rng::run_indexed;
use crate::stats::mean_se;

use super::engine::{run_trajectory, RunOptions, StopRule, Watch};
use super::propensity::{Mode, RawCoefficients};
use super::state::ChainState;

/// One ε level of a first-passage study on the unscaled chain.
#[derive(Debug, Clone)]
pub struct PassageSetup {
    pub eps: f64,
    pub coeffs: RawCoefficients,
    /// Initial monomers `M`; the chain starts as pure monomer.
    pub mass: u64,
    /// Size whose first appearance defines `T_0`.
    pub target_size: usize,
    /// Number of clusters of at least `target_size` that defines `T_ρ`.
    pub rho_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageRow {
    pub eps: f64,
    pub n_traj: usize,
    pub mean_scaled_t0: f64,
    pub se_t0: f64,
    pub mean_scaled_trho: f64,
    pub se_trho: f64,
    /// Trajectories that hit the time limit before both passages.
    pub n_censored: usize,
}

/// Runs `n_traj` trajectories per setup and reports `ε`-scaled mean passage
/// times. Censored observations are excluded from the means and counted.
pub fn first_passage_times(
    setups: &[PassageSetup],
    n_traj: usize,
    seed: u64,
    workers: usize,
    time_limit: f64,
    event_budget: u64,
) -> Result<Vec<PassageRow>> {
    let mut rows = Vec::with_capacity(setups.len());
    for (level, setup) in setups.iter().enumerate() {
        let mode = Mode::Raw(setup.coeffs.clone().with_eps(setup.eps));
        let opts = RunOptions {
            watches: vec![
                Watch::ClustersAtLeast { size: setup.target_size, count: 1 },
                Watch::ClustersAtLeast { size: setup.target_size, count: setup.rho_count.max(1) },
            ],
            time_limit: Some(time_limit),
            event_budget,
            ..Default::default()
        };
        let level_seed = seed.wrapping_add((level as u64) << 32);
        let hits = run_indexed(n_traj, level_seed, workers, |_, rng| {
            run_trajectory(ChainState::pure_monomer(setup.mass), &mode, &StopRule::AllWatches, &opts, rng)
                .map(|r| (r.watch_hits[0], r.watch_hits[1]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let t0: Vec<f64> = hits.iter().filter_map(|h| h.0).map(|t| setup.eps * t).collect();
        let trho: Vec<f64> = hits.iter().filter_map(|h| h.1).map(|t| setup.eps * t).collect();
        let n_censored = hits.iter().filter(|h| h.0.is_none() || h.1.is_none()).count();
        let (mean_scaled_t0, se_t0) = mean_se(&t0);
        let (mean_scaled_trho, se_trho) = mean_se(&trho);
        rows.push(PassageRow { eps: setup.eps, n_traj, mean_scaled_t0, se_t0, mean_scaled_trho, se_trho, n_censored });
    }
    Ok(rows)
}

//! Exact stochastic simulation of the Becker-Döring chain.

mod engine;
pub mod fenwick;
mod passage;
mod propensity;
mod state;

pub use engine::{
    propensity_consistency_ulps, run_trajectory, Band, MassCheck, OccupationAccumulator, Outcome, RunOptions, Sample,
    StopRule, TrajectoryRecord, Watch,
};
pub use passage::{first_passage_times, PassageRow, PassageSetup};
pub use propensity::{propensities_raw, propensities_rescaled, Mode, Propensities, RawCoefficients};
pub use state::{apply_event, snapshot_measure, ChainState, EmpiricalMeasure, Event};

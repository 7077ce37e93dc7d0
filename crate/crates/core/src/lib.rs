//! Stochastic Becker-Döring cluster growth and its Lifshitz-Slyozov limit.
//!
//! - [`kinetics`]: rate models, ε-scaling, regime threshold `ρ`, boundary-layer fluxes.
//! - [`ssa`]: exact event-driven simulation (raw, rescaled and frozen-bath chains).
//! - [`ls`]: conservative upwind solver with the nucleation boundary flux `α u²`.
//! - [`measure`]: test functions, measure pairings and the weak-form residual.
//! - [`moments`]: closed moment ODEs for size-independent rates.
//! - [`stationary`]: stationary states of the boundary-layer chain.
//! - [`analysis`]: ensembles, measure distances, convergence and metastability studies.
//! - [`experiment`]: JSON configuration, presets and CSV/JSON artifacts.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod kinetics;
pub mod ls;
pub mod measure;
pub mod moments;
pub mod output;
pub mod rng;
pub mod ssa;
pub mod stationary;
pub mod stats;

pub use error::{Error, Result};

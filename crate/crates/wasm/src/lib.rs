//! Browser bindings: each entry point takes and returns a JSON string.

use std::path::Path;

use bdls::analysis::{rescaled_ensemble, summarize, total_monomers, uniform_times, ConvergenceSetup, InitialProfile};
use bdls::experiment::RatesConfig;
use bdls::kinetics::{classify_regime, discrete_rates};
use bdls::ls::{LsGrid, LsOptions, LsSolver, LsState};
use bdls::moments::{integrate_moments, MomentParams, MomentState};
use bdls::stationary::stationary_states;
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Refuse requests predicted to take more than a few seconds in a tab.
const EVENT_CEILING: f64 = 5e7;

type Outcome = Result<Value, String>;

fn parse<T: for<'de> Deserialize<'de>>(input: &str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct SimulateRequest {
    rates: RatesConfig,
    m: f64,
    eps: f64,
    t_end: f64,
    n_out: usize,
    n_traj: usize,
    seed: u64,
}

pub fn simulate(input: &str) -> Outcome {
    let req: SimulateRequest = parse(input)?;
    let model = req.rates.model(Path::new(".")).map_err(|e| e.to_string())?;
    let predicted = req.n_traj as f64 * total_monomers(req.m, req.eps) as f64 * req.t_end * 5.0;
    if predicted > EVENT_CEILING {
        return Err(format!("about {predicted:.1e} events requested; raise eps or lower n_traj / t_end"));
    }
    let setup = ConvergenceSetup {
        model,
        m: req.m,
        eps_list: vec![req.eps],
        n_traj: req.n_traj.max(2),
        t_end: req.t_end,
        n_out: req.n_out,
        seed: req.seed,
        workers: 1,
        event_budget: EVENT_CEILING as u64,
        initial: InitialProfile::pure_monomer(),
        grid: LsGrid::new(1.0, 1).map_err(|e| e.to_string())?,
        cfl: 1.0,
        occupation_n_max: 0,
        full_mass_check: false,
    };
    let records = rescaled_ensemble(&setup, req.eps, None, 0).map_err(|e| e.to_string())?;
    let summary = summarize(&records).map_err(|e| e.to_string())?;
    let paths: Vec<Vec<f64>> = records.iter().map(|r| r.u_series()).collect();
    Ok(json!({
        "t": summary.times,
        "u_mean": summary.u_mean,
        "u_se": summary.u_se,
        "number_mean": summary.number_mean,
        "paths": paths,
        "events": records.iter().map(|r| r.events).sum::<u64>(),
    }))
}

#[derive(Deserialize)]
struct LsRequest {
    rates: RatesConfig,
    m: f64,
    t_end: f64,
    n_out: usize,
    cells: usize,
    x_max: f64,
    cfl: f64,
}

pub fn solve(input: &str) -> Outcome {
    let req: LsRequest = parse(input)?;
    let model = req.rates.model(Path::new(".")).map_err(|e| e.to_string())?;
    if req.cells > 20_000 {
        return Err("at most 20000 cells".into());
    }
    let grid = LsGrid::new(req.x_max, req.cells).map_err(|e| e.to_string())?;
    let times = uniform_times(req.t_end, req.n_out);
    let opts = LsOptions { cfl: req.cfl, output_times: times.clone(), profile_times: vec![], keep_steps: false };
    let mut solver = LsSolver::new(model.clone(), req.cfl).map_err(|e| e.to_string())?;
    let run = solver.solve(LsState::pure_monomer(grid, req.m), &opts).map_err(|e| e.to_string())?;
    let ode = MomentParams::from_model(&model, req.m).ok().and_then(|p| {
        let s = integrate_moments(MomentState::pure_monomer(req.m), &p, &times, 1e-2).ok()?;
        Some(s.u_at_outputs())
    });
    Ok(json!({
        "regime": run.regime.name(),
        "rho": run.regime.rho().to_string(),
        "t": run.series.iter().map(|s| s.t).collect::<Vec<_>>(),
        "u": run.series.iter().map(|s| s.u).collect::<Vec<_>>(),
        "number": run.series.iter().map(|s| s.number).collect::<Vec<_>>(),
        "u_ode": ode,
        "x": grid.centers(),
        "density": run.final_state.f,
        "rho_crossing": run.rho_crossing,
    }))
}

#[derive(Deserialize)]
struct StationaryRequest {
    rates: RatesConfig,
    c: f64,
    n_max: usize,
}

pub fn stationary(input: &str) -> Outcome {
    let req: StationaryRequest = parse(input)?;
    let model = req.rates.model(Path::new(".")).map_err(|e| e.to_string())?;
    let regime = classify_regime(&model).map_err(|e| e.to_string())?;
    let n_max = req.n_max.clamp(1, 10_000);
    let rates = discrete_rates(&model, n_max + 1).map_err(|e| e.to_string())?;
    let p = stationary_states(&regime, &rates, req.c, 1.0, n_max).map_err(|e| e.to_string())?;
    Ok(json!({
        "regime": regime.name(),
        "rho": regime.rho().to_string(),
        "case": p.case,
        "q": p.q,
        "norm": p.norm(),
    }))
}

fn export(result: Outcome) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_rescaled(input: &str) -> Result<String, JsError> {
    export(simulate(input))
}

#[wasm_bindgen]
pub fn solve_ls(input: &str) -> Result<String, JsError> {
    export(solve(input))
}

#[wasm_bindgen]
pub fn stationary_profile(input: &str) -> Result<String, JsError> {
    export(stationary(input))
}

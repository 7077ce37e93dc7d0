//! Explicit upwind finite volumes for the Lifshitz-Slyozov transport equation
//! with the nucleation source `α u²` at `x = 0`.
//!
//! The free-particle concentration is not integrated; after every step it is
//! recovered from mass conservation, `u = m - Σ x_j f_j Δx`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{classify_regime, Boundary, RateModel, Regime};
use crate::measure::{weak_form_residual, SizeMeasure, TestFunction, WeakResidual};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsGrid {
    pub x_max: f64,
    pub cells: usize,
}

impl LsGrid {
    pub fn new(x_max: f64, cells: usize) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) || cells == 0 {
            return Err(invalid(format!("grid needs x_max > 0 and cells >= 1 (got {x_max}, {cells})")));
        }
        Ok(Self { x_max, cells })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.x_max / self.cells as f64
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx()
    }

    /// Left edge of cell `j`; `edge(cells) = x_max`.
    #[inline]
    pub fn edge(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }

    pub fn refined(&self) -> Self {
        Self { x_max: self.x_max, cells: 2 * self.cells }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsState {
    pub grid: LsGrid,
    /// Cell averages.
    pub f: Vec<f64>,
    pub u: f64,
    pub m: f64,
    pub t: f64,
    /// Mass carried out through `x_max` so far.
    pub outflow_mass: f64,
}

impl LsState {
    /// No clusters; all mass is free.
    pub fn pure_monomer(grid: LsGrid, m: f64) -> Self {
        Self { grid, f: vec![0.0; grid.cells], u: m, m, t: 0.0, outflow_mass: 0.0 }
    }

    /// Cell averages of `f0` by 8-point midpoint subsampling, with
    /// `u` closed from the total mass.
    pub fn from_profile(grid: LsGrid, m: f64, f0: impl Fn(f64) -> f64) -> Result<Self> {
        const SUB: usize = 8;
        let dx = grid.dx();
        let f = (0..grid.cells)
            .map(|j| (0..SUB).map(|k| f0(grid.edge(j) + (k as f64 + 0.5) * dx / SUB as f64)).sum::<f64>() / SUB as f64)
            .collect();
        let mut s = Self { grid, f, u: 0.0, m, t: 0.0, outflow_mass: 0.0 };
        if s.f.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("initial density must be finite and nonnegative"));
        }
        s.u = m - s.first_moment();
        if s.u < 0.0 {
            return Err(invalid(format!("initial clusters hold more than m = {m}")));
        }
        Ok(s)
    }

    /// `⟨f, 1⟩`
    pub fn number(&self) -> f64 {
        self.f.iter().sum::<f64>() * self.grid.dx()
    }

    /// `⟨f, x⟩`
    pub fn first_moment(&self) -> f64 {
        let dx = self.grid.dx();
        self.f.iter().enumerate().map(|(j, v)| (j as f64 + 0.5) * dx * v).sum::<f64>() * dx
    }

    /// `u + ⟨f, x⟩ - m`
    pub fn mass_defect(&self) -> f64 {
        self.u + self.first_moment() - self.m
    }
}

impl SizeMeasure for LsState {
    fn pair(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        let dx = self.grid.dx();
        self.f.iter().enumerate().map(|(j, v)| v * g(self.grid.center(j))).sum::<f64>() * dx
    }

    fn free_concentration(&self) -> f64 {
        self.u
    }
}

/// `a(x) u - b(x)`
pub fn edge_velocity(model: &RateModel, u: f64, x: f64) -> f64 {
    model.velocity(u, x)
}

/// Prescribed inflow at `x = 0`: `α u²` when the characteristics enter the
/// domain, nothing otherwise (including the tie `u = ρ`).
pub fn boundary_influx(model: &RateModel, regime: &Regime, u: f64) -> f64 {
    match regime.boundary(u) {
        Boundary::Incoming => model.alpha * u * u,
        Boundary::Outgoing | Boundary::Tie => 0.0,
    }
}

/// Stepping and recording options.
#[derive(Debug, Clone)]
pub struct LsOptions {
    pub cfl: f64,
    /// Increasing times at which `(t, u, N, P)` is recorded; the last one is
    /// the final time.
    pub output_times: Vec<f64>,
    pub profile_times: Vec<f64>,
    /// Keep every intermediate state (needed for weak-form residuals).
    pub keep_steps: bool,
}

impl LsOptions {
    pub fn uniform(t_end: f64, n_out: usize, cfl: f64) -> Self {
        let n = n_out.max(1);
        Self {
            cfl,
            output_times: (0..=n).map(|k| t_end * k as f64 / n as f64).collect(),
            profile_times: vec![t_end],
            keep_steps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsSample {
    pub t: f64,
    pub u: f64,
    pub number: f64,
    pub first_moment: f64,
}

/// Per-step boundary record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryRecord {
    pub t: f64,
    pub u: f64,
    pub influx: f64,
}

#[derive(Debug, Clone)]
pub struct LsRun {
    pub regime: Regime,
    pub dt_max: f64,
    pub series: Vec<LsSample>,
    pub profiles: Vec<(f64, Vec<f64>)>,
    pub boundary: Vec<BoundaryRecord>,
    /// First time `u - ρ` changes sign, located to step resolution.
    pub rho_crossing: Option<f64>,
    /// Largest `|u + ⟨f,x⟩ - m|` over the steps.
    pub max_mass_defect: f64,
    pub steps: Vec<LsState>,
    pub final_state: LsState,
}

/// Single-model upwind stepper.
#[derive(Debug, Clone)]
pub struct LsSolver {
    pub model: RateModel,
    pub regime: Regime,
    pub cfl: f64,
    cached_grid: Option<LsGrid>,
    rates_at_edges: Vec<(f64, f64)>,
}

impl LsSolver {
    pub fn new(model: RateModel, cfl: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(invalid(format!("CFL number {cfl} must lie in (0, 1]")));
        }
        let regime = classify_regime(&model)?;
        Ok(Self { model, regime, cfl, cached_grid: None, rates_at_edges: Vec::new() })
    }

    fn cache_rates(&mut self, grid: &LsGrid) {
        if self.cached_grid != Some(*grid) {
            self.rates_at_edges =
                (0..=grid.cells).map(|e| (self.model.a.eval(grid.edge(e)), self.model.b.eval(grid.edge(e)))).collect();
            self.cached_grid = Some(*grid);
        }
    }

    /// Uniform step bound valid for every `0 <= u <= m`.
    pub fn stable_dt(&mut self, grid: &LsGrid, m: f64) -> f64 {
        self.cache_rates(grid);
        let v = self.rates_at_edges.iter().map(|(a, b)| (a * m - b).abs().max(*b)).fold(0.0, f64::max);
        if v == 0.0 {
            f64::INFINITY
        } else {
            self.cfl * grid.dx() / v
        }
    }

    /// CFL bound at the current concentration.
    pub fn max_dt(&mut self, state: &LsState) -> f64 {
        self.cache_rates(&state.grid);
        let u = state.u;
        let v = self.rates_at_edges.iter().map(|(a, b)| (a * u - b).abs()).fold(0.0, f64::max);
        if v == 0.0 {
            f64::INFINITY
        } else {
            self.cfl * state.grid.dx() / v
        }
    }

    /// One forward-Euler upwind step. Returns the boundary influx used.
    pub fn step(&mut self, state: &mut LsState, dt: f64) -> Result<f64> {
        let max_dt = self.max_dt(state);
        if dt > max_dt * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, max_dt });
        }
        let grid = state.grid;
        let n = grid.cells;
        let dx = grid.dx();
        let u = state.u;
        let v = |e: usize| {
            let (a, b) = self.rates_at_edges[e];
            a * u - b
        };
        let influx = boundary_influx(&self.model, &self.regime, u);
        let left = match self.regime.boundary(u) {
            Boundary::Incoming => influx,
            Boundary::Outgoing => v(0).min(0.0) * state.f[0],
            Boundary::Tie => 0.0,
        };
        let right = v(n).max(0.0) * state.f[n - 1];
        let ratio = dt / dx;
        let mut flux_in = left;
        let mut next = Vec::with_capacity(n);
        for j in 0..n {
            let flux_out = if j + 1 == n {
                right
            } else {
                let ve = v(j + 1);
                ve.max(0.0) * state.f[j] + ve.min(0.0) * state.f[j + 1]
            };
            next.push(state.f[j] - ratio * (flux_out - flux_in));
            flux_in = flux_out;
        }
        for (cell, value) in next.iter_mut().enumerate() {
            if *value < -1e-12 {
                return Err(Error::NegativeDensity { cell, value: *value });
            }
            if *value < 0.0 {
                *value = 0.0;
            }
        }
        state.f = next;
        state.outflow_mass += grid.x_max * right * dt;
        state.t += dt;
        state.u = state.m - state.first_moment();
        Ok(influx)
    }

    /// Steps from `init` through all output times. Each output interval is cut
    /// into equal steps no longer than the stable step for `0 <= u <= m`.
    pub fn solve(&mut self, init: LsState, opts: &LsOptions) -> Result<LsRun> {
        let mut state = init;
        let dt_max = self.stable_dt(&state.grid, state.m.max(state.u));
        if opts.output_times.windows(2).any(|w| w[1] < w[0]) || opts.output_times.iter().any(|t| *t < state.t) {
            return Err(invalid("output times must be increasing and not before the initial time"));
        }
        let mut profile_times = opts.profile_times.clone();
        profile_times.sort_by(f64::total_cmp);
        let mut profile_iter = profile_times.into_iter().peekable();
        let mut run = LsRun {
            regime: self.regime,
            dt_max,
            series: Vec::with_capacity(opts.output_times.len()),
            profiles: Vec::new(),
            boundary: Vec::new(),
            rho_crossing: None,
            max_mass_defect: state.mass_defect().abs(),
            steps: Vec::new(),
            final_state: state.clone(),
        };
        let rho = self.regime.rho();
        let side = |u: f64| rho.compare(u);
        let initial_side = side(state.u);
        let record = |state: &LsState, run: &mut LsRun, profile_iter: &mut std::iter::Peekable<_>| {
            run.series.push(LsSample {
                t: state.t,
                u: state.u,
                number: state.number(),
                first_moment: state.first_moment(),
            });
            while let Some(tp) = profile_iter.peek().copied() {
                let tp: f64 = tp;
                if tp <= state.t + 1e-12 * (1.0 + state.t.abs()) {
                    run.profiles.push((state.t, state.f.clone()));
                    profile_iter.next();
                } else {
                    break;
                }
            }
        };
        if opts.keep_steps {
            run.steps.push(state.clone());
        }
        let mut first = true;
        for &t_out in &opts.output_times {
            let span = t_out - state.t;
            if span > 0.0 {
                let n_steps = if dt_max.is_finite() { (span / dt_max).ceil().max(1.0) as usize } else { 1 };
                let t_start = state.t;
                for k in 0..n_steps {
                    let t_next = t_start + span * (k + 1) as f64 / n_steps as f64;
                    let dt = t_next - state.t;
                    let u_before = state.u;
                    let t_before = state.t;
                    let influx = self.step(&mut state, dt)?;
                    state.t = t_next;
                    run.boundary.push(BoundaryRecord { t: t_before, u: u_before, influx });
                    if run.rho_crossing.is_none() && side(state.u) != initial_side {
                        run.rho_crossing = Some(state.t);
                    }
                    run.max_mass_defect = run.max_mass_defect.max(state.mass_defect().abs());
                    if opts.keep_steps {
                        run.steps.push(state.clone());
                    }
                }
                record(&state, &mut run, &mut profile_iter);
            } else if first {
                record(&state, &mut run, &mut profile_iter);
            }
            first = false;
        }
        run.final_state = state;
        Ok(run)
    }
}

/// Convenience wrapper around [`LsSolver::solve`].
pub fn solve_ls(model: &RateModel, init: LsState, opts: &LsOptions) -> Result<LsRun> {
    LsSolver::new(model.clone(), opts.cfl)?.solve(init, opts)
}

/// Weak-form residual of one solve together with a Richardson estimate of
/// its discretisation error, `2 |R_h - R_{h/2}|`, from a second solve with
/// `Δx` and `Δt` halved.
#[derive(Debug, Clone, Serialize)]
pub struct WeakFormReport {
    pub test: TestFunction,
    pub coarse: WeakResidual,
    pub fine: WeakResidual,
    pub estimate: f64,
}

impl WeakFormReport {
    pub fn ratio(&self) -> f64 {
        if self.coarse.residual == 0.0 {
            0.0
        } else {
            self.coarse.residual / self.estimate
        }
    }
}

pub fn weak_form_report(
    model: &RateModel,
    init: impl Fn(LsGrid) -> Result<LsState>,
    grid: LsGrid,
    t_end: f64,
    cfl: f64,
    tests: &[TestFunction],
) -> Result<Vec<WeakFormReport>> {
    let residuals = |grid: LsGrid| -> Result<Vec<WeakResidual>> {
        let opts = LsOptions { cfl, output_times: vec![0.0, t_end], profile_times: vec![], keep_steps: true };
        let mut solver = LsSolver::new(model.clone(), cfl)?;
        let regime = solver.regime;
        let run = solver.solve(init(grid)?, &opts)?;
        let path: Vec<(f64, LsState)> = run.steps.into_iter().map(|s| (s.t, s)).collect();
        Ok(weak_form_residual(&path, |u, x| model.velocity(u, x), |u| boundary_influx(model, &regime, u), tests))
    };
    let coarse = residuals(grid)?;
    let fine = residuals(grid.refined())?;
    Ok(tests
        .iter()
        .zip(coarse.into_iter().zip(fine))
        .map(|(test, (c, f))| {
            // Round-off floor relative to the size of the individual terms.
            let scale = c.change.abs() + c.transport.abs() + c.source.abs();
            let estimate = (2.0 * (c.residual - f.residual).abs()).max(1e-12 * scale);
            WeakFormReport { test: *test, coarse: c, fine: f, estimate }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::RateFn;

    fn fig1() -> RateModel {
        RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 1.0, 1.0).unwrap()
    }

    fn fig3() -> RateModel {
        RateModel::new(RateFn::Linear { slope: 1.0, intercept: 0.0 }, RateFn::Constant(1.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn velocity_and_influx_examples() {
        assert_eq!(edge_velocity(&fig1(), 3.0, 0.7), 1.0);
        assert_eq!(edge_velocity(&fig3(), 3.0, 0.0), -1.0);
        let regime = classify_regime(&fig1()).unwrap();
        assert_eq!(boundary_influx(&fig1(), &regime, 3.0), 9.0);
        assert_eq!(boundary_influx(&fig1(), &regime, 0.0), 0.0);
        assert_eq!(boundary_influx(&fig1(), &regime, 2.0), 0.0);
        let r3 = classify_regime(&fig3()).unwrap();
        for k in 0..=30 {
            assert_eq!(boundary_influx(&fig3(), &r3, 0.1 * k as f64), 0.0);
        }
    }

    #[test]
    fn single_step_fills_first_cell() {
        let grid = LsGrid::new(4.0, 400).unwrap();
        let mut s = LsState::pure_monomer(grid, 3.0);
        let mut solver = LsSolver::new(fig1(), 0.9).unwrap();
        let dt = 1e-3;
        solver.step(&mut s, dt).unwrap();
        assert!((s.f[0] - dt * 9.0 / grid.dx()).abs() < 1e-12);
        assert!(s.f[1..].iter().all(|v| *v == 0.0));
        assert!((s.number() - 9.0 * dt).abs() < 1e-12);
        assert!(s.mass_defect().abs() < 1e-14);
    }

    #[test]
    fn no_source_no_density_is_steady() {
        let model = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 0.0, 1.0).unwrap();
        let grid = LsGrid::new(4.0, 100).unwrap();
        let run = solve_ls(&model, LsState::pure_monomer(grid, 3.0), &LsOptions::uniform(1.0, 8, 0.9)).unwrap();
        assert!(run.series.iter().all(|s| s.u == 3.0 && s.number == 0.0));
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = LsGrid::new(4.0, 100).unwrap();
        let mut s = LsState::pure_monomer(grid, 3.0);
        let mut solver = LsSolver::new(fig1(), 0.9).unwrap();
        let too_big = 2.0 * solver.max_dt(&s);
        assert!(matches!(solver.step(&mut s, too_big), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn fig1_run_is_positive_conservative_and_incoming() {
        let grid = LsGrid::new(4.0, 200).unwrap();
        let mut opts = LsOptions::uniform(1.0, 16, 0.9);
        opts.keep_steps = true;
        let run = solve_ls(&fig1(), LsState::pure_monomer(grid, 3.0), &opts).unwrap();
        assert_eq!(run.series.len(), 17);
        assert!(run.max_mass_defect < 1e-10 * 3.0 * run.steps.len() as f64);
        assert!(run.steps.iter().all(|s| s.f.iter().all(|v| *v >= 0.0)));
        assert!(run.rho_crossing.is_none());
        for b in &run.boundary {
            assert!(b.u > 2.0);
            assert_eq!(b.influx, b.u * b.u);
        }
        assert!(run.final_state.outflow_mass == 0.0);
        assert_eq!(run.profiles.len(), 1);
        assert!(run.series.windows(2).all(|w| w[1].u < w[0].u));
    }

    #[test]
    fn influx_switches_off_after_crossing() {
        // Large nucleation drives u below ρ = 2 quickly.
        let model = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 20.0, 1.0).unwrap();
        let grid = LsGrid::new(8.0, 400).unwrap();
        let run = solve_ls(&model, LsState::pure_monomer(grid, 3.0), &LsOptions::uniform(2.0, 20, 0.9)).unwrap();
        let t_cross = run.rho_crossing.expect("u should cross ρ");
        for b in &run.boundary {
            if b.u > 2.0 {
                assert_eq!(b.influx, 20.0 * b.u * b.u);
            } else {
                assert_eq!(b.influx, 0.0);
                assert!(b.t >= t_cross - run.dt_max);
            }
        }
    }

    #[test]
    fn outgoing_model_keeps_monomers() {
        let grid = LsGrid::new(6.0, 300).unwrap();
        let run = solve_ls(&fig3(), LsState::pure_monomer(grid, 3.0), &LsOptions::uniform(2.0, 4, 0.9)).unwrap();
        assert!(run.series.iter().all(|s| s.u == 3.0 && s.number == 0.0));
    }

    #[test]
    fn phi_one_residual_is_first_order() {
        let grid = LsGrid::new(4.0, 100).unwrap();
        let reports =
            weak_form_report(&fig1(), |g| Ok(LsState::pure_monomer(g, 3.0)), grid, 0.5, 0.9, &[TestFunction::One])
                .unwrap();
        assert!(reports[0].coarse.residual <= 3.0 * reports[0].estimate);
        let r = &reports[0];
        assert!(r.fine.residual < 0.6 * r.coarse.residual, "{r:?}");
    }
}

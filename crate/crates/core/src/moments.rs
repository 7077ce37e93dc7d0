//! Number and mass of clusters for size-independent rates:
//! `N' = α u²`, `P' = (a u - b) N`, `u = m - P`.
//!
//! The closure holds only while the boundary is incoming (`u > ρ`).

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{classify_regime, RateModel, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentParams {
    pub a0: f64,
    pub b0: f64,
    pub alpha: f64,
    pub m: f64,
}

impl MomentParams {
    pub fn from_model(model: &RateModel, m: f64) -> Result<Self> {
        let (a0, b0) = model.constant_rates().ok_or(Error::NotConstantRate)?;
        classify_regime(model)?;
        Ok(Self { a0, b0, alpha: model.alpha, m })
    }

    pub fn rho(&self) -> Threshold {
        if self.a0 > 0.0 {
            Threshold::Finite(self.b0 / self.a0)
        } else {
            Threshold::Infinite
        }
    }

    fn incoming(&self, u: f64) -> bool {
        self.rho().compare(u) == Ordering::Greater
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentState {
    pub t: f64,
    /// `⟨μ, 1⟩`
    pub n: f64,
    /// `⟨μ, x⟩`
    pub p: f64,
    pub u: f64,
}

impl MomentState {
    pub fn pure_monomer(m: f64) -> Self {
        Self { t: 0.0, n: 0.0, p: 0.0, u: m }
    }
}

/// `(N', P')`; fails once the boundary is no longer incoming.
pub fn moment_rhs(state: &MomentState, params: &MomentParams) -> Result<(f64, f64)> {
    if !params.incoming(state.u) {
        return Err(Error::RegimeExit { t: state.t });
    }
    Ok(raw_rhs(state.n, state.p, params))
}

#[inline]
fn raw_rhs(n: f64, p: f64, params: &MomentParams) -> (f64, f64) {
    let u = params.m - p;
    (params.alpha * u * u, (params.a0 * u - params.b0) * n)
}

fn rk4(n: f64, p: f64, h: f64, params: &MomentParams) -> (f64, f64) {
    let k1 = raw_rhs(n, p, params);
    let k2 = raw_rhs(n + 0.5 * h * k1.0, p + 0.5 * h * k1.1, params);
    let k3 = raw_rhs(n + 0.5 * h * k2.0, p + 0.5 * h * k2.1, params);
    let k4 = raw_rhs(n + h * k3.0, p + h * k3.1, params);
    (n + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0), p + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub params: MomentParams,
    /// States at the requested output times, truncated at a `ρ` crossing;
    /// the crossing state itself is appended last when one occurs.
    pub points: Vec<MomentState>,
    /// Time at which `u` reached `ρ`, to `1e-10`.
    pub rho_crossing: Option<f64>,
    /// Step size of the accepted refinement.
    pub dt: f64,
}

impl MomentSeries {
    /// The series as a result, failing with `RegimeExit` if `u` reached `ρ`.
    pub fn require_incoming(&self) -> Result<&Self> {
        match self.rho_crossing {
            Some(t) => Err(Error::RegimeExit { t }),
            None => Ok(self),
        }
    }

    pub fn u_at_outputs(&self) -> Vec<f64> {
        self.points.iter().take_while(|s| Some(s.t) != self.rho_crossing).map(|s| s.u).collect()
    }
}

const BISECTION_TOL: f64 = 1e-10;
const REFINEMENT_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 24;

fn integrate_fixed(
    init: &MomentState,
    params: &MomentParams,
    output_times: &[f64],
    dt: f64,
) -> (Vec<MomentState>, Option<f64>) {
    let mut points = Vec::with_capacity(output_times.len());
    let (mut n, mut p, mut t) = (init.n, init.p, init.t);
    let state = |t: f64, n: f64, p: f64| MomentState { t, n, p, u: params.m - p };
    if !params.incoming(params.m - p) {
        return (vec![state(t, n, p)], Some(t));
    }
    for &t_out in output_times {
        let span = t_out - t;
        if span > 0.0 {
            let steps = (span / dt).ceil().max(1.0) as usize;
            let t_start = t;
            for k in 0..steps {
                let t_next = t_start + span * (k + 1) as f64 / steps as f64;
                let h = t_next - t;
                let (n1, p1) = rk4(n, p, h, params);
                if !params.incoming(params.m - p1) {
                    // Bisect on the partial step length for u(t + s) = ρ.
                    let (mut lo, mut hi) = (0.0, h);
                    while hi - lo > BISECTION_TOL {
                        let mid = 0.5 * (lo + hi);
                        let (_, pm) = rk4(n, p, mid, params);
                        if params.incoming(params.m - pm) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let (nc, pc) = rk4(n, p, hi, params);
                    points.push(state(t + hi, nc, pc));
                    return (points, Some(t + hi));
                }
                n = n1;
                p = p1;
                t = t_next;
            }
        }
        points.push(state(t_out.max(t), n, p));
    }
    (points, None)
}

/// Classical RK4 landing on every output time, halving `dt` until two
/// successive refinements agree to `1e-8` at the outputs.
pub fn integrate_moments(
    init: MomentState,
    params: &MomentParams,
    output_times: &[f64],
    dt: f64,
) -> Result<MomentSeries> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step {dt} must be positive")));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) || output_times.iter().any(|t| *t < init.t) {
        return Err(invalid("output times must be increasing and not before the initial time"));
    }
    let mut h = dt;
    let mut prev = integrate_fixed(&init, params, output_times, h);
    for _ in 0..MAX_HALVINGS {
        h *= 0.5;
        let next = integrate_fixed(&init, params, output_times, h);
        let gap = if next.0.len() == prev.0.len() {
            next.0
                .iter()
                .zip(&prev.0)
                .map(|(a, b)| (a.n - b.n).abs().max((a.p - b.p).abs()).max((a.t - b.t).abs()))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        prev = next;
        if gap < REFINEMENT_TOL {
            break;
        }
    }
    let (points, rho_crossing) = prev;
    Ok(MomentSeries { params: *params, points, rho_crossing, dt: h })
}

//! Stationary states of the boundary-layer chain with a frozen free-particle
//! concentration `c`, and their comparison with frozen-bath simulations.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{flux_j, DiscreteRates, EpsilonFamily, RateModel, Regime, Threshold};
use crate::rng::run_indexed;
use crate::ssa::fenwick::ulps_apart;
use crate::ssa::{run_trajectory, ChainState, MassCheck, Mode, RunOptions, StopRule};
use crate::stats::mean_se;

/// Which branch of the classification applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StationaryCase {
    /// `r_a < r_b`, `c > 0`: only the zero sequence.
    AggregationZero,
    /// `r_b < r_a`: anything supported on `n = 0`.
    FragmentationFree,
    /// Balanced, `c < ρ`: the one-parameter family `Q_n c^n q_0`.
    Geometric,
    /// Balanced, `c > ρ`: only the zero sequence.
    BalancedZero,
    /// `c = 0`: `q_n = 0` for `n >= 1`.
    NoConcentration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryProfile {
    pub regime: Regime,
    pub case: StationaryCase,
    pub c: f64,
    pub q0: f64,
    pub q: Vec<f64>,
    /// `Q_n = Π_{i<n} a_i / b_{i+1}`
    pub products: Vec<f64>,
    /// `Σ_{n <= n_max} q_n`
    pub partial_norm: f64,
    /// Upper bound on `Σ_{n > n_max} q_n`.
    pub tail_bound: f64,
}

impl StationaryProfile {
    pub fn norm(&self) -> f64 {
        self.partial_norm + self.tail_bound
    }
}

/// `ln Q_n = n ln(ā/b̄) + r ln(2/(n+2))` for balanced power laws.
fn ln_product(rates: &DiscreteRates, n: usize) -> f64 {
    let l = rates.laws;
    n as f64 * (l.a_bar / l.b_bar).ln() + l.r_a * (2.0 / (n as f64 + 2.0)).ln()
}

/// Unevaluated sum `hi + lo` carrying about 106 bits.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn from_ratio(num: f64, den: f64) -> Self {
        Self::new(num).div(den)
    }

    fn div(self, den: f64) -> Self {
        let q = self.hi / den;
        let rem = (-q).mul_add(den, self.hi) + self.lo;
        Self::renormalise(q, rem / den)
    }

    fn renormalise(a: f64, b: f64) -> Self {
        let hi = a + b;
        Self { hi, lo: b - (hi - a) }
    }

    fn mul(self, other: Self) -> Self {
        let p = self.hi * other.hi;
        let err = self.hi.mul_add(other.hi, -p) + (self.hi * other.lo + self.lo * other.hi);
        Self::renormalise(p, err)
    }

    fn powi(self, mut n: usize) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        acc
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// `x^n (2/(n+2))^r`, through logarithms only when the value would leave
/// the normal range.
fn power_law_term(x: f64, r: f64, n: usize) -> f64 {
    let shape = (2.0 / (n as f64 + 2.0)).powf(r);
    let ln = n as f64 * x.ln() + shape.ln();
    if ln.abs() < 700.0 {
        DoubleDouble::new(x).powi(n).mul(DoubleDouble::new(shape)).value()
    } else {
        ln.exp()
    }
}

/// Closed-form `Q_n = (ā/b̄)^n (2/(n+2))^r` for `0 <= n <= n_max`.
pub fn q_products(rates: &DiscreteRates, n_max: usize) -> Vec<f64> {
    let l = rates.laws;
    let ratio = DoubleDouble::from_ratio(l.a_bar, l.b_bar);
    (0..=n_max)
        .map(|n| {
            let shape = (2.0 / (n as f64 + 2.0)).powf(l.r_a);
            if ln_product(rates, n).abs() < 700.0 {
                ratio.powi(n).mul(DoubleDouble::new(shape)).value()
            } else {
                ln_product(rates, n).exp()
            }
        })
        .collect()
}

/// `Q_n` by the defining product of the stored rates, in extended precision.
pub fn q_products_running(rates: &DiscreteRates) -> Vec<f64> {
    let mut out = Vec::with_capacity(rates.a.len());
    let mut q = DoubleDouble::ONE;
    out.push(1.0);
    for i in 0..rates.n_max() {
        q = q.mul(DoubleDouble::from_ratio(rates.a[i], rates.b[i + 1]));
        out.push(q.value());
    }
    out
}

pub fn stationary_states(
    regime: &Regime,
    rates: &DiscreteRates,
    c: f64,
    q0: f64,
    n_max: usize,
) -> Result<StationaryProfile> {
    if !(c >= 0.0 && c.is_finite()) || !(q0 >= 0.0 && q0.is_finite()) {
        return Err(invalid(format!("need c >= 0 and q0 >= 0 (got c = {c}, q0 = {q0})")));
    }
    let products = match regime {
        Regime::Balanced { .. } => q_products(rates, n_max),
        _ => Vec::new(),
    };
    let only_first = |case, q0| {
        let mut q = vec![0.0; n_max + 1];
        q[0] = q0;
        StationaryProfile {
            regime: *regime,
            case,
            c,
            q0,
            q,
            products: products.clone(),
            partial_norm: q0,
            tail_bound: 0.0,
        }
    };
    let case = match regime {
        _ if c == 0.0 => return Ok(only_first(StationaryCase::NoConcentration, q0)),
        Regime::AggregationDominant => return Ok(only_first(StationaryCase::AggregationZero, 0.0)),
        Regime::FragmentationDominant => return Ok(only_first(StationaryCase::FragmentationFree, q0)),
        Regime::Balanced { rho } if c > *rho => return Ok(only_first(StationaryCase::BalancedZero, 0.0)),
        Regime::Balanced { rho } if c == *rho => {
            return Err(Error::UnsupportedRegime(format!("c = ρ = {rho}: no stationary state is characterised")))
        }
        Regime::Balanced { .. } => StationaryCase::Geometric,
    };
    let l = rates.laws;
    let theta = c * l.a_bar / l.b_bar;
    if theta >= 1.0 {
        return Err(Error::DivergentNorm(format!("c ā / b̄ = {theta} >= 1")));
    }
    let q = geometric_profile(rates, c, q0, n_max);
    let partial_norm = q.iter().sum();
    let tail_bound =
        q0 * (2.0 / (n_max as f64 + 3.0)).powf(l.r_a) * power_law_term(theta, 0.0, n_max + 1) / (1.0 - theta);
    Ok(StationaryProfile { regime: *regime, case, c, q0, q, products, partial_norm, tail_bound })
}

/// `q_{n+1} = q_n a_n c / b_{n+1}` carried in extended precision so that the
/// fluxes cancel to rounding. Rates past the stored range follow the laws.
fn geometric_profile(rates: &DiscreteRates, c: f64, q0: f64, n_max: usize) -> Vec<f64> {
    let l = rates.laws;
    let rate =
        |v: &Vec<f64>, bar: f64, r: f64, n: usize| v.get(n).copied().unwrap_or_else(|| bar * ((n + 2) as f64).powf(r));
    let mut out = Vec::with_capacity(n_max + 1);
    let mut q = DoubleDouble { hi: q0, lo: 0.0 };
    out.push(q0);
    for n in 0..n_max {
        let gain = DoubleDouble::new(rate(&rates.a, l.a_bar, l.r_a, n)).mul(DoubleDouble::new(c));
        q = q.mul(gain).div(rate(&rates.b, l.b_bar, l.r_b, n + 1));
        out.push(q.value());
    }
    out
}

/// Largest `|J_n|` over `n < n_max`, in units in the last place of the
/// larger of its two terms.
pub fn flux_residual_ulps(profile: &StationaryProfile, rates: &DiscreteRates) -> Result<u64> {
    let n_top = (profile.q.len() - 1).min(rates.n_max());
    let mut worst = 0;
    for n in 0..n_top {
        let j = flux_j(&profile.regime, rates, profile.c, &profile.q, n)?;
        let gain = rates.a[n] * profile.c * profile.q[n];
        let loss = rates.b[n + 1] * profile.q.get(n + 1).copied().unwrap_or(0.0);
        let scale = gain.abs().max(loss.abs());
        let ulps = if j == 0.0 { 0 } else { ulps_apart(scale, scale + j.abs()) };
        worst = worst.max(ulps);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusEstimate {
    /// `Q_n^{1/n}` at `n = n_max`.
    pub estimate: f64,
    /// `ā / b̄ = 1/ρ`
    pub limit: f64,
    /// `|estimate / limit - 1|`
    pub deviation: f64,
    /// `1 - (2/(n_max+2))^{r/n_max}`
    pub deviation_bound: f64,
}

pub fn radius_check(rates: &DiscreteRates, n_max: usize) -> Result<RadiusEstimate> {
    if n_max == 0 || n_max > rates.n_max() {
        return Err(Error::IndexOutOfRange { index: n_max, len: rates.a.len() });
    }
    let ln_q: f64 = (0..n_max).map(|i| (rates.a[i] / rates.b[i + 1]).ln()).sum();
    let estimate = (ln_q / n_max as f64).exp();
    let limit = rates.laws.a_bar / rates.laws.b_bar;
    let deviation_bound = 1.0 - (ln_product(rates, n_max) / n_max as f64 - limit.ln()).exp();
    Ok(RadiusEstimate { estimate, limit, deviation: (estimate / limit - 1.0).abs(), deviation_bound })
}

/// Time averages of `ε k_{n+2}` from independent frozen-bath trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrozenBathSample {
    pub eps: f64,
    pub c: f64,
    pub window: (f64, f64),
    /// `[trajectory][n]`
    pub averages: Vec<Vec<f64>>,
    /// `[trajectory][half][n]`
    pub half_averages: Vec<[Vec<f64>; 2]>,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub struct FrozenBathRun {
    pub model: RateModel,
    pub c: f64,
    pub burn_in: f64,
    pub window: f64,
    pub n_max: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub workers: usize,
    pub event_budget: u64,
}

/// Runs the frozen-bath chain from an empty cluster population.
pub fn sample_frozen_bath(run: &FrozenBathRun, eps: f64) -> Result<FrozenBathSample> {
    let family = EpsilonFamily::new(run.model.clone(), eps)?;
    let mode = Mode::FrozenBath { family, c: run.c };
    mode.validate()?;
    let t0 = run.burn_in;
    let t1 = run.burn_in + run.window;
    let opts = RunOptions {
        occupation: Some((t0, t1, run.n_max)),
        event_budget: run.event_budget,
        mass_check: MassCheck::Off,
        ..RunOptions::default()
    };
    // The reservoir supplies monomers; the monomer count itself only enters
    // through c.
    let n1 = (run.c / (eps * eps)).round() as u64;
    let init = ChainState::pure_monomer(n1.max(2));
    let stop = StopRule::EndTime(t1);
    let results =
        run_indexed(run.n_traj, run.seed, run.workers, |_, rng| run_trajectory(init.clone(), &mode, &stop, &opts, rng));
    let mut sample =
        FrozenBathSample { eps, c: run.c, window: (t0, t1), averages: vec![], half_averages: vec![], events: 0 };
    for rec in results {
        let rec = rec?;
        let occ = rec.occupation.ok_or_else(|| invalid("occupation window was not recorded"))?;
        sample.averages.push(occ.averages());
        sample.half_averages.push(occ.half_averages());
        sample.events += rec.events;
    }
    Ok(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioRow {
    pub n: usize,
    /// `⟨k_{n+2}⟩ / ⟨k_2⟩` from ensemble means of time averages.
    pub ratio: f64,
    /// Delta-method standard error across trajectories.
    pub se: f64,
    /// `Q_n c^n`
    pub predicted: f64,
}

impl RatioRow {
    pub fn z_score(&self) -> f64 {
        (self.ratio - self.predicted) / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledOccupancy {
    pub eps: f64,
    /// Ensemble mean and standard error of `ε ⟨k_{n+2}⟩_time` per `n`.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SupportReport {
    /// Balanced, `c < ρ`: one ratio table per sample.
    Ratios(Vec<(f64, Vec<RatioRow>)>),
    /// `c > ρ`: scaled occupancies ordered by decreasing `ε`, which should
    /// fall towards zero.
    Vanishing { levels: Vec<ScaledOccupancy>, decreasing: bool },
    /// Occupancies only; the limit measure is not identified.
    Unidentified(Vec<ScaledOccupancy>),
}

fn column(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    rows.iter().map(|r| r[n]).collect()
}

fn occupancy(sample: &FrozenBathSample) -> ScaledOccupancy {
    let n_max = sample.averages.first().map_or(0, |r| r.len());
    let (mean, se) = (0..n_max).map(|n| mean_se(&column(&sample.averages, n))).unzip();
    ScaledOccupancy { eps: sample.eps, mean, se }
}

fn check_burn_in(sample: &FrozenBathSample, tolerance: f64) -> Result<()> {
    let (t0, t1) = sample.window;
    if !(t1 > t0) || sample.averages.is_empty() {
        return Err(Error::InsufficientBurnIn(format!("empty sample window [{t0}, {t1}]")));
    }
    let n_max = sample.averages[0].len();
    for n in 0..n_max {
        let diffs: Vec<f64> = sample.half_averages.iter().map(|h| h[0][n] - h[1][n]).collect();
        let (d, se) = mean_se(&diffs);
        let (level, _) = mean_se(&column(&sample.averages, n));
        let allowance = tolerance * level.abs() + if se.is_finite() { 4.0 * se } else { 0.0 };
        if d.abs() > allowance {
            return Err(Error::InsufficientBurnIn(format!(
                "ε = {}: half-window averages of ε k_{} differ by {d:.3e} (allowed {allowance:.3e})",
                sample.eps,
                n + 2
            )));
        }
    }
    Ok(())
}

/// Compares frozen-bath time averages with the stationary classification.
/// `tolerance` is the relative half-window drift allowed on top of four
/// standard errors.
pub fn verify_stationary_measure_support(
    samples: &[FrozenBathSample],
    regime: &Regime,
    rates: &DiscreteRates,
    c: f64,
    tolerance: f64,
) -> Result<SupportReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientBurnIn("no samples".into()));
    }
    for s in samples {
        check_burn_in(s, tolerance)?;
    }
    let above = matches!(regime.rho(), Threshold::Finite(rho) if c > rho);
    match regime {
        Regime::Balanced { rho } if c < *rho => {
            let profile = stationary_states(regime, rates, c, 1.0, rates.n_max())?;
            let tables = samples
                .iter()
                .map(|s| {
                    let n_max = s.averages[0].len().min(profile.q.len());
                    let base = column(&s.averages, 0);
                    let (y_bar, _) = mean_se(&base);
                    let rows = (0..n_max)
                        .map(|n| {
                            let x = column(&s.averages, n);
                            let (x_bar, _) = mean_se(&x);
                            let ratio = x_bar / y_bar;
                            let resid: Vec<f64> = x.iter().zip(&base).map(|(xi, yi)| xi - ratio * yi).collect();
                            let (_, se_resid) = mean_se(&resid);
                            RatioRow { n, ratio, se: se_resid / y_bar, predicted: profile.q[n] }
                        })
                        .collect();
                    (s.eps, rows)
                })
                .collect();
            Ok(SupportReport::Ratios(tables))
        }
        Regime::Balanced { .. } | Regime::AggregationDominant if above => {
            let mut levels: Vec<ScaledOccupancy> = samples.iter().map(occupancy).collect();
            levels.sort_by(|a, b| b.eps.total_cmp(&a.eps));
            let decreasing =
                levels.windows(2).all(|w| w[0].mean.iter().zip(&w[1].mean).all(|(coarse, fine)| fine < coarse));
            Ok(SupportReport::Vanishing { levels, decreasing })
        }
        Regime::Balanced { rho } if c == *rho => {
            Err(Error::UnsupportedRegime(format!("c = ρ = {rho}: no stationary state is characterised")))
        }
        _ => Ok(SupportReport::Unidentified(samples.iter().map(occupancy).collect())),
    }
}

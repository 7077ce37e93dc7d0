//! Rate models, the ε-family of lattice rates, regime classification and the
//! Becker-Döring boundary-layer fluxes.
//!
//! A [`RateModel`] pairs the aggregation law `a(x)` and fragmentation law
//! `b(x)` with the nucleation/de-nucleation constants and the declared
//! near-zero power laws `a(x) ~ ā x^{r_a}`, `b(x) ~ b̄ x^{r_b}`. Only the
//! declared metadata is trusted for regime decisions; the analytic
//! assumptions are checked by sampling (see [`RateModel::check_assumptions`]).

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Size-dependent rate law.
#[derive(Clone)]
pub enum RateFn {
    Constant(f64),
    /// `intercept + slope * x`
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `prefactor * x^exponent`
    PowerLaw {
        prefactor: f64,
        exponent: f64,
    },
    Table(Arc<RateTable>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::Constant(v) => write!(f, "Constant({v})"),
            RateFn::Linear { slope, intercept } => write!(f, "Linear({intercept} + {slope} x)"),
            RateFn::PowerLaw { prefactor, exponent } => write!(f, "PowerLaw({prefactor} x^{exponent})"),
            RateFn::Table(t) => write!(f, "Table({} points)", t.x.len()),
            RateFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl RateFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RateFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RateFn::Constant(v) => *v,
            RateFn::Linear { slope, intercept } => intercept + slope * x,
            RateFn::PowerLaw { prefactor, exponent } => {
                if *exponent == 0.0 {
                    *prefactor
                } else {
                    prefactor * x.powf(*exponent)
                }
            }
            RateFn::Table(t) => t.eval(x),
            RateFn::Custom(f) => f(x),
        }
    }

    /// The value when the law does not depend on size.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            RateFn::Constant(v) => Some(*v),
            RateFn::Linear { slope, intercept } if *slope == 0.0 => Some(*intercept),
            RateFn::PowerLaw { prefactor, exponent } if *exponent == 0.0 => Some(*prefactor),
            _ => None,
        }
    }

    /// Near-zero power law `(prefactor, exponent)` for the built-in shapes.
    fn near_zero_law(&self) -> Option<(f64, f64)> {
        match self {
            RateFn::Constant(v) => Some((*v, 0.0)),
            RateFn::Linear { slope, intercept } => {
                if *intercept > 0.0 {
                    Some((*intercept, 0.0))
                } else if *intercept == 0.0 && *slope > 0.0 {
                    Some((*slope, 1.0))
                } else {
                    None
                }
            }
            RateFn::PowerLaw { prefactor, exponent } => Some((*prefactor, *exponent)),
            RateFn::Table(_) | RateFn::Custom(_) => None,
        }
    }

    /// Smallest `K` with `f(x) <= K (1 + x)` for the built-in shapes.
    fn linear_bound(&self) -> Option<f64> {
        match self {
            RateFn::Constant(v) => Some(v.max(0.0)),
            RateFn::Linear { slope, intercept } => Some(slope.max(0.0).max(*intercept).max(0.0)),
            RateFn::PowerLaw { prefactor, exponent } if *exponent <= 1.0 => Some(prefactor.max(0.0)),
            _ => None,
        }
    }
}

/// Piecewise-linear tabulated rate, constant beyond the tabulated range.
#[derive(Debug, Clone)]
pub struct RateTable {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl RateTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("rate table is empty"));
        }
        let mut points = points;
        points.sort_by(|l, r| l.0.total_cmp(&r.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("rate table has duplicate abscissae"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite() || *y < 0.0) {
            return Err(invalid("rate table entries must be finite and rates nonnegative"));
        }
        let (x, y) = points.into_iter().unzip();
        Ok(Self { x, y })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.y[0];
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let hi = self.x.partition_point(|&xi| xi <= x);
        let lo = hi - 1;
        let w = (x - self.x[lo]) / (self.x[hi] - self.x[lo]);
        self.y[lo] + w * (self.y[hi] - self.y[lo])
    }
}

/// Reads `(x, a(x), b(x))` triples from a CSV file with a header row.
pub fn read_rate_csv(path: &Path) -> Result<(RateTable, RateTable)> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for row in reader.deserialize::<(f64, f64, f64)>() {
        let (x, ax, bx) = row?;
        a.push((x, ax));
        b.push((x, bx));
    }
    Ok((RateTable::new(a)?, RateTable::new(b)?))
}

/// Declared near-zero behaviour `a(x) ~ ā x^{r_a}`, `b(x) ~ b̄ x^{r_b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaws {
    pub r_a: f64,
    pub r_b: f64,
    pub a_bar: f64,
    pub b_bar: f64,
}

#[derive(Debug, Clone)]
pub struct RateModel {
    pub a: RateFn,
    pub b: RateFn,
    pub alpha: f64,
    pub beta: f64,
    pub laws: PowerLaws,
    /// Declared `K_a`, `K_b` with `a(x) <= K_a (1 + x)`, `b(x) <= K_b (1 + x)`.
    pub k_a: Option<f64>,
    pub k_b: Option<f64>,
}

/// Sampling parameters for [`RateModel::check_assumptions`].
#[derive(Debug, Clone, Copy)]
pub struct AssumptionCheck {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Start of the decade probed for the near-zero power law.
    pub probe: f64,
    pub tol: f64,
}

impl Default for AssumptionCheck {
    fn default() -> Self {
        Self { x_lo: 1e-6, x_hi: 1e3, probe: 1e-8, tol: 1e-3 }
    }
}

/// Geometric grid with 32 points per decade over `[lo, hi]`.
pub fn decade_grid(lo: f64, hi: f64) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * 32.0).ceil().max(1.0) as usize;
    (0..=n).map(|k| lo * 10f64.powf(decades * k as f64 / n as f64)).collect()
}

impl RateModel {
    /// Builds a model from built-in laws, inferring the power-law metadata.
    /// Tabulated or closure laws need [`RateModel::with_laws`].
    pub fn new(a: RateFn, b: RateFn, alpha: f64, beta: f64) -> Result<Self> {
        let (a_bar, r_a) =
            a.near_zero_law().ok_or_else(|| invalid(format!("cannot infer near-zero law of a = {a:?}; declare it")))?;
        let (b_bar, r_b) =
            b.near_zero_law().ok_or_else(|| invalid(format!("cannot infer near-zero law of b = {b:?}; declare it")))?;
        let laws = PowerLaws { r_a, r_b, a_bar, b_bar };
        let k_a = a.linear_bound();
        let k_b = b.linear_bound();
        Self::with_laws(a, b, alpha, beta, laws).map(|m| Self { k_a, k_b, ..m })
    }

    pub fn with_laws(a: RateFn, b: RateFn, alpha: f64, beta: f64, laws: PowerLaws) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid(format!("alpha = {alpha}, beta = {beta} must be finite and >= 0")));
        }
        // A vanishing prefactor stands for a law that is identically zero
        // near the origin (pure transport with b = 0, say).
        if !(laws.a_bar >= 0.0 && laws.b_bar >= 0.0) || laws.a_bar + laws.b_bar == 0.0 {
            return Err(invalid("prefactors ā, b̄ must be >= 0 and not both zero"));
        }
        if !(laws.r_a >= 0.0 && laws.r_b >= 0.0) {
            return Err(invalid("exponents r_a, r_b must be >= 0"));
        }
        Ok(Self { a, b, alpha, beta, laws, k_a: None, k_b: None })
    }

    pub fn with_bounds(mut self, k_a: f64, k_b: f64) -> Self {
        self.k_a = Some(k_a);
        self.k_b = Some(k_b);
        self
    }

    /// Constant rates `(a, b)` when neither law depends on size.
    pub fn constant_rates(&self) -> Option<(f64, f64)> {
        Some((self.a.constant_value()?, self.b.constant_value()?))
    }

    /// Transport velocity `a(x) u - b(x)`.
    #[inline]
    pub fn velocity(&self, u: f64, x: f64) -> f64 {
        self.a.eval(x) * u - self.b.eval(x)
    }

    /// Sampled checks of positivity, linear growth bounds and the near-zero
    /// power laws. Returns every violation found.
    pub fn check_assumptions(&self, check: &AssumptionCheck) -> Vec<String> {
        let mut out = Vec::new();
        for (name, f, k) in [("a", &self.a, self.k_a), ("b", &self.b, self.k_b)] {
            let Some(k) = k else {
                out.push(format!("no linear bound K_{name} declared"));
                continue;
            };
            for x in decade_grid(check.x_lo, check.x_hi) {
                let v = f.eval(x);
                if !v.is_finite() || v < 0.0 {
                    out.push(format!("{name}({x:e}) = {v} is not a finite nonnegative rate"));
                    break;
                }
                if v > k * (1.0 + x) * (1.0 + 1e-12) {
                    out.push(format!("{name}({x:e}) = {v:e} exceeds K_{name}(1+x) with K_{name} = {k}"));
                    break;
                }
            }
        }
        let laws = &self.laws;
        for (name, f, pre, r) in [("a", &self.a, laws.a_bar, laws.r_a), ("b", &self.b, laws.b_bar, laws.r_b)] {
            for x in decade_grid(check.probe, 10.0 * check.probe) {
                if pre == 0.0 {
                    if f.eval(x) != 0.0 {
                        out.push(format!("{name}({x:e}) = {} but the declared prefactor is 0", f.eval(x)));
                        break;
                    }
                    continue;
                }
                let ratio = f.eval(x) / (pre * x.powf(r));
                if !((ratio - 1.0).abs() <= check.tol) {
                    out.push(format!(
                        "{name}(x)/({pre} x^{r}) = {ratio} at x = {x:e} is not within {} of 1",
                        check.tol
                    ));
                    break;
                }
            }
        }
        out
    }
}

/// The threshold `ρ = lim_{x→0} b(x)/a(x)`; `+∞` is symbolic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    /// Orders a concentration against the threshold.
    pub fn compare(&self, u: f64) -> Ordering {
        match self {
            Threshold::Finite(rho) => u.total_cmp(rho),
            Threshold::Infinite => Ordering::Less,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Threshold::Finite(r) => Some(*r),
            Threshold::Infinite => None,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(r) => write!(f, "{r}"),
            Threshold::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Regime {
    /// `r_a < r_b`, ρ = 0.
    AggregationDominant,
    /// `r_b < r_a`, ρ = +∞.
    FragmentationDominant,
    /// `r_a = r_b`, ρ = b̄/ā.
    Balanced { rho: f64 },
}

/// Orientation of the characteristics at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Incoming,
    Outgoing,
    Tie,
}

impl Regime {
    pub fn rho(&self) -> Threshold {
        match self {
            Regime::AggregationDominant => Threshold::Finite(0.0),
            Regime::FragmentationDominant => Threshold::Infinite,
            Regime::Balanced { rho } => Threshold::Finite(*rho),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::AggregationDominant => "AggregationDominant",
            Regime::FragmentationDominant => "FragmentationDominant",
            Regime::Balanced { .. } => "Balanced",
        }
    }

    pub fn boundary(&self, u: f64) -> Boundary {
        match self.rho().compare(u) {
            Ordering::Greater => Boundary::Incoming,
            Ordering::Less => Boundary::Outgoing,
            Ordering::Equal => Boundary::Tie,
        }
    }
}

pub fn classify_regime(model: &RateModel) -> Result<Regime> {
    let PowerLaws { r_a, r_b, a_bar, b_bar } = model.laws;
    if r_a.min(r_b) >= 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "min(r_a, r_b) = {} >= 1: no boundary condition is identified",
            r_a.min(r_b)
        )));
    }
    if b_bar == 0.0 {
        return Ok(Regime::AggregationDominant);
    }
    if a_bar == 0.0 {
        return Ok(Regime::FragmentationDominant);
    }
    Ok(match r_a.total_cmp(&r_b) {
        Ordering::Less => Regime::AggregationDominant,
        Ordering::Greater => Regime::FragmentationDominant,
        Ordering::Equal => Regime::Balanced { rho: b_bar / a_bar },
    })
}

/// Lattice rates `a^ε(εi)`, `b^ε(εi)` of one scaling level.
///
/// By default the lattice rates are the base laws evaluated at `εi`; either
/// table can be overridden per index.
#[derive(Debug, Clone)]
pub struct EpsilonFamily {
    pub base: RateModel,
    pub eps: f64,
    pub alpha_eps: f64,
    pub beta_eps: f64,
    a_override: Option<Arc<Vec<f64>>>,
    b_override: Option<Arc<Vec<f64>>>,
}

impl EpsilonFamily {
    pub fn new(base: RateModel, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps = {eps} must be > 0")));
        }
        Ok(Self { alpha_eps: base.alpha, beta_eps: base.beta, base, eps, a_override: None, b_override: None })
    }

    /// Overrides `a^ε(εi)` with `table[i]` for the indices the table covers.
    pub fn with_aggregation_table(mut self, table: Vec<f64>) -> Self {
        self.a_override = Some(Arc::new(table));
        self
    }

    pub fn with_fragmentation_table(mut self, table: Vec<f64>) -> Self {
        self.b_override = Some(Arc::new(table));
        self
    }

    /// `a^ε(εi)`
    #[inline]
    pub fn a_eps(&self, i: usize) -> f64 {
        match &self.a_override {
            Some(t) if i < t.len() => t[i],
            _ => self.base.a.eval(self.eps * i as f64),
        }
    }

    /// `b^ε(εi)`
    #[inline]
    pub fn b_eps(&self, i: usize) -> f64 {
        match &self.b_override {
            Some(t) if i < t.len() => t[i],
            _ => self.base.b.eval(self.eps * i as f64),
        }
    }

    /// Largest `|a^ε(εi) - a(εi)| / ε^{r_a}` over `2 <= i <= i_max` and the
    /// analogous fragmentation deviation over `3 <= i <= i_max`.
    pub fn lattice_deviation(&self, i_max: usize) -> (f64, f64) {
        let laws = self.base.laws;
        let da = (2..=i_max).map(|i| (self.a_eps(i) - self.base.a.eval(self.eps * i as f64)).abs()).fold(0.0, f64::max)
            / self.eps.powf(laws.r_a);
        let db = (3..=i_max).map(|i| (self.b_eps(i) - self.base.b.eval(self.eps * i as f64)).abs()).fold(0.0, f64::max)
            / self.eps.powf(laws.r_b);
        (da, db)
    }
}

/// `a_n = ā (n+2)^{r_a}`, `b_n = b̄ (n+2)^{r_b}` for `0 <= n <= n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRates {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub laws: PowerLaws,
}

pub fn discrete_rates(model: &RateModel, n_max: usize) -> Result<DiscreteRates> {
    if n_max < 1 {
        return Err(invalid("n_max must be >= 1"));
    }
    let l = model.laws;
    let a = (0..=n_max).map(|n| l.a_bar * ((n + 2) as f64).powf(l.r_a)).collect();
    let b = (0..=n_max).map(|n| l.b_bar * ((n + 2) as f64).powf(l.r_b)).collect();
    Ok(DiscreteRates { a, b, laws: l })
}

impl DiscreteRates {
    pub fn n_max(&self) -> usize {
        self.a.len() - 1
    }
}

/// Boundary-layer flux `J_n(c, q)`; entries of `q` past its end count as 0.
pub fn flux_j(regime: &Regime, rates: &DiscreteRates, c: f64, q: &[f64], n: usize) -> Result<f64> {
    if n + 1 >= rates.b.len() {
        return Err(Error::IndexOutOfRange { index: n, len: rates.a.len() });
    }
    let qn = q.get(n).copied().unwrap_or(0.0);
    let qn1 = q.get(n + 1).copied().unwrap_or(0.0);
    Ok(match regime {
        Regime::Balanced { .. } => rates.a[n] * c * qn - rates.b[n + 1] * qn1,
        Regime::AggregationDominant => rates.a[n] * c * qn,
        Regime::FragmentationDominant => -rates.b[n + 1] * qn1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(a: f64, b: f64) -> RateModel {
        RateModel::new(RateFn::Constant(a), RateFn::Constant(b), 1.0, 1.0).unwrap()
    }

    fn powers(r_a: f64, r_b: f64) -> RateModel {
        RateModel::new(
            RateFn::PowerLaw { prefactor: 1.0, exponent: r_a },
            RateFn::PowerLaw { prefactor: 1.0, exponent: r_b },
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(&balanced(1.0, 2.0)).unwrap(), Regime::Balanced { rho: 2.0 });
        let agg = classify_regime(&powers(0.5, 0.9)).unwrap();
        assert_eq!(agg, Regime::AggregationDominant);
        assert_eq!(agg.rho(), Threshold::Finite(0.0));
        let frag = classify_regime(&powers(0.9, 0.5)).unwrap();
        assert_eq!(frag, Regime::FragmentationDominant);
        assert_eq!(frag.rho(), Threshold::Infinite);
        assert!(matches!(classify_regime(&powers(1.0, 1.5)), Err(Error::UnsupportedRegime(_))));
    }

    #[test]
    fn infinite_threshold_is_never_exceeded() {
        let r = Regime::FragmentationDominant;
        assert_eq!(r.boundary(1e300), Boundary::Outgoing);
        assert_eq!(r.boundary(f64::MAX), Boundary::Outgoing);
        let b = Regime::Balanced { rho: 2.0 };
        assert_eq!(b.boundary(2.0), Boundary::Tie);
        assert_eq!(b.boundary(3.0), Boundary::Incoming);
    }

    #[test]
    fn inferred_laws() {
        let lin = RateModel::new(
            RateFn::Linear { slope: 1.0, intercept: 0.0 },
            RateFn::Linear { slope: 3.0, intercept: 2.0 },
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(lin.laws, PowerLaws { r_a: 1.0, r_b: 0.0, a_bar: 1.0, b_bar: 2.0 });
        assert_eq!(classify_regime(&lin).unwrap(), Regime::FragmentationDominant);
        assert!(RateModel::new(RateFn::custom(|x| x), RateFn::Constant(1.0), 1.0, 1.0).is_err());
        let transport = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(0.0), 0.0, 0.0).unwrap();
        assert_eq!(classify_regime(&transport).unwrap(), Regime::AggregationDominant);
        assert!(transport.check_assumptions(&AssumptionCheck::default()).is_empty());
    }

    #[test]
    fn discrete_rate_examples() {
        let m = balanced(1.0, 1.0);
        assert_eq!(discrete_rates(&m, 5).unwrap().a[5], 1.0);
        let m = RateModel::new(RateFn::Constant(1.0), RateFn::PowerLaw { prefactor: 2.0, exponent: 0.5 }, 1.0, 1.0)
            .unwrap();
        assert_eq!(discrete_rates(&m, 4).unwrap().b[2], 4.0);
        assert!(discrete_rates(&m, 0).is_err());
    }

    #[test]
    fn flux_examples() {
        let rates = DiscreteRates {
            a: vec![1.0; 4],
            b: vec![2.0; 4],
            laws: PowerLaws { r_a: 0.0, r_b: 0.0, a_bar: 1.0, b_bar: 2.0 },
        };
        let reg = Regime::Balanced { rho: 2.0 };
        assert_eq!(flux_j(&reg, &rates, 3.0, &[1.0, 1.0], 0).unwrap(), 1.0);
        for r in [reg, Regime::AggregationDominant, Regime::FragmentationDominant] {
            for n in 0..3 {
                assert_eq!(flux_j(&r, &rates, 3.0, &[0.0; 4], n).unwrap(), 0.0);
            }
        }
        assert!(matches!(flux_j(&reg, &rates, 3.0, &[1.0], 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn assumption_sampling() {
        let m = balanced(1.0, 2.0);
        assert!(m.check_assumptions(&AssumptionCheck::default()).is_empty());

        let quad = RateModel::new(RateFn::PowerLaw { prefactor: 1.0, exponent: 2.0 }, RateFn::Constant(1.0), 1.0, 1.0)
            .unwrap();
        let v = quad.check_assumptions(&AssumptionCheck::default());
        assert!(v.iter().any(|s| s.contains("K_a")), "{v:?}");

        // Declared law that does not match the function near zero.
        let wrong = RateModel::with_laws(
            RateFn::Linear { slope: 1.0, intercept: 1.0 },
            RateFn::Constant(1.0),
            1.0,
            1.0,
            PowerLaws { r_a: 0.0, r_b: 0.0, a_bar: 2.0, b_bar: 1.0 },
        )
        .unwrap()
        .with_bounds(1.0, 1.0);
        let v = wrong.check_assumptions(&AssumptionCheck::default());
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn decade_grid_density() {
        let g = decade_grid(1e-2, 1e2);
        assert_eq!(g.len(), 4 * 32 + 1);
        assert!((g[32] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn lattice_defaults_and_overrides() {
        let base =
            RateModel::new(RateFn::Linear { slope: 1.0, intercept: 0.0 }, RateFn::Constant(1.0), 1.0, 1.0).unwrap();
        let fam = EpsilonFamily::new(base.clone(), 0.1).unwrap();
        assert!((fam.a_eps(7) - 0.7).abs() < 1e-15);
        assert_eq!(fam.lattice_deviation(50), (0.0, 0.0));
        let fam = EpsilonFamily::new(base, 0.1).unwrap().with_aggregation_table(vec![0.0, 0.0, 0.25]);
        assert_eq!(fam.a_eps(2), 0.25);
        assert!((fam.lattice_deviation(10).0 - 0.05 / 0.1).abs() < 1e-12);
    }

    #[test]
    fn table_interpolates() {
        let t = RateTable::new(vec![(1.0, 2.0), (0.0, 0.0), (2.0, 2.0)]).unwrap();
        assert_eq!(t.eval(-1.0), 0.0);
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(9.0), 2.0);
        assert!(RateTable::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn regime_scale_invariance(a in 0.01f64..10.0, b in 0.01f64..10.0, lambda in 0.01f64..100.0,
                                   r_a in 0.0f64..0.99, r_b in 0.0f64..0.99) {
            let mk = |s: f64| RateModel::with_laws(RateFn::Constant(1.0), RateFn::Constant(1.0), 1.0, 1.0,
                PowerLaws { r_a, r_b, a_bar: s * a, b_bar: s * b }).unwrap();
            let r1 = classify_regime(&mk(1.0)).unwrap();
            let r2 = classify_regime(&mk(lambda)).unwrap();
            proptest::prop_assert_eq!(r1.name(), r2.name());
            if let (Regime::Balanced { rho: x }, Regime::Balanced { rho: y }) = (r1, r2) {
                proptest::prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * x);
            }
        }

        #[test]
        fn aggregation_flux_is_linear(c in 0.0f64..10.0, q0 in 0.0f64..5.0, q1 in 0.0f64..5.0, k in 0.0f64..4.0) {
            let rates = DiscreteRates { a: vec![1.5; 3], b: vec![0.5; 3],
                laws: PowerLaws { r_a: 0.0, r_b: 0.5, a_bar: 1.5, b_bar: 0.5 } };
            let r = Regime::AggregationDominant;
            let j = flux_j(&r, &rates, c, &[q0, q1], 0).unwrap();
            let jq = flux_j(&r, &rates, c, &[k * q0, k * q1], 0).unwrap();
            let jc = flux_j(&r, &rates, k * c, &[q0, q1], 0).unwrap();
            proptest::prop_assert!((jq - k * j).abs() <= 1e-12 * (1.0 + j.abs() * k));
            proptest::prop_assert!((jc - k * j).abs() <= 1e-12 * (1.0 + j.abs() * k));
        }
    }
}

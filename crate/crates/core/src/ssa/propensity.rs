use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::kinetics::EpsilonFamily;

use super::state::ChainState;

type SizeRate = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Mass-action coefficients of the unscaled chain.
#[derive(Clone)]
pub struct RawCoefficients {
    /// Nucleation constant: rate `a_1 n1 (n1 - 1)`.
    pub a1: f64,
    /// De-nucleation constant: rate `b_2 k_2`.
    pub b2: f64,
    a: SizeRate,
    b: SizeRate,
    /// Size scale used when the trajectory is reported as a rescaled measure.
    pub eps: f64,
}

impl fmt::Debug for RawCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RawCoefficients")
            .field("a1", &self.a1)
            .field("b2", &self.b2)
            .field("eps", &self.eps)
            .finish_non_exhaustive()
    }
}

impl RawCoefficients {
    pub fn new(
        a1: f64,
        b2: f64,
        a: impl Fn(usize) -> f64 + Send + Sync + 'static,
        b: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { a1, b2, a: Arc::new(a), b: Arc::new(b), eps: 1.0 }
    }

    /// `a_i = a^ε(εi)`, `b_i = b^ε(εi)`, `a_1 = α^ε`, `b_2 = β^ε`.
    pub fn from_family(fam: &EpsilonFamily) -> Self {
        let fa = fam.clone();
        let fb = fam.clone();
        Self {
            a1: fam.alpha_eps,
            b2: fam.beta_eps,
            a: Arc::new(move |i| fa.a_eps(i)),
            b: Arc::new(move |i| fb.b_eps(i)),
            eps: fam.eps,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn a(&self, i: usize) -> f64 {
        (self.a)(i)
    }

    pub fn b(&self, i: usize) -> f64 {
        (self.b)(i)
    }
}

/// Which generator drives a trajectory.
#[derive(Debug, Clone)]
pub enum Mode {
    /// Unscaled integer chain.
    Raw(RawCoefficients),
    /// ε-rescaled chain; monomers are consumed from the conserved mass.
    Rescaled(EpsilonFamily),
    /// Rescaled cluster moves against a reservoir holding the free-particle
    /// concentration at `c`.
    FrozenBath { family: EpsilonFamily, c: f64 },
}

impl Mode {
    pub fn eps(&self) -> f64 {
        match self {
            Mode::Raw(c) => c.eps,
            Mode::Rescaled(f) | Mode::FrozenBath { family: f, .. } => f.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Mode::FrozenBath { c, .. } = self {
            if !(*c >= 0.0 && c.is_finite()) {
                return Err(invalid(format!("frozen-bath concentration c = {c} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn propensities(&self, state: &ChainState) -> Result<Propensities> {
        let mut ch = Channels::new(self);
        ch.full(state)
    }
}

/// Channel rates of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Propensities {
    pub nucleation: f64,
    pub denucleation: f64,
    pub aggregation_total: f64,
    pub fragmentation_total: f64,
    /// `(size, rate)` for every occupied size.
    pub aggregation: Vec<(usize, f64)>,
    /// `(size, rate)` for every occupied size >= 3.
    pub fragmentation: Vec<(usize, f64)>,
}

impl Propensities {
    pub fn total(&self) -> f64 {
        self.nucleation + self.denucleation + self.aggregation_total + self.fragmentation_total
    }
}

/// With `u = ε² n1`: nucleation `α^ε ε³ n1(n1-1)`, de-nucleation `β^ε k_2`,
/// aggregation `a^ε(εi) ε n1 k_i`, fragmentation `b^ε(εi) k_i / ε`.
pub fn propensities_rescaled(state: &ChainState, fam: &EpsilonFamily) -> Result<Propensities> {
    Mode::Rescaled(fam.clone()).propensities(state)
}

/// Nucleation `a_1 n1(n1-1)`, de-nucleation `b_2 k_2`, aggregation
/// `a_i n1 k_i`, fragmentation `b_i k_i`.
pub fn propensities_raw(state: &ChainState, coeffs: &RawCoefficients) -> Result<Propensities> {
    Mode::Raw(coeffs.clone()).propensities(state)
}

/// Per-mode coefficient tables, cached by size.
pub(crate) struct Channels<'m> {
    mode: &'m Mode,
    agg: Vec<f64>,
    frag: Vec<f64>,
}

impl<'m> Channels<'m> {
    pub(crate) fn new(mode: &'m Mode) -> Self {
        Self { mode, agg: Vec::new(), frag: Vec::new() }
    }

    fn fill(&mut self, size: usize) {
        let start = self.agg.len();
        if size < start {
            return;
        }
        let end = (size + 1).next_power_of_two().max(16);
        for i in start..end {
            let (a, b) = match self.mode {
                Mode::Raw(c) => (c.a(i), c.b(i)),
                Mode::Rescaled(f) | Mode::FrozenBath { family: f, .. } => (f.a_eps(i), f.b_eps(i) / f.eps),
            };
            self.agg.push(if i >= 2 { a } else { 0.0 });
            self.frag.push(if i >= 3 { b } else { 0.0 });
        }
    }

    /// Per-cluster aggregation coefficient without the monomer factor.
    #[inline]
    pub(crate) fn agg_coef(&mut self, size: usize) -> f64 {
        self.fill(size);
        self.agg[size]
    }

    #[inline]
    pub(crate) fn frag_coef(&mut self, size: usize) -> f64 {
        self.fill(size);
        self.frag[size]
    }

    /// Factor multiplying `Σ agg_coef(i) k_i`.
    #[inline]
    pub(crate) fn monomer_factor(&self, n1: u64) -> f64 {
        match self.mode {
            Mode::Raw(_) => n1 as f64,
            Mode::Rescaled(f) => f.eps * n1 as f64,
            Mode::FrozenBath { family, c } => c / family.eps,
        }
    }

    #[inline]
    pub(crate) fn nucleation(&self, n1: u64) -> f64 {
        let pairs = |n1: u64| n1 as f64 * n1.saturating_sub(1) as f64;
        match self.mode {
            Mode::Raw(c) => c.a1 * pairs(n1),
            Mode::Rescaled(f) => f.alpha_eps * f.eps.powi(3) * pairs(n1),
            Mode::FrozenBath { family: f, c } => f.alpha_eps * c * (c - f.eps * f.eps).max(0.0) / f.eps,
        }
    }

    #[inline]
    pub(crate) fn denucleation(&self, k2: u64) -> f64 {
        let b2 = match self.mode {
            Mode::Raw(c) => c.b2,
            Mode::Rescaled(f) | Mode::FrozenBath { family: f, .. } => f.beta_eps,
        };
        b2 * k2 as f64
    }

    pub(crate) fn frozen(&self) -> bool {
        matches!(self.mode, Mode::FrozenBath { .. })
    }

    /// Builds the full propensity table by direct evaluation.
    pub(crate) fn full(&mut self, state: &ChainState) -> Result<Propensities> {
        let nucleation = self.nucleation(state.n1());
        let denucleation = self.denucleation(state.count(2));
        let mf = self.monomer_factor(state.n1());
        let mut aggregation = Vec::new();
        let mut fragmentation = Vec::new();
        for (i, k) in state.clusters() {
            let a = self.agg_coef(i) * mf * k as f64;
            aggregation.push((i, a));
            if i >= 3 {
                fragmentation.push((i, self.frag_coef(i) * k as f64));
            }
        }
        let aggregation_total = aggregation.iter().map(|(_, r)| r).sum();
        let fragmentation_total = fragmentation.iter().map(|(_, r)| r).sum();
        let p = Propensities {
            nucleation,
            denucleation,
            aggregation_total,
            fragmentation_total,
            aggregation,
            fragmentation,
        };
        check_finite("nucleation", p.nucleation)?;
        check_finite("denucleation", p.denucleation)?;
        check_finite("aggregation", p.aggregation_total)?;
        check_finite("fragmentation", p.fragmentation_total)?;
        Ok(p)
    }
}

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::NonFinite { what, value })
    }
}

//! Size measures, test functions and the weak-form bookkeeping shared by the
//! particle and continuum descriptions.

use serde::Serialize;

use crate::ssa::EmpiricalMeasure;

/// A nonnegative measure on cluster sizes together with the free-particle
/// concentration it is coupled to.
pub trait SizeMeasure {
    /// `⟨μ, g⟩`
    fn pair(&self, g: &dyn Fn(f64) -> f64) -> f64;
    fn free_concentration(&self) -> f64;
}

impl SizeMeasure for EmpiricalMeasure {
    fn pair(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        self.atoms().map(|(x, w)| w * g(x)).sum()
    }

    fn free_concentration(&self) -> f64 {
        self.u()
    }
}

/// Finitely many weighted atoms, e.g. an ensemble average of empirical
/// measures.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AtomicMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub u: f64,
}

impl AtomicMeasure {
    /// Average of empirical measures sharing the same `ε`, accumulated on the
    /// integer counts and scaled once.
    pub fn ensemble_mean<'a>(measures: impl IntoIterator<Item = &'a EmpiricalMeasure>) -> Self {
        let mut counts: Vec<u64> = Vec::new();
        let mut n1: u64 = 0;
        let mut n = 0usize;
        let mut eps = 0.0;
        for mu in measures {
            eps = mu.eps;
            n += 1;
            n1 += mu.n1;
            for &(i, k) in &mu.counts {
                if i >= counts.len() {
                    counts.resize(i + 1, 0);
                }
                counts[i] += k;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let scale = eps / n as f64;
        let atoms = counts
            .iter()
            .enumerate()
            .filter(|(_, k)| **k > 0)
            .map(|(i, k)| (eps * i as f64, scale * *k as f64))
            .collect();
        Self { atoms, u: eps * eps * n1 as f64 / n as f64 }
    }
}

impl SizeMeasure for AtomicMeasure {
    fn pair(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * g(x)).sum()
    }

    fn free_concentration(&self) -> f64 {
        self.u
    }
}

/// Test functions with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    One,
    /// `(1 - s²)³` with `s = (x - center) / width`, zero for `|s| >= 1`.
    Bump {
        center: f64,
        width: f64,
    },
    /// `x` times a bump.
    XBump {
        center: f64,
        width: f64,
    },
    /// Equal to 1 below `start`, 0 above `end`, cubic smoothstep between.
    Cutoff {
        start: f64,
        end: f64,
    },
    /// 0 below `start`, 1 above `end`, linear between.
    Ramp {
        start: f64,
        end: f64,
    },
}

fn bump(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let w = 1.0 - s * s;
    (w * w * w, -6.0 * s * w * w)
}

impl TestFunction {
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    /// `(φ(x), φ'(x))`
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match *self {
            TestFunction::One => (1.0, 0.0),
            TestFunction::Bump { center, width } => {
                let (v, d) = bump((x - center) / width);
                (v, d / width)
            }
            TestFunction::XBump { center, width } => {
                let (v, d) = bump((x - center) / width);
                (x * v, v + x * d / width)
            }
            TestFunction::Cutoff { start, end } => {
                if x <= start {
                    (1.0, 0.0)
                } else if x >= end {
                    (0.0, 0.0)
                } else {
                    let len = end - start;
                    let s = (x - start) / len;
                    (1.0 - s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s) / len)
                }
            }
            TestFunction::Ramp { start, end } => {
                if x <= start {
                    (0.0, 0.0)
                } else if x >= end {
                    (1.0, 0.0)
                } else {
                    ((x - start) / (end - start), 1.0 / (end - start))
                }
            }
        }
    }

    /// Upper bound on `‖φ‖∞ + ‖φ'‖∞` for the shapes used in dictionaries.
    pub fn lipschitz_norm(&self) -> f64 {
        // max_s 6 |s| (1 - s²)² is attained at s = 1/√5
        const BUMP_SLOPE: f64 = 6.0 * 0.447_213_595_499_958 * 0.64;
        match *self {
            TestFunction::One => 1.0,
            TestFunction::Bump { width, .. } => 1.0 + BUMP_SLOPE / width,
            TestFunction::Cutoff { start, end } => 1.0 + 1.5 / (end - start),
            TestFunction::Ramp { start, end } => 1.0 + 1.0 / (end - start),
            TestFunction::XBump { center, width } => {
                let x_hi = center + width;
                x_hi + 1.0 + x_hi * BUMP_SLOPE / width
            }
        }
    }
}

/// A dictionary entry normalised so that `‖φ‖∞ + ‖φ'‖∞ <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalisedTest {
    pub shape: TestFunction,
    pub scale: f64,
}

impl NormalisedTest {
    pub fn new(shape: TestFunction) -> Self {
        Self { shape, scale: 1.0 / shape.lipschitz_norm() }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.scale * self.shape.value(x)
    }
}

/// The 64-function dictionary on `[0, x_hi]`: 32 bumps (4 widths, 8 centres)
/// and 32 clipped ramps (4 lengths, 8 starts).
pub fn flat_dictionary(x_hi: f64) -> Vec<NormalisedTest> {
    let mut out = Vec::with_capacity(64);
    for w in 1..=4 {
        let width = x_hi * w as f64 / 16.0;
        for c in 0..8 {
            let center = x_hi * (c as f64 + 0.5) / 8.0;
            out.push(NormalisedTest::new(TestFunction::Bump { center, width }));
        }
    }
    for l in 1..=4 {
        let len = x_hi * l as f64 / 8.0;
        for s in 0..8 {
            let start = x_hi * s as f64 / 8.0;
            out.push(NormalisedTest::new(TestFunction::Ramp { start, end: start + len }));
        }
    }
    out
}

/// Test functions for the weak-form residual on `[0, x_hi]`.
pub fn weak_form_family(x_hi: f64) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::One, TestFunction::Cutoff { start: 0.25 * x_hi, end: 0.75 * x_hi }];
    for c in [0.125, 0.25, 0.5] {
        out.push(TestFunction::Bump { center: c * x_hi, width: 0.125 * x_hi });
    }
    out.push(TestFunction::Bump { center: 0.0, width: 0.25 * x_hi });
    out.push(TestFunction::XBump { center: 0.25 * x_hi, width: 0.25 * x_hi });
    out
}

/// Terms of `⟨μ_T,φ⟩ - ⟨μ_0,φ⟩ = ∫∫ φ' v dμ ds + φ(0) ∫ influx ds` with
/// trapezoid time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakResidual {
    pub change: f64,
    pub transport: f64,
    pub source: f64,
    pub residual: f64,
}

/// Evaluates the weak form along `path = [(t, μ_t)]`. `velocity(u, x)` is the
/// transport speed and `influx(u)` the boundary source.
pub fn weak_form_residual<M: SizeMeasure>(
    path: &[(f64, M)],
    velocity: impl Fn(f64, f64) -> f64,
    influx: impl Fn(f64) -> f64,
    tests: &[TestFunction],
) -> Vec<WeakResidual> {
    tests
        .iter()
        .map(|phi| {
            let Some(((_, first), (_, last))) = path.first().zip(path.last()) else {
                return WeakResidual { change: 0.0, transport: 0.0, source: 0.0, residual: 0.0 };
            };
            let change = last.pair(&|x| phi.value(x)) - first.pair(&|x| phi.value(x));
            let integrand = |mu: &M| {
                let u = mu.free_concentration();
                (mu.pair(&|x| phi.derivative(x) * velocity(u, x)), influx(u))
            };
            let mut transport = 0.0;
            let mut source = 0.0;
            let mut prev = integrand(&path[0].1);
            for w in path.windows(2) {
                let dt = w[1].0 - w[0].0;
                let next = integrand(&w[1].1);
                transport += 0.5 * dt * (prev.0 + next.0);
                source += 0.5 * dt * (prev.1 + next.1);
                prev = next;
            }
            source *= phi.value(0.0);
            WeakResidual { change, transport, source, residual: (change - transport - source).abs() }
        })
        .collect()
}

//! Exact event-driven simulation loop.
//!
//! Aggregation and fragmentation partial rates live in two Fenwick trees
//! indexed by cluster size, so each event costs O(log S) for selection and
//! update. The aggregation tree stores `a_i k_i` without the monomer factor,
//! which changes on every event and is applied to the tree total instead.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

use super::fenwick::{ulps_apart, Fenwick};
use super::propensity::{check_finite, Channels, Mode};
use super::state::{snapshot_measure, ChainState, EmpiricalMeasure, Event};

/// Trees are rebuilt from the raw weights this often to shed round-off.
const REBUILD_PERIOD: u64 = 1 << 16;

/// Condition observed along a trajectory; its first hitting time is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Watch {
    /// At least `count` clusters of size `>= size` exist.
    ClustersAtLeast { size: usize, count: u64 },
    /// Fewer than the given number of free monomers.
    MonomersBelow(u64),
}

#[derive(Clone)]
pub enum StopRule {
    EndTime(f64),
    /// At least `count` clusters of size `>= size`.
    SizeReached {
        size: usize,
        count: u64,
    },
    /// Every configured watch has fired.
    AllWatches,
    Custom(Arc<dyn Fn(&ChainState) -> bool + Send + Sync>),
}

impl fmt::Debug for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::EndTime(t) => write!(f, "EndTime({t})"),
            StopRule::SizeReached { size, count } => write!(f, "SizeReached({size}, {count})"),
            StopRule::AllWatches => write!(f, "AllWatches"),
            StopRule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassCheck {
    Off,
    /// O(1) check of the maintained totals after every event.
    Balance,
    /// Recomputes `n1 + Σ i k_i` from the counts after every event.
    Full,
}

/// Time integrals of `p^ε_{n,s} = ε k_{n+2}(s)` over a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationAccumulator {
    pub eps: f64,
    pub t0: f64,
    pub t1: f64,
    pub sums: Vec<f64>,
    /// Same integrals restricted to the first and second half of the window.
    pub halves: [Vec<f64>; 2],
}

impl OccupationAccumulator {
    pub fn new(eps: f64, t0: f64, t1: f64, n_max: usize) -> Result<Self> {
        if !(t1 >= t0) {
            return Err(invalid(format!("occupation window [{t0}, {t1}] is empty or reversed")));
        }
        Ok(Self { eps, t0, t1, sums: vec![0.0; n_max + 1], halves: [vec![0.0; n_max + 1], vec![0.0; n_max + 1]] })
    }

    pub fn n_max(&self) -> usize {
        self.sums.len() - 1
    }

    /// Adds `dwell * ε k_{n+2}` for every `n`, ignoring the window.
    pub fn accumulate(&mut self, state: &ChainState, dwell: f64) {
        debug_assert!(dwell >= 0.0);
        for (n, s) in self.sums.iter_mut().enumerate() {
            *s += dwell * self.eps * state.count(n + 2) as f64;
        }
    }

    /// Adds the part of `[from, to)` inside the window, split by halves.
    pub fn accumulate_span(&mut self, state: &ChainState, from: f64, to: f64) {
        let mid = 0.5 * (self.t0 + self.t1);
        for (h, (lo, hi)) in [(self.t0, mid), (mid, self.t1)].into_iter().enumerate() {
            let dwell = to.min(hi) - from.max(lo);
            if dwell > 0.0 {
                for (n, s) in self.halves[h].iter_mut().enumerate() {
                    *s += dwell * self.eps * state.count(n + 2) as f64;
                }
            }
        }
        let dwell = to.min(self.t1) - from.max(self.t0);
        if dwell > 0.0 {
            self.accumulate(state, dwell);
        }
    }

    /// Window averages `sums / (t1 - t0)`.
    pub fn averages(&self) -> Vec<f64> {
        let w = self.t1 - self.t0;
        self.sums.iter().map(|s| s / w).collect()
    }

    pub fn half_averages(&self) -> [Vec<f64>; 2] {
        let w = 0.5 * (self.t1 - self.t0);
        [0, 1].map(|h| self.halves[h].iter().map(|s| s / w).collect())
    }
}

/// Accumulates time with `n1 >= n1_min` until watch `until_watch` fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub n1_min: u64,
    pub until_watch: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Sorted times at which `(t, n1, clusters, cluster mass)` is sampled.
    pub output_times: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    /// `(t0, t1, n_max)`
    pub occupation: Option<(f64, f64, usize)>,
    pub watches: Vec<Watch>,
    pub band: Option<Band>,
    /// Wall of simulated time after which the run is censored.
    pub time_limit: Option<f64>,
    pub event_budget: u64,
    pub mass_check: MassCheck,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            output_times: Vec::new(),
            snapshot_times: Vec::new(),
            occupation: None,
            watches: Vec::new(),
            band: None,
            time_limit: None,
            event_budget: 1_000_000_000,
            mass_check: if cfg!(debug_assertions) { MassCheck::Balance } else { MassCheck::Off },
        }
    }
}

/// Integer sample of the chain at an output time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sample {
    pub n1: u64,
    pub n_clusters: u64,
    pub cluster_mass: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// The end time was reached.
    Completed,
    /// The stop rule fired.
    Stopped,
    /// Total propensity vanished before any other stop.
    Absorbed,
    /// The time limit was hit first.
    Censored,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub eps: f64,
    pub output_times: Vec<f64>,
    pub samples: Vec<Sample>,
    pub snapshots: Vec<(f64, EmpiricalMeasure)>,
    pub occupation: Option<OccupationAccumulator>,
    pub watch_hits: Vec<Option<f64>>,
    pub band_time: f64,
    pub band_window: f64,
    pub outcome: Outcome,
    pub events: u64,
    pub mass_checks: u64,
    pub mass_failures: u64,
    pub final_state: ChainState,
}

impl TrajectoryRecord {
    /// `u = ε² n1` at each output time.
    pub fn u_series(&self) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        self.samples.iter().map(|s| e2 * s.n1 as f64).collect()
    }
}

struct Engine<'m> {
    ch: Channels<'m>,
    agg: Fenwick,
    frag: Fenwick,
}

impl<'m> Engine<'m> {
    fn new(mode: &'m Mode, state: &ChainState) -> Self {
        let cap = state.size_bound() + 2;
        let mut e =
            Self { ch: Channels::new(mode), agg: Fenwick::with_capacity(cap), frag: Fenwick::with_capacity(cap) };
        for (i, _) in state.clusters() {
            e.refresh(state, i);
        }
        e.agg.rebuild();
        e.frag.rebuild();
        e
    }

    #[inline]
    fn refresh(&mut self, state: &ChainState, size: usize) {
        let k = state.count(size) as f64;
        let a = self.ch.agg_coef(size) * k;
        self.agg.set(size, a);
        if size >= 3 {
            let b = self.ch.frag_coef(size) * k;
            self.frag.set(size, b);
        }
    }

    #[inline]
    fn rates(&self, state: &ChainState) -> [f64; 4] {
        [
            self.ch.nucleation(state.n1()),
            self.ch.denucleation(state.count(2)),
            self.ch.monomer_factor(state.n1()) * self.agg.total(),
            self.frag.total(),
        ]
    }

    fn select(&self, state: &ChainState, rates: &[f64; 4], mut r: f64) -> Option<Event> {
        if r < rates[0] {
            return Some(Event::Nucleation);
        }
        r -= rates[0];
        if r < rates[1] {
            return Some(Event::Denucleation);
        }
        r -= rates[1];
        if r < rates[2] || rates[3] <= 0.0 {
            let mf = self.ch.monomer_factor(state.n1());
            return self.agg.find(r / mf).map(Event::Aggregation).or_else(|| self.fallback(rates));
        }
        r -= rates[2];
        self.frag.find(r).map(Event::Fragmentation).or_else(|| self.fallback(rates))
    }

    /// Round-off landed on an empty category: take any positive channel.
    fn fallback(&self, rates: &[f64; 4]) -> Option<Event> {
        if rates[0] > 0.0 {
            Some(Event::Nucleation)
        } else if rates[1] > 0.0 {
            Some(Event::Denucleation)
        } else if let Some(i) = self.agg.find(0.0).filter(|_| rates[2] > 0.0) {
            Some(Event::Aggregation(i))
        } else {
            self.frag.find(0.0).map(Event::Fragmentation)
        }
    }

    fn apply(&mut self, state: &mut ChainState, ev: Event) -> Result<()> {
        if self.ch.frozen() {
            state.apply_with_reservoir(ev)?;
        } else {
            state.apply(ev)?;
        }
        match ev {
            Event::Nucleation | Event::Denucleation => self.refresh(state, 2),
            Event::Aggregation(i) => {
                self.refresh(state, i);
                self.refresh(state, i + 1);
            }
            Event::Fragmentation(i) => {
                self.refresh(state, i);
                self.refresh(state, i - 1);
            }
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        self.agg.rebuild();
        self.frag.rebuild();
    }

    /// Largest ulp distance between a tree total and its compensated sum.
    fn consistency_ulps(&self) -> u64 {
        ulps_apart(self.agg.total(), self.agg.exact_total()).max(ulps_apart(self.frag.total(), self.frag.exact_total()))
    }
}

/// Per-watch bookkeeping of cluster counts above a size.
fn watch_delta(size: usize, ev: Event) -> i64 {
    match ev {
        Event::Nucleation if size <= 2 => 1,
        Event::Denucleation if size <= 2 => -1,
        Event::Aggregation(i) if i + 1 == size => 1,
        Event::Fragmentation(i) if i == size => -1,
        _ => 0,
    }
}

struct Tracker {
    watches: Vec<Watch>,
    counts: Vec<u64>,
    hits: Vec<Option<f64>>,
    stop_size: Option<(usize, u64, u64)>,
}

impl Tracker {
    fn new(watches: &[Watch], stop: &StopRule, state: &ChainState) -> Self {
        let counts = watches
            .iter()
            .map(|w| match w {
                Watch::ClustersAtLeast { size, .. } => state.clusters_at_least(*size),
                Watch::MonomersBelow(_) => 0,
            })
            .collect();
        let stop_size = match stop {
            StopRule::SizeReached { size, count } => Some((*size, *count, state.clusters_at_least(*size))),
            _ => None,
        };
        let mut t = Self { watches: watches.to_vec(), counts, hits: vec![None; watches.len()], stop_size };
        t.check(state);
        t
    }

    fn update(&mut self, ev: Event, state: &ChainState) {
        for (w, c) in self.watches.iter().zip(self.counts.iter_mut()) {
            if let Watch::ClustersAtLeast { size, .. } = w {
                *c = c.saturating_add_signed(watch_delta(*size, ev));
            }
        }
        if let Some((size, _, c)) = &mut self.stop_size {
            *c = c.saturating_add_signed(watch_delta(*size, ev));
        }
        self.check(state);
    }

    fn check(&mut self, state: &ChainState) {
        for ((w, c), hit) in self.watches.iter().zip(&self.counts).zip(self.hits.iter_mut()) {
            if hit.is_some() {
                continue;
            }
            let fired = match w {
                Watch::ClustersAtLeast { count, .. } => c >= count,
                Watch::MonomersBelow(n) => state.n1() < *n,
            };
            if fired {
                *hit = Some(state.t);
            }
        }
    }

    fn should_stop(&self, stop: &StopRule, state: &ChainState) -> bool {
        match stop {
            StopRule::EndTime(_) => false,
            StopRule::SizeReached { .. } => self.stop_size.is_some_and(|(_, want, have)| have >= want),
            StopRule::AllWatches => !self.hits.is_empty() && self.hits.iter().all(Option::is_some),
            StopRule::Custom(f) => f(state),
        }
    }
}

/// Runs one exact SSA trajectory from `init` until the stop rule fires, the
/// chain is absorbed, or the time limit censors it.
pub fn run_trajectory<R: Rng + ?Sized>(
    init: ChainState,
    mode: &Mode,
    stop: &StopRule,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    mode.validate()?;
    if !opts.output_times.windows(2).all(|w| w[0] <= w[1]) || !opts.snapshot_times.windows(2).all(|w| w[0] <= w[1]) {
        return Err(invalid("output and snapshot times must be sorted"));
    }
    let eps = mode.eps();
    let mut state = init;
    let mut engine = Engine::new(mode, &state);
    let mut tracker = Tracker::new(&opts.watches, stop, &state);
    let mut occupation = match opts.occupation {
        Some((t0, t1, n_max)) => Some(OccupationAccumulator::new(eps, t0, t1, n_max)?),
        None => None,
    };
    let end_time = match stop {
        StopRule::EndTime(t) => Some(*t),
        _ => None,
    };
    let horizon = match (end_time, opts.time_limit) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b).unwrap_or(f64::INFINITY),
    };

    let mut samples = Vec::with_capacity(opts.output_times.len());
    let mut snapshots = Vec::with_capacity(opts.snapshot_times.len());
    let mut band_time = 0.0;
    let mut events = 0u64;
    let mut mass_checks = 0u64;
    let mut mass_failures = 0u64;

    // Samples and integrals over [t, until) where the state is constant.
    let mut dwell = |state: &ChainState,
                     until: f64,
                     inclusive: bool,
                     samples: &mut Vec<Sample>,
                     snapshots: &mut Vec<(f64, EmpiricalMeasure)>,
                     occupation: &mut Option<OccupationAccumulator>,
                     hits: &[Option<f64>]| {
        let before = |t: f64| if inclusive { t <= until } else { t < until };
        while samples.len() < opts.output_times.len() && before(opts.output_times[samples.len()]) {
            samples.push(Sample { n1: state.n1(), n_clusters: state.n_clusters(), cluster_mass: state.cluster_mass() });
        }
        while snapshots.len() < opts.snapshot_times.len() && before(opts.snapshot_times[snapshots.len()]) {
            snapshots.push((opts.snapshot_times[snapshots.len()], snapshot_measure(state, eps)));
        }
        if let Some(acc) = occupation.as_mut() {
            acc.accumulate_span(state, state.t, until);
        }
        if let Some(band) = opts.band {
            let open = hits.get(band.until_watch).is_some_and(Option::is_none);
            if open && state.n1() >= band.n1_min {
                band_time += until - state.t;
            }
        }
    };

    let outcome = if tracker.should_stop(stop, &state) {
        Outcome::Stopped
    } else {
        loop {
            let rates = engine.rates(&state);
            let total: f64 = rates.iter().sum();
            check_finite("total propensity", total)?;
            let t_next = if total > 0.0 {
                let u: f64 = rng.random();
                state.t + -(1.0 - u).ln() / total
            } else {
                f64::INFINITY
            };
            if total <= 0.0 || t_next > horizon {
                if horizon.is_finite() {
                    dwell(&state, horizon, true, &mut samples, &mut snapshots, &mut occupation, &tracker.hits);
                    state.t = horizon;
                }
                break if end_time == Some(horizon) {
                    Outcome::Completed
                } else if total > 0.0 {
                    Outcome::Censored
                } else {
                    Outcome::Absorbed
                };
            }
            dwell(&state, t_next, false, &mut samples, &mut snapshots, &mut occupation, &tracker.hits);

            let r = rng.random::<f64>() * total;
            let ev =
                engine.select(&state, &rates, r).ok_or(Error::NonFinite { what: "event selection", value: total })?;
            state.t = t_next;
            engine.apply(&mut state, ev)?;
            events += 1;

            match opts.mass_check {
                MassCheck::Off => {}
                MassCheck::Balance | MassCheck::Full => {
                    mass_checks += 1;
                    let ok = if opts.mass_check == MassCheck::Full {
                        state.mass_identity_holds()
                    } else {
                        state.mass_balance_holds()
                    };
                    if !ok {
                        mass_failures += 1;
                        debug_assert!(ok, "mass identity broken after {ev:?}");
                    }
                }
            }
            if events % REBUILD_PERIOD == 0 {
                engine.rebuild();
            }

            tracker.update(ev, &state);
            if tracker.should_stop(stop, &state) {
                break Outcome::Stopped;
            }
            if events >= opts.event_budget {
                return Err(Error::Stall { budget: opts.event_budget, t: state.t });
            }
        }
    };

    // Sample points past the end of a stopped run are left unrecorded.
    let band_window = match opts.band {
        Some(b) => tracker.hits.get(b.until_watch).copied().flatten().unwrap_or(state.t),
        None => 0.0,
    };
    Ok(TrajectoryRecord {
        eps,
        output_times: opts.output_times[..samples.len()].to_vec(),
        samples,
        snapshots,
        occupation,
        watch_hits: tracker.hits,
        band_time,
        band_window,
        outcome,
        events,
        mass_checks,
        mass_failures,
        final_state: state,
    })
}

/// Checks that the incremental tree totals agree with freshly summed
/// partials; returns the worst ulp distance after a rebuild.
pub fn propensity_consistency_ulps(mode: &Mode, state: &ChainState) -> u64 {
    let mut e = Engine::new(mode, state);
    e.rebuild();
    e.consistency_ulps()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{EpsilonFamily, RateFn, RateModel};
    use crate::rng::stream_rng;
    use crate::ssa::propensity::RawCoefficients;

    fn fig1_family(eps: f64, alpha: f64) -> EpsilonFamily {
        let m = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), alpha, 1.0).unwrap();
        EpsilonFamily::new(m, eps).unwrap()
    }

    #[test]
    fn no_nucleation_means_no_events() {
        let mode = Mode::Rescaled(fig1_family(0.1, 0.0));
        let opts = RunOptions { output_times: vec![0.0, 0.5, 1.0], ..Default::default() };
        let rec =
            run_trajectory(ChainState::pure_monomer(300), &mode, &StopRule::EndTime(1.0), &opts, &mut stream_rng(1, 0))
                .unwrap();
        assert_eq!(rec.events, 0);
        assert_eq!(rec.outcome, Outcome::Completed);
        assert_eq!(rec.samples.len(), 3);
        assert!(rec.samples.iter().all(|s| s.n1 == 300));
        assert_eq!(rec.final_state.t, 1.0);
    }

    #[test]
    fn absorbed_without_horizon() {
        let mode = Mode::Rescaled(fig1_family(0.1, 0.0));
        let opts = RunOptions { watches: vec![Watch::ClustersAtLeast { size: 10, count: 1 }], ..Default::default() };
        let rec =
            run_trajectory(ChainState::pure_monomer(300), &mode, &StopRule::AllWatches, &opts, &mut stream_rng(1, 0))
                .unwrap();
        assert_eq!(rec.outcome, Outcome::Absorbed);
        assert_eq!(rec.watch_hits, vec![None]);
    }

    #[test]
    fn first_cluster_of_size_two_is_first_nucleation() {
        let coeffs = RawCoefficients::new(1e-4, 1e-4, |_| 0.01, |_| 0.1);
        let mode = Mode::Raw(coeffs);
        let opts = RunOptions { mass_check: MassCheck::Full, ..Default::default() };
        let rec = run_trajectory(
            ChainState::pure_monomer(100),
            &mode,
            &StopRule::SizeReached { size: 2, count: 1 },
            &opts,
            &mut stream_rng(9, 3),
        )
        .unwrap();
        assert_eq!(rec.events, 1);
        assert_eq!(rec.final_state.count(2), 1);
        assert!(rec.final_state.t > 0.0);
    }

    #[test]
    fn occupation_window_examples() {
        let s = ChainState::from_table(0, &[(2, 1)]).unwrap();
        let mut acc = OccupationAccumulator::new(0.1, 0.0, 2.0, 4).unwrap();
        acc.accumulate_span(&s, -1.0, 3.0);
        assert!((acc.sums[0] - 0.2).abs() < 1e-15);
        assert_eq!(acc.sums[1], 0.0);
        let [h0, h1] = acc.half_averages();
        assert!((h0[0] - 0.1).abs() < 1e-15 && (h1[0] - 0.1).abs() < 1e-15);

        let empty = ChainState::pure_monomer(10);
        let mut acc = OccupationAccumulator::new(0.1, 0.0, 2.0, 4).unwrap();
        acc.accumulate(&empty, 2.0);
        assert_eq!(acc.sums[0], 0.0);
    }

    #[test]
    fn mass_is_conserved_on_every_event() {
        let mode = Mode::Rescaled(fig1_family(0.05, 1.0));
        let opts = RunOptions { mass_check: MassCheck::Full, output_times: vec![0.25, 0.5], ..Default::default() };
        let rec = run_trajectory(
            ChainState::pure_monomer(1200),
            &mode,
            &StopRule::EndTime(0.5),
            &opts,
            &mut stream_rng(3, 1),
        )
        .unwrap();
        assert!(rec.events > 1000);
        assert_eq!(rec.mass_checks, rec.events);
        assert_eq!(rec.mass_failures, 0);
        assert!(rec.final_state.mass_identity_holds());
    }

    #[test]
    fn identical_streams_reproduce_events() {
        let mode = Mode::Rescaled(fig1_family(0.05, 1.0));
        let opts = RunOptions { output_times: (0..20).map(|k| k as f64 * 0.05).collect(), ..Default::default() };
        let run = |idx| {
            run_trajectory(
                ChainState::pure_monomer(1200),
                &mode,
                &StopRule::EndTime(1.0),
                &opts,
                &mut stream_rng(11, idx),
            )
            .unwrap()
        };
        let (a, b, c) = (run(0), run(0), run(1));
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.events, b.events);
        assert_eq!(a.final_state, b.final_state);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn stall_budget() {
        let mode = Mode::Rescaled(fig1_family(0.05, 1.0));
        let opts = RunOptions { event_budget: 10, ..Default::default() };
        let err = run_trajectory(
            ChainState::pure_monomer(1200),
            &mode,
            &StopRule::EndTime(1.0),
            &opts,
            &mut stream_rng(3, 1),
        );
        assert!(matches!(err, Err(Error::Stall { budget: 10, .. })));
    }

    #[test]
    fn tree_totals_match_partials() {
        let mode = Mode::Rescaled(fig1_family(0.02, 1.0));
        let table: Vec<(usize, u64)> = (2..400).map(|i| (i, (i as u64 * 7919) % 13)).collect();
        let s = ChainState::from_table(5000, &table).unwrap();
        assert!(propensity_consistency_ulps(&mode, &s) <= 4);
        let p = mode.propensities(&s).unwrap();
        let direct: f64 = p.aggregation.iter().map(|x| x.1).sum();
        assert!((direct - p.aggregation_total).abs() <= 4.0 * f64::EPSILON * direct);
    }
}

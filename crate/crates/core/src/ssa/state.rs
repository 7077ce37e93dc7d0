use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Integer configuration of the Becker-Döring chain.
///
/// `counts[i]` is the number of clusters of size `i` (sizes 0 and 1 are
/// always zero). Zero entries are not reported by [`ChainState::clusters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    n1: u64,
    counts: Vec<u64>,
    mass: u64,
    n_clusters: u64,
    cluster_mass: u64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    Nucleation,
    Denucleation,
    /// Cluster of the given size absorbs a monomer.
    Aggregation(usize),
    /// Cluster of the given size (>= 3) releases a monomer.
    Fragmentation(usize),
}

impl ChainState {
    pub fn pure_monomer(mass: u64) -> Self {
        Self { n1: mass, counts: vec![0; 3], mass, n_clusters: 0, cluster_mass: 0, t: 0.0 }
    }

    /// Free monomers plus a list of `(size, count)` pairs with sizes >= 2.
    pub fn from_table(n1: u64, table: &[(usize, u64)]) -> Result<Self> {
        let max = table.iter().map(|(i, _)| *i).max().unwrap_or(2);
        let mut counts = vec![0u64; max.max(2) + 1];
        for &(i, k) in table {
            if i < 2 {
                return Err(invalid(format!("cluster size {i} < 2 in initial table")));
            }
            counts[i] += k;
        }
        let n_clusters = counts.iter().sum();
        let cluster_mass = counts.iter().enumerate().map(|(i, k)| i as u64 * k).sum::<u64>();
        Ok(Self { n1, counts, mass: n1 + cluster_mass, n_clusters, cluster_mass, t: 0.0 })
    }

    #[inline]
    pub fn n1(&self) -> u64 {
        self.n1
    }

    #[inline]
    pub fn count(&self, size: usize) -> u64 {
        self.counts.get(size).copied().unwrap_or(0)
    }

    /// Total mass `M` (constant except in reservoir mode).
    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn n_clusters(&self) -> u64 {
        self.n_clusters
    }

    /// `Σ i k_i`
    pub fn cluster_mass(&self) -> u64 {
        self.cluster_mass
    }

    /// Largest index the count vector can hold.
    pub fn size_bound(&self) -> usize {
        self.counts.len() - 1
    }

    /// Occupied `(size, count)` pairs in increasing size.
    pub fn clusters(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().enumerate().filter(|(_, k)| **k > 0).map(|(i, k)| (i, *k))
    }

    /// Number of clusters with size `>= size`.
    pub fn clusters_at_least(&self, size: usize) -> u64 {
        self.counts.iter().skip(size).sum()
    }

    /// Recomputes `n1 + Σ i k_i` from the counts and compares with `M`.
    pub fn mass_identity_holds(&self) -> bool {
        let s: u64 = self.counts.iter().enumerate().map(|(i, k)| i as u64 * k).sum();
        s == self.cluster_mass && self.n1 + s == self.mass
    }

    /// Cheap check of the incrementally maintained totals.
    #[inline]
    pub fn mass_balance_holds(&self) -> bool {
        self.n1 + self.cluster_mass == self.mass
    }

    fn bump(&mut self, size: usize) {
        if size >= self.counts.len() {
            self.counts.resize((size + 1).next_power_of_two(), 0);
        }
        self.counts[size] += 1;
    }

    fn drop_one(&mut self, size: usize, event: &'static str) -> Result<()> {
        match self.counts.get_mut(size) {
            Some(k) if *k > 0 => {
                *k -= 1;
                Ok(())
            }
            _ => Err(Error::NegativeCount { event, size }),
        }
    }

    fn take_monomers(&mut self, n: u64, event: &'static str) -> Result<()> {
        if self.n1 < n {
            return Err(Error::NegativeCount { event, size: 1 });
        }
        self.n1 -= n;
        Ok(())
    }

    /// Applies one jump of the chain. Mass is preserved exactly.
    pub fn apply(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Nucleation => {
                self.take_monomers(2, "nucleation")?;
                self.bump(2);
                self.n_clusters += 1;
                self.cluster_mass += 2;
            }
            Event::Denucleation => {
                self.drop_one(2, "denucleation")?;
                self.n1 += 2;
                self.n_clusters -= 1;
                self.cluster_mass -= 2;
            }
            Event::Aggregation(i) => {
                if i < 2 {
                    return Err(Error::NegativeCount { event: "aggregation", size: i });
                }
                self.take_monomers(1, "aggregation")?;
                if let Err(e) = self.drop_one(i, "aggregation") {
                    self.n1 += 1;
                    return Err(e);
                }
                self.bump(i + 1);
                self.cluster_mass += 1;
            }
            Event::Fragmentation(i) => {
                if i < 3 {
                    return Err(Error::NegativeCount { event: "fragmentation", size: i });
                }
                self.drop_one(i, "fragmentation")?;
                self.bump(i - 1);
                self.n1 += 1;
                self.cluster_mass -= 1;
            }
        }
        Ok(())
    }

    /// Applies the cluster part of a jump against a monomer reservoir: `n1`
    /// is held fixed and `M` absorbs the exchanged monomers.
    pub fn apply_with_reservoir(&mut self, event: Event) -> Result<()> {
        let n1 = self.n1;
        // The reservoir never runs dry.
        self.n1 = n1.max(2);
        let res = self.apply(event);
        self.n1 = n1;
        self.mass = self.n1 + self.cluster_mass;
        res
    }
}

/// Free-function form of [`ChainState::apply`].
pub fn apply_event(state: &ChainState, event: Event) -> Result<ChainState> {
    let mut next = state.clone();
    next.apply(event)?;
    Ok(next)
}

/// Rescaled point measure `μ^ε = Σ ε k_i δ_{εi}` with its free-particle
/// concentration `u = ε² n1`. The integer configuration is kept so that the
/// mass identity can be checked exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub eps: f64,
    pub n1: u64,
    pub mass: u64,
    pub counts: Vec<(usize, u64)>,
}

pub fn snapshot_measure(state: &ChainState, eps: f64) -> EmpiricalMeasure {
    EmpiricalMeasure { eps, n1: state.n1(), mass: state.mass(), counts: state.clusters().collect() }
}

impl EmpiricalMeasure {
    /// Atoms `(εi, ε k_i)`.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.counts.iter().map(move |&(i, k)| (self.eps * i as f64, self.eps * k as f64))
    }

    pub fn u(&self) -> f64 {
        self.eps * self.eps * self.n1 as f64
    }

    pub fn m(&self) -> f64 {
        self.eps * self.eps * self.mass as f64
    }

    /// `⟨μ, 1⟩`
    pub fn number(&self) -> f64 {
        self.eps * self.counts.iter().map(|(_, k)| *k).sum::<u64>() as f64
    }

    /// `⟨μ, Id⟩`, scaled once from the integer sum.
    pub fn first_moment(&self) -> f64 {
        self.eps * self.eps * self.counts.iter().map(|&(i, k)| i as u64 * k).sum::<u64>() as f64
    }

    /// `u + ⟨μ, Id⟩ = m`, checked on the integers.
    pub fn identity_holds(&self) -> bool {
        self.n1 + self.counts.iter().map(|&(i, k)| i as u64 * k).sum::<u64>() == self.mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_examples() {
        let s = ChainState::from_table(5, &[(2, 1)]).unwrap();
        let s = apply_event(&s, Event::Denucleation).unwrap();
        assert_eq!((s.n1(), s.count(2)), (7, 0));
        assert!(s.mass_identity_holds());

        let s = ChainState::from_table(5, &[(4, 2)]).unwrap();
        let m = s.mass();
        let s = apply_event(&s, Event::Aggregation(4)).unwrap();
        assert_eq!((s.n1(), s.count(4), s.count(5)), (4, 1, 1));
        assert_eq!(s.mass(), m);
        assert!(s.mass_identity_holds());

        let s = ChainState::from_table(3, &[(3, 1)]).unwrap();
        let s = apply_event(&s, Event::Fragmentation(3)).unwrap();
        assert_eq!((s.n1(), s.count(3), s.count(2)), (4, 0, 1));
        assert!(s.mass_identity_holds());
    }

    #[test]
    fn negative_counts_are_rejected() {
        let s = ChainState::pure_monomer(1);
        assert!(matches!(apply_event(&s, Event::Nucleation), Err(Error::NegativeCount { .. })));
        assert!(matches!(apply_event(&s, Event::Denucleation), Err(Error::NegativeCount { .. })));
        assert!(matches!(apply_event(&s, Event::Fragmentation(3)), Err(Error::NegativeCount { .. })));
        let s = ChainState::from_table(0, &[(3, 1)]).unwrap();
        let err = apply_event(&s, Event::Aggregation(3));
        assert!(matches!(err, Err(Error::NegativeCount { size: 1, .. })));
    }

    #[test]
    fn reservoir_holds_monomers_fixed() {
        let mut s = ChainState::from_table(10, &[(3, 2)]).unwrap();
        s.apply_with_reservoir(Event::Aggregation(3)).unwrap();
        s.apply_with_reservoir(Event::Nucleation).unwrap();
        assert_eq!(s.n1(), 10);
        assert_eq!(s.count(4), 1);
        assert_eq!(s.count(2), 1);
        assert!(s.mass_identity_holds());
    }

    #[test]
    fn snapshot_example() {
        let s = ChainState::from_table(50, &[(2, 3)]).unwrap();
        let mu = snapshot_measure(&s, 0.1);
        assert!((mu.u() - 0.5).abs() < 1e-15);
        let atoms: Vec<_> = mu.atoms().collect();
        assert_eq!(atoms.len(), 1);
        assert!((atoms[0].0 - 0.2).abs() < 1e-15 && (atoms[0].1 - 0.3).abs() < 1e-15);
        assert!((mu.m() - 0.56).abs() < 1e-15);
        assert!(mu.identity_holds());

        let e = snapshot_measure(&ChainState::pure_monomer(40), 0.5);
        assert_eq!(e.atoms().count(), 0);
        assert_eq!(e.u(), e.m());
    }

    proptest::proptest! {
        #[test]
        fn random_jumps_preserve_mass(seq in proptest::collection::vec((0u8..4, 2usize..12), 1..300)) {
            let mut s = ChainState::pure_monomer(200);
            for (kind, i) in seq {
                let ev = match kind {
                    0 => Event::Nucleation,
                    1 => Event::Denucleation,
                    2 => Event::Aggregation(i),
                    _ => Event::Fragmentation(i),
                };
                let before = s.clone();
                if s.apply(ev).is_err() {
                    proptest::prop_assert_eq!(&s, &before);
                }
                proptest::prop_assert!(s.mass_identity_holds());
                let mu = snapshot_measure(&s, 0.05);
                proptest::prop_assert!(mu.identity_holds());
                proptest::prop_assert!((mu.number() - 0.05 * s.n_clusters() as f64).abs() < 1e-12);
            }
        }
    }
}

//! Problem instances: scheme parameters, the desired product set, its
//! re-indexing into sub-block products, and the grouping of those products.
//!
//! Library and pair indices are 1-based throughout (`(1, 1)` is `A_1 B_1`),
//! matching the configuration files. Group indices `k` are 0-based.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldModulus;

/// A 1-based `(left, right)` library index pair.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("the desired set is empty")]
    EmptyDesiredSet,
    #[error("pair ({0},{1}) appears more than once in the desired set")]
    DuplicatePair(usize, usize),
    #[error("pair ({i},{j}) is outside [1,{l_a}] x [1,{l_b}]")]
    PairOutOfRange {
        i: usize,
        j: usize,
        l_a: usize,
        l_b: usize,
    },
    #[error("parameter {0} must be positive")]
    ZeroParameter(&'static str),
    #[error("{name}={value} does not divide alpha={alpha}")]
    PartitionDoesNotDivide {
        name: &'static str,
        value: usize,
        alpha: usize,
    },
    #[error("r={r} does not divide m*n={mn}")]
    GroupsDoNotDivide { r: usize, mn: usize },
    #[error("field size q={q} is below |S|*m*n + N = {required}")]
    FieldTooSmall { q: u64, required: u128 },
    #[error("N={workers} workers is below the recovery threshold R={threshold}")]
    TooFewWorkers { workers: usize, threshold: usize },
}

/// Parameters shared by the master and every worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeParams {
    /// Side length of every library matrix.
    pub alpha: usize,
    pub l_a: usize,
    pub l_b: usize,
    /// Row partitions of each `A_i`.
    pub m: usize,
    /// Column partitions of each `B_j`.
    pub n: usize,
    /// Number of groups.
    pub r: usize,
    /// Collusion tolerance.
    pub t: usize,
    /// Number of workers.
    pub workers: usize,
    pub q: FieldModulus,
}

impl SchemeParams {
    /// `R = |S| m n + |S| m n / r + 2T - 1`.
    pub fn recovery_threshold(&self, s_size: usize) -> usize {
        let products = s_size * self.m * self.n;
        products + products / self.r + 2 * self.t - 1
    }

    /// Group size `|S| m n / r`.
    pub fn delta(&self, s_size: usize) -> usize {
        s_size * self.m * self.n / self.r
    }

    /// Every constraint except `N >= R`. Enough to build and send queries.
    pub fn validate_structure(&self, s: &DesiredSet) -> Result<(), InstanceError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("L_A", self.l_a),
            ("L_B", self.l_b),
            ("m", self.m),
            ("n", self.n),
            ("r", self.r),
            ("T", self.t),
            ("N", self.workers),
        ] {
            if v == 0 {
                return Err(InstanceError::ZeroParameter(name));
            }
        }
        if !self.alpha.is_multiple_of(self.m) {
            return Err(InstanceError::PartitionDoesNotDivide {
                name: "m",
                value: self.m,
                alpha: self.alpha,
            });
        }
        if !self.alpha.is_multiple_of(self.n) {
            return Err(InstanceError::PartitionDoesNotDivide {
                name: "n",
                value: self.n,
                alpha: self.alpha,
            });
        }
        let mn = self.m * self.n;
        if !mn.is_multiple_of(self.r) {
            return Err(InstanceError::GroupsDoNotDivide { r: self.r, mn });
        }
        for &(i, j) in s.pairs() {
            if i > self.l_a || j > self.l_b {
                return Err(InstanceError::PairOutOfRange {
                    i,
                    j,
                    l_a: self.l_a,
                    l_b: self.l_b,
                });
            }
        }
        let required = (s.len() * mn) as u128 + self.workers as u128;
        if (self.q.get() as u128) < required {
            return Err(InstanceError::FieldTooSmall {
                q: self.q.get(),
                required,
            });
        }
        Ok(())
    }

    /// All constraints, including enough workers to reach the threshold.
    pub fn validate(&self, s: &DesiredSet) -> Result<(), InstanceError> {
        self.validate_structure(s)?;
        let threshold = self.recovery_threshold(s.len());
        if self.workers < threshold {
            return Err(InstanceError::TooFewWorkers {
                workers: self.workers,
                threshold,
            });
        }
        Ok(())
    }
}

/// Non-empty set of desired products, kept in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct DesiredSet(Vec<Pair>);

impl DesiredSet {
    pub fn new(pairs: impl IntoIterator<Item = Pair>) -> Result<Self, InstanceError> {
        let mut seen = BTreeSet::new();
        for (i, j) in pairs {
            if i == 0 || j == 0 {
                return Err(InstanceError::PairOutOfRange {
                    i,
                    j,
                    l_a: usize::MAX,
                    l_b: usize::MAX,
                });
            }
            if !seen.insert((i, j)) {
                return Err(InstanceError::DuplicatePair(i, j));
            }
        }
        if seen.is_empty() {
            return Err(InstanceError::EmptyDesiredSet);
        }
        Ok(DesiredSet(seen.into_iter().collect()))
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Uniformly chosen subset of `[L_A] x [L_B]` with the given size.
    pub fn random<R: RngCore + ?Sized>(
        l_a: usize,
        l_b: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self, InstanceError> {
        let mut all: Vec<Pair> = (1..=l_a)
            .flat_map(|i| (1..=l_b).map(move |j| (i, j)))
            .collect();
        if size > all.len() {
            return Err(InstanceError::PairOutOfRange {
                i: l_a,
                j: l_b,
                l_a,
                l_b,
            });
        }
        all.shuffle(rng);
        all.truncate(size);
        DesiredSet::new(all)
    }
}

impl<'de> Deserialize<'de> for DesiredSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs = Vec::<Pair>::deserialize(d)?;
        DesiredSet::new(pairs).map_err(serde::de::Error::custom)
    }
}

/// One sub-block product `Ã_row B̃_col` together with where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ExpandedPair {
    /// Index into `Ã`, i.e. `m(i-1) + a`.
    pub row: usize,
    /// Index into `B̃`, i.e. `n(j-1) + b`.
    pub col: usize,
    /// The desired product `(i, j)` this block belongs to.
    pub source: Pair,
    /// 1-based block position `(a, b)` inside `A_i B_j`.
    pub block: (usize, usize),
}

impl ExpandedPair {
    pub fn pair(&self) -> Pair {
        (self.row, self.col)
    }
}

/// The re-indexed set of `|S| m n` sub-block products, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedSet {
    m: usize,
    n: usize,
    entries: Vec<ExpandedPair>,
}

impl ExpandedSet {
    /// Canonical order is lexicographic in (rank of the source pair in S, a, b).
    pub fn expand(s: &DesiredSet, m: usize, n: usize) -> Self {
        let mut entries = Vec::with_capacity(s.len() * m * n);
        for &(i, j) in s.pairs() {
            for a in 1..=m {
                for b in 1..=n {
                    entries.push(ExpandedPair {
                        row: m * (i - 1) + a,
                        col: n * (j - 1) + b,
                        source: (i, j),
                        block: (a, b),
                    });
                }
            }
        }
        ExpandedSet { m, n, entries }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ExpandedPair] {
        &self.entries
    }

    pub fn get(&self, idx: usize) -> &ExpandedPair {
        &self.entries[idx]
    }

    pub fn position(&self, pair: Pair) -> Option<usize> {
        self.entries.iter().position(|e| e.pair() == pair)
    }
}

/// How the expanded products are split into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingPolicy {
    /// Element `t` of the canonical order goes to group `t mod r`.
    #[default]
    RoundRobin,
    /// A seeded shuffle cut into `r` consecutive chunks.
    Random,
}

/// Partition of the expanded set into `r` groups of equal size `delta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    /// Positions into the expanded set, per group.
    groups: Vec<Vec<usize>>,
    /// Group of each expanded position.
    group_of: Vec<usize>,
    /// `(row, col)` of each expanded position.
    pairs: Vec<Pair>,
    delta: usize,
}

impl Grouping {
    pub fn new<R: RngCore + ?Sized>(
        expanded: &ExpandedSet,
        r: usize,
        policy: GroupingPolicy,
        rng: &mut R,
    ) -> Result<Self, InstanceError> {
        let len = expanded.len();
        if r == 0 {
            return Err(InstanceError::ZeroParameter("r"));
        }
        if !len.is_multiple_of(r) {
            return Err(InstanceError::GroupsDoNotDivide { r, mn: len });
        }
        let delta = len / r;
        let mut groups = vec![Vec::with_capacity(delta); r];
        match policy {
            GroupingPolicy::RoundRobin => {
                for t in 0..len {
                    groups[t % r].push(t);
                }
            }
            GroupingPolicy::Random => {
                let mut order: Vec<usize> = (0..len).collect();
                order.shuffle(rng);
                for (k, chunk) in order.chunks(delta).enumerate() {
                    let mut chunk = chunk.to_vec();
                    chunk.sort_unstable();
                    groups[k] = chunk;
                }
            }
        }
        let mut group_of = vec![0; len];
        for (k, g) in groups.iter().enumerate() {
            for &p in g {
                group_of[p] = k;
            }
        }
        let pairs = expanded.entries().iter().map(|e| e.pair()).collect();
        Ok(Grouping {
            groups,
            group_of,
            pairs,
            delta,
        })
    }

    pub fn r(&self) -> usize {
        self.groups.len()
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Expanded positions in group `k`.
    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    /// The pairs `(row, col)` of group `k`.
    pub fn group_pairs(&self, k: usize) -> Vec<Pair> {
        self.groups[k].iter().map(|&p| self.pairs[p]).collect()
    }

    pub fn group_of(&self, position: usize) -> usize {
        self.group_of[position]
    }

    pub fn pair_at(&self, position: usize) -> Pair {
        self.pairs[position]
    }

    pub fn position_of(&self, pair: Pair) -> Option<usize> {
        self.pairs.iter().position(|p| *p == pair)
    }

    /// Positions in group `k` whose left index is `i` (the set `A^k_i`).
    pub fn left_set(&self, i: usize, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.groups[k]
            .iter()
            .copied()
            .filter(move |&p| self.pairs[p].0 == i)
    }

    /// Positions in group `k` whose right index is `j` (the set `B^k_j`).
    pub fn right_set(&self, j: usize, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.groups[k]
            .iter()
            .copied()
            .filter(move |&p| self.pairs[p].1 == j)
    }
}

/// A validated instance with its expansion and grouping.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub params: SchemeParams,
    pub desired: DesiredSet,
    pub expanded: ExpandedSet,
    pub grouping: Grouping,
}

impl ProblemInstance {
    /// Fully validated instance (including `N >= R`).
    pub fn new<R: RngCore + ?Sized>(
        params: SchemeParams,
        desired: DesiredSet,
        policy: GroupingPolicy,
        rng: &mut R,
    ) -> Result<Self, InstanceError> {
        params.validate(&desired)?;
        Self::build(params, desired, policy, rng)
    }

    /// Instance that can produce queries but may lack workers for decoding.
    pub fn for_queries<R: RngCore + ?Sized>(
        params: SchemeParams,
        desired: DesiredSet,
        policy: GroupingPolicy,
        rng: &mut R,
    ) -> Result<Self, InstanceError> {
        params.validate_structure(&desired)?;
        Self::build(params, desired, policy, rng)
    }

    fn build<R: RngCore + ?Sized>(
        params: SchemeParams,
        desired: DesiredSet,
        policy: GroupingPolicy,
        rng: &mut R,
    ) -> Result<Self, InstanceError> {
        let expanded = ExpandedSet::expand(&desired, params.m, params.n);
        let grouping = Grouping::new(&expanded, params.r, policy, rng)?;
        Ok(ProblemInstance {
            params,
            desired,
            expanded,
            grouping,
        })
    }

    pub fn recovery_threshold(&self) -> usize {
        self.params.recovery_threshold(self.desired.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SeededRng;
    use rand::SeedableRng;

    fn example_params() -> SchemeParams {
        SchemeParams {
            alpha: 2,
            l_a: 2,
            l_b: 2,
            m: 1,
            n: 2,
            r: 2,
            t: 1,
            workers: 7,
            q: FieldModulus::new(13).unwrap(),
        }
    }

    fn example_set() -> DesiredSet {
        DesiredSet::new([(1, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn illustrative_parameters_are_valid() {
        example_params().validate(&example_set()).unwrap();
        assert_eq!(example_params().recovery_threshold(2), 7);
        assert_eq!(example_params().delta(2), 2);
    }

    #[test]
    fn validation_errors() {
        let s = DesiredSet::new([(1, 1)]).unwrap();
        let p = SchemeParams {
            m: 1,
            n: 1,
            r: 3,
            ..example_params()
        };
        assert_eq!(
            p.validate(&s),
            Err(InstanceError::GroupsDoNotDivide { r: 3, mn: 1 })
        );

        // q = |S| m n + N - 1 is one short
        let p = SchemeParams {
            q: FieldModulus::new(11).unwrap(),
            workers: 8,
            ..example_params()
        };
        assert_eq!(
            p.validate(&example_set()),
            Err(InstanceError::FieldTooSmall {
                q: 11,
                required: 12
            })
        );
        let p = SchemeParams {
            workers: 6,
            ..example_params()
        };
        assert_eq!(
            p.validate(&example_set()),
            Err(InstanceError::TooFewWorkers {
                workers: 6,
                threshold: 7
            })
        );
        assert!(p.validate_structure(&example_set()).is_ok());

        let p = SchemeParams {
            alpha: 3,
            ..example_params()
        };
        assert!(matches!(
            p.validate(&example_set()),
            Err(InstanceError::PartitionDoesNotDivide { name: "n", .. })
        ));
        let p = SchemeParams {
            t: 0,
            ..example_params()
        };
        assert_eq!(
            p.validate(&example_set()),
            Err(InstanceError::ZeroParameter("T"))
        );

        let out = DesiredSet::new([(3, 1)]).unwrap();
        assert!(matches!(
            example_params().validate(&out),
            Err(InstanceError::PairOutOfRange { .. })
        ));
        assert_eq!(DesiredSet::new([]), Err(InstanceError::EmptyDesiredSet));
        assert_eq!(
            DesiredSet::new([(1, 1), (1, 1)]),
            Err(InstanceError::DuplicatePair(1, 1))
        );
    }

    #[test]
    fn expand_examples() {
        let e = ExpandedSet::expand(&DesiredSet::new([(1, 1)]).unwrap(), 1, 1);
        assert_eq!(
            e.entries().iter().map(|x| x.pair()).collect::<Vec<_>>(),
            vec![(1, 1)]
        );

        let e = ExpandedSet::expand(&example_set(), 1, 2);
        let pairs: Vec<_> = e.entries().iter().map(|x| x.pair()).collect();
        assert_eq!(pairs, vec![(1, 1), (1, 2), (1, 3), (1, 4)]);
        let back: Vec<_> = e.entries().iter().map(|x| (x.source, x.block)).collect();
        assert_eq!(
            back,
            vec![
                ((1, 1), (1, 1)),
                ((1, 1), (1, 2)),
                ((1, 2), (1, 1)),
                ((1, 2), (1, 2))
            ]
        );

        // m(i-1)+a with i=2, m=2 gives 3 and 4
        let e = ExpandedSet::expand(&DesiredSet::new([(2, 1)]).unwrap(), 2, 1);
        assert_eq!(
            e.entries().iter().map(|x| x.pair()).collect::<Vec<_>>(),
            vec![(3, 1), (4, 1)]
        );
    }

    #[test]
    fn round_robin_reproduces_illustrative_groups() {
        let e = ExpandedSet::expand(&example_set(), 1, 2);
        let mut rng = SeededRng::seed_from_u64(0);
        let g = Grouping::new(&e, 2, GroupingPolicy::RoundRobin, &mut rng).unwrap();
        // {A1 B_{1,1}, A1 B_{2,1}} and {A1 B_{1,2}, A1 B_{2,2}}
        assert_eq!(g.group_pairs(0), vec![(1, 1), (1, 3)]);
        assert_eq!(g.group_pairs(1), vec![(1, 2), (1, 4)]);
        assert_eq!(g.delta(), 2);

        let single = Grouping::new(&e, 1, GroupingPolicy::RoundRobin, &mut rng).unwrap();
        assert_eq!(single.group(0), &[0, 1, 2, 3]);
        assert!(Grouping::new(&e, 3, GroupingPolicy::RoundRobin, &mut rng).is_err());
    }

    #[test]
    fn random_grouping_is_a_partition() {
        let s = DesiredSet::new([(1, 1), (2, 2), (1, 2)]).unwrap();
        let e = ExpandedSet::expand(&s, 2, 2);
        for seed in 0..50 {
            let mut rng = SeededRng::seed_from_u64(seed);
            let g = Grouping::new(&e, 4, GroupingPolicy::Random, &mut rng).unwrap();
            let mut all: Vec<usize> = (0..4).flat_map(|k| g.group(k).to_vec()).collect();
            assert!((0..4).all(|k| g.group(k).len() == 3));
            all.sort();
            assert_eq!(all, (0..12).collect::<Vec<_>>());
            assert_eq!(g.delta() * g.r(), e.len());
        }
    }

    #[test]
    fn left_right_sets_meet_in_at_most_the_pair() {
        let mut rng = SeededRng::seed_from_u64(11);
        for trial in 0..30 {
            let (m, n, r) = [(1, 1, 1), (1, 2, 2), (2, 2, 2), (2, 2, 4), (2, 1, 1)][trial % 5];
            let s = DesiredSet::random(3, 3, 1 + trial % 4, &mut rng).unwrap();
            let e = ExpandedSet::expand(&s, m, n);
            let policy = if trial % 2 == 0 {
                GroupingPolicy::RoundRobin
            } else {
                GroupingPolicy::Random
            };
            let g = Grouping::new(&e, r, policy, &mut rng).unwrap();
            for k in 0..r {
                for i in 1..=3 * m {
                    for j in 1..=3 * n {
                        let left: BTreeSet<usize> = g.left_set(i, k).collect();
                        let right: BTreeSet<usize> = g.right_set(j, k).collect();
                        let both: Vec<Pair> =
                            left.intersection(&right).map(|&p| g.pair_at(p)).collect();
                        if g.group_pairs(k).contains(&(i, j)) {
                            assert_eq!(both, vec![(i, j)]);
                        } else {
                            assert!(both.is_empty());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn expansion_is_injective() {
        let s = DesiredSet::new([(1, 1), (1, 2), (2, 1), (2, 2)]).unwrap();
        let e = ExpandedSet::expand(&s, 2, 3);
        let distinct: BTreeSet<Pair> = e.entries().iter().map(|x| x.pair()).collect();
        assert_eq!(distinct.len(), 4 * 6);
        for chunk in e.entries().chunks(6) {
            assert!(chunk.iter().all(|x| x.source == chunk[0].source));
        }
    }
}

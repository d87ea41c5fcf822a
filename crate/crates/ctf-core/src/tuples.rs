//! r-tuple keys and the balanced-tree forest used by improved track
//! cleaning.
//!
//! A track over an L-layer detector is summarized by its *track vector*: one
//! entry per layer holding either a real hit index or a per-track ghost
//! sentinel. An r-tuple keeps the vector's values at r chosen positions and
//! blanks the rest; two tracks share at least r real hits exactly when they
//! have a matching r-tuple, because ghost sentinels are unique per track and
//! can never match.

use std::collections::BTreeSet;

use itertools::Itertools;

/// One entry of a track vector. Ghost sentinels are encoded as negative
/// values unique per (track, layer), real hits as non-negative indices.
pub type TupleEntry = i64;

/// Build a ghost sentinel that cannot collide with any real hit index or
/// with another track's ghosts.
pub fn ghost_sentinel(track_id: usize, layer: usize, num_layers: usize) -> TupleEntry {
    -1 - (track_id as i64 * num_layers as i64 + layer as i64)
}

/// An r-tuple: a track vector restricted to `r` positions, blanks (`None`)
/// elsewhere. `None` orders before every concrete entry, giving the total
/// lexicographic order the search trees require.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RTupleKey(pub Vec<Option<TupleEntry>>);

impl RTupleKey {
    pub fn r(&self) -> usize {
        self.0.iter().filter(|e| e.is_some()).count()
    }
}

/// All `binom(L, r)` r-tuples of a track vector, with position subsets in
/// lexicographic order.
pub fn r_tuples(track_vector: &[TupleEntry], r: usize) -> Vec<RTupleKey> {
    assert!(r >= 1 && r <= track_vector.len());
    (0..track_vector.len())
        .combinations(r)
        .map(|positions| {
            let mut key = vec![None; track_vector.len()];
            for p in positions {
                key[p] = Some(track_vector[p]);
            }
            RTupleKey(key)
        })
        .collect()
}

/// The R x R array of ordered r-tuple sets used by improved cleaning: tree
/// (i, j) holds the i-tuples of accepted tracks whose own overlap size is j.
/// Indices are 1-based sizes, stored 0-based internally.
#[derive(Debug)]
pub struct TupleForest {
    r_max: usize,
    trees: Vec<BTreeSet<RTupleKey>>,
    /// Weighted operation count: each search or insert costs
    /// 1 + log2(tree size + 1), the comparison count of a balanced tree.
    ops: f64,
}

impl TupleForest {
    pub fn new(r_max: usize) -> Self {
        Self {
            r_max,
            trees: (0..r_max * r_max).map(|_| BTreeSet::new()).collect(),
            ops: 0.0,
        }
    }

    pub fn r_max(&self) -> usize {
        self.r_max
    }

    pub fn ops(&self) -> f64 {
        self.ops
    }

    pub fn tree_len(&self, i: usize, j: usize) -> usize {
        self.trees[self.index(i, j)].len()
    }

    pub fn total_len(&self) -> usize {
        self.trees.iter().map(BTreeSet::len).sum()
    }

    fn index(&self, i: usize, j: usize) -> usize {
        assert!(
            (1..=self.r_max).contains(&i) && (1..=self.r_max).contains(&j),
            "tree index ({i}, {j}) outside 1..={}",
            self.r_max
        );
        (i - 1) * self.r_max + (j - 1)
    }

    fn charge(&mut self, size: usize) {
        self.ops += 1.0 + ((size + 1) as f64).log2();
    }

    pub fn contains(&mut self, i: usize, j: usize, key: &RTupleKey) -> bool {
        let idx = self.index(i, j);
        self.charge(self.trees[idx].len());
        self.trees[idx].contains(key)
    }

    pub fn insert(&mut self, i: usize, j: usize, key: RTupleKey) {
        let idx = self.index(i, j);
        self.charge(self.trees[idx].len());
        self.trees[idx].insert(key);
    }

    /// Does `track_vector` (with its overlap size `r`) share a matching
    /// tuple with any registered track? Implements the two overlap cases:
    /// (a) the other track's r' is at most r: its r'-tuples live in
    ///     T(r', r'), so search those for r' <= r;
    /// (b) the other track's r' exceeds r: our r-tuples were inserted by it
    ///     into T(r, r'), so search T(r, r') for r' > r.
    pub fn overlaps(&mut self, track_vector: &[TupleEntry], r: usize) -> bool {
        let cap = r.min(track_vector.len());
        for rp in 1..=cap {
            for key in r_tuples(track_vector, rp) {
                if self.contains(rp, rp, &key) {
                    return true;
                }
            }
        }
        if r <= track_vector.len() {
            let own = r_tuples(track_vector, r);
            for rp in r + 1..=self.r_max {
                for key in &own {
                    if self.contains(r, rp, key) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Register an accepted track: insert its r'-tuples for r' <= r into
    /// T(r', r).
    pub fn register(&mut self, track_vector: &[TupleEntry], r: usize) {
        let cap = r.min(track_vector.len());
        for rp in 1..=cap {
            for key in r_tuples(track_vector, rp) {
                self.insert(rp, r, key);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        let mut acc = 1usize;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        acc
    }

    #[test]
    fn example_two_tuples_are_produced() {
        let t = [0, 2, 4, 4];
        let keys = r_tuples(&t, 2);
        assert!(keys.contains(&RTupleKey(vec![Some(0), Some(2), None, None])));
        assert!(keys.contains(&RTupleKey(vec![Some(0), None, Some(4), None])));
    }

    #[test]
    fn full_length_tuple_is_the_vector() {
        let t = [3, 1, 4, 1, 5];
        let keys = r_tuples(&t, 5);
        assert_eq!(keys, vec![RTupleKey(t.iter().map(|&e| Some(e)).collect())]);
    }

    #[test]
    fn tuple_counts_match_binomials() {
        for l in 1..=12usize {
            let t: Vec<TupleEntry> = (0..l as i64).collect();
            for r in 1..=l {
                assert_eq!(r_tuples(&t, r).len(), binom(l, r), "L={l}, r={r}");
            }
        }
    }

    #[test]
    fn blank_orders_before_entries() {
        let blank_heavy = RTupleKey(vec![None, Some(0)]);
        let entry_first = RTupleKey(vec![Some(0), None]);
        assert!(blank_heavy < entry_first);
    }

    #[test]
    fn ghost_sentinels_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for track in 0..50 {
            for layer in 0..8 {
                let s = ghost_sentinel(track, layer, 8);
                assert!(s < 0);
                assert!(seen.insert(s), "sentinel collision at ({track}, {layer})");
            }
        }
    }

    #[test]
    fn forest_detects_overlap_cases() {
        // Case (a): registered track has smaller r than the query.
        let mut forest = TupleForest::new(4);
        forest.register(&[0, 1, 2, 3], 2);
        assert!(forest.overlaps(&[0, 1, 7, 8], 3), "shares 2 hits, r_other = 2");
        // Case (b): registered track has larger r than the query.
        let mut forest = TupleForest::new(4);
        forest.register(&[0, 1, 2, 3], 3);
        assert!(forest.overlaps(&[0, 1, 2, 9], 2), "shares 3 >= 2 hits");
        // No overlap below both thresholds.
        let mut forest = TupleForest::new(4);
        forest.register(&[0, 1, 2, 3], 3);
        assert!(!forest.overlaps(&[0, 1, 8, 9], 3), "only 2 shared < min(3,3)");
    }

    #[test]
    fn forest_matches_exhaustive_pairwise_oracle() {
        // Register random tracks greedily; acceptance must equal a direct
        // shared-count comparison against every previously accepted track.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _trial in 0..50 {
            let l = rng.gen_range(4..=8usize);
            let r_max = l;
            let mut forest = TupleForest::new(r_max);
            let mut accepted: Vec<(Vec<TupleEntry>, usize)> = Vec::new();
            for _ in 0..60 {
                let vec: Vec<TupleEntry> =
                    (0..l).map(|_| rng.gen_range(0..5) as i64).collect();
                let r = rng.gen_range(1..=l);
                let oracle_overlap = accepted.iter().any(|(other, ro)| {
                    let shared = vec
                        .iter()
                        .zip(other)
                        .filter(|(a, b)| a == b)
                        .count();
                    shared >= r.min(*ro)
                });
                let got = forest.overlaps(&vec, r);
                assert_eq!(got, oracle_overlap, "vec {vec:?} r {r}");
                if !got {
                    forest.register(&vec, r);
                    accepted.push((vec, r));
                }
            }
        }
    }

    #[test]
    fn disjoint_tracks_fill_forest_with_all_tuples() {
        let mut forest = TupleForest::new(4);
        let mut expected = 0;
        for t in 0..5 {
            let base = (t * 10) as i64;
            let vec = [base, base + 1, base + 2, base + 3];
            let r = 3;
            assert!(!forest.overlaps(&vec, r));
            forest.register(&vec, r);
            expected += binom(4, 1) + binom(4, 2) + binom(4, 3);
        }
        assert_eq!(forest.total_len(), expected);
    }

    #[test]
    fn ops_grow_monotonically() {
        let mut forest = TupleForest::new(3);
        let before = forest.ops();
        forest.overlaps(&[1, 2, 3], 2);
        let mid = forest.ops();
        assert!(mid > before);
        forest.register(&[1, 2, 3], 2);
        assert!(forest.ops() > mid);
    }
}

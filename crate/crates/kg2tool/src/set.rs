//! Sorted entity sets and their algebra.
//!
//! All query evaluation bottoms out in three operations over these sets:
//! intersection, union, and relative complement (`difference`). Sets are
//! kept sorted and duplicate-free so that iteration order, serialization,
//! and comparisons are deterministic.

use crate::kg::EntityId;

/// Sorted, duplicate-free set of entity ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EntitySet(Vec<EntityId>);

impl EntitySet {
    pub fn new() -> Self {
        EntitySet(Vec::new())
    }

    pub fn singleton(e: EntityId) -> Self {
        EntitySet(vec![e])
    }

    /// Builds a set from arbitrary ids, sorting and deduplicating.
    pub fn from_ids(mut ids: Vec<EntityId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        EntitySet(ids)
    }

    /// Wraps a slice that is already sorted and duplicate-free.
    pub(crate) fn from_sorted(ids: Vec<EntityId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        EntitySet(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.0.binary_search(&e).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }

    /// Common entities of `self` and `other`.
    pub fn intersection(&self, other: &EntitySet) -> EntitySet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(self.len().min(other.len()));
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        EntitySet(out)
    }

    /// Entities in either `self` or `other`.
    pub fn union(&self, other: &EntitySet) -> EntitySet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(self.len() + other.len());
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        EntitySet(out)
    }

    /// Relative complement: entities of `self` not in `exclude`.
    pub fn difference(&self, exclude: &EntitySet) -> EntitySet {
        let mut out = Vec::with_capacity(self.len());
        let mut j = 0;
        for &e in &self.0 {
            while j < exclude.0.len() && exclude.0[j] < e {
                j += 1;
            }
            if j >= exclude.0.len() || exclude.0[j] != e {
                out.push(e);
            }
        }
        EntitySet(out)
    }
}

impl FromIterator<EntityId> for EntitySet {
    fn from_iter<T: IntoIterator<Item = EntityId>>(iter: T) -> Self {
        EntitySet::from_ids(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = EntityId;
    type IntoIter = std::iter::Copied<std::slice::Iter<'a, EntityId>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> EntitySet {
        EntitySet::from_ids(ids.iter().map(|&i| EntityId(i)).collect())
    }

    // Naive oracles the merge-walk implementations are checked against.
    fn naive_intersection(a: &EntitySet, b: &EntitySet) -> EntitySet {
        a.iter().filter(|&e| b.iter().any(|x| x == e)).collect()
    }

    fn naive_union(a: &EntitySet, b: &EntitySet) -> EntitySet {
        a.iter().chain(b.iter()).collect()
    }

    fn naive_difference(a: &EntitySet, b: &EntitySet) -> EntitySet {
        a.iter().filter(|&e| !b.iter().any(|x| x == e)).collect()
    }

    #[test]
    fn basic_algebra() {
        assert_eq!(set(&[0, 1]).intersection(&set(&[1, 2])), set(&[1]));
        assert_eq!(set(&[0]).union(&set(&[1])), set(&[0, 1]));
        assert_eq!(set(&[0, 1]).difference(&set(&[1])), set(&[0]));
    }

    #[test]
    fn identities() {
        let a = set(&[2, 5, 9]);
        assert_eq!(a.intersection(&a), a);
        assert_eq!(a.union(&EntitySet::new()), a);
        assert_eq!(a.difference(&EntitySet::new()), a);
        assert_eq!(a.difference(&a), EntitySet::new());
    }

    #[test]
    fn from_ids_sorts_and_dedups() {
        let s = EntitySet::from_ids(vec![EntityId(3), EntityId(1), EntityId(3)]);
        assert_eq!(s, set(&[1, 3]));
    }

    proptest! {
        #[test]
        fn merge_ops_match_naive_oracles(
            a in proptest::collection::vec(0u32..64, 0..40),
            b in proptest::collection::vec(0u32..64, 0..40),
        ) {
            let a = set(&a);
            let b = set(&b);
            prop_assert_eq!(a.intersection(&b), naive_intersection(&a, &b));
            prop_assert_eq!(a.union(&b), naive_union(&a, &b));
            prop_assert_eq!(a.difference(&b), naive_difference(&a, &b));
        }

        #[test]
        fn commutativity_and_idempotence(
            a in proptest::collection::vec(0u32..64, 0..40),
            b in proptest::collection::vec(0u32..64, 0..40),
        ) {
            let a = set(&a);
            let b = set(&b);
            prop_assert_eq!(a.intersection(&b), b.intersection(&a));
            prop_assert_eq!(a.union(&b), b.union(&a));
            prop_assert_eq!(a.intersection(&a), a.clone());
            prop_assert_eq!(a.union(&a), a);
        }
    }
}

//! Linear algebra over GF(2) on bitsets.

use fixedbitset::FixedBitSet;

/// Incremental row-echelon basis. Rows are kept reduced against earlier pivots.
#[derive(Clone, Debug, Default)]
pub struct Gf2Basis {
    rows: Vec<(usize, FixedBitSet)>,
}

impl Gf2Basis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Reduce `v` in place; returns true if it became zero.
    pub fn reduce(&self, v: &mut FixedBitSet) -> bool {
        for (pivot, row) in &self.rows {
            if v.contains(*pivot) {
                v.symmetric_difference_with(row);
            }
        }
        v.is_clear()
    }

    /// Insert `v`; returns false if it was already in the span.
    pub fn insert(&mut self, v: &FixedBitSet) -> bool {
        let mut r = v.clone();
        if self.reduce(&mut r) {
            return false;
        }
        let pivot = r.ones().next().unwrap();
        for (_, row) in self.rows.iter_mut() {
            if row.contains(pivot) {
                row.symmetric_difference_with(&r);
            }
        }
        self.rows.push((pivot, r));
        true
    }

    pub fn contains(&self, v: &FixedBitSet) -> bool {
        let mut r = v.clone();
        self.reduce(&mut r)
    }
}

/// Rank of a list of vectors.
pub fn rank(vectors: &[FixedBitSet]) -> usize {
    let mut b = Gf2Basis::new();
    for v in vectors {
        b.insert(v);
    }
    b.rank()
}

/// Keep the vectors that are independent of the ones before them.
pub fn independent_subset(vectors: &[FixedBitSet]) -> Vec<FixedBitSet> {
    let mut b = Gf2Basis::new();
    vectors.iter().filter(|v| b.insert(v)).cloned().collect()
}

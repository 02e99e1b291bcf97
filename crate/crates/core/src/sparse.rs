//! Sparse state vectors over `u64` basis indices.

use std::collections::HashMap;

use num_complex::Complex64;

/// Amplitudes sorted by basis index, indices unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u64, Complex64)>,
}

impl SparseVector {
    pub fn basis(index: u64) -> Self {
        Self { entries: vec![(index, Complex64::new(1.0, 0.0))] }
    }

    /// Keeps every index of a dense vector, zeros included.
    pub fn from_dense(values: &[Complex64]) -> Self {
        Self { entries: values.iter().enumerate().map(|(i, &c)| (i as u64, c)).collect() }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); dim];
        for &(i, c) in &self.entries {
            out[i as usize] = c;
        }
        out
    }

    pub fn entries(&self) -> &[(u64, Complex64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u64) -> Complex64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|e| e.1.norm_sqr()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &SparseVector) -> Complex64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = Complex64::new(0.0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1.conj() * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Drops entries with `|c| < threshold`.
    pub fn prune(&mut self, threshold: f64) {
        self.entries.retain(|e| e.1.norm() >= threshold);
    }

    /// `⟨ψ|D|ψ⟩` for an operator diagonal in the basis.
    pub fn diagonal_expectation(&self, diag: impl Fn(u64) -> f64) -> f64 {
        self.entries.iter().map(|&(i, c)| c.norm_sqr() * diag(i)).sum()
    }
}

/// Collects contributions per basis index; summation order per index is the push order.
#[derive(Debug, Default)]
pub struct Accumulator {
    map: HashMap<u64, Complex64>,
}

impl Accumulator {
    pub fn with_capacity(n: usize) -> Self {
        Self { map: HashMap::with_capacity(n) }
    }

    pub fn add(&mut self, index: u64, value: Complex64) {
        *self.map.entry(index).or_default() += value;
    }

    pub fn add_vector(&mut self, v: &SparseVector, factor: Complex64) {
        for &(i, c) in &v.entries {
            self.add(i, c * factor);
        }
    }

    pub fn finish(self) -> SparseVector {
        let mut entries: Vec<(u64, Complex64)> = self.map.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        SparseVector { entries }
    }
}

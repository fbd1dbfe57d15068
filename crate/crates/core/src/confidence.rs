//! Per-pair confidence `β`, aligned with [`DemoSet::pair_index`](crate::demo::DemoSet::pair_index).

use std::fmt::Write as _;

use crate::error::{CailError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    beta: Vec<f64>,
}

impl ConfidenceTable {
    /// All ones, so the mean is already 1.
    pub fn init(n_pairs: usize) -> Result<Self> {
        if n_pairs == 0 {
            return Err(CailError::arg("confidence table needs at least one pair"));
        }
        Ok(Self { beta: vec![1.0; n_pairs] })
    }

    pub fn from_values(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(CailError::arg("confidence table needs at least one pair"));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(CailError::arg("non-finite confidence"));
        }
        Ok(Self { beta })
    }

    pub fn values(&self) -> &[f64] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.beta.iter().sum()
    }

    /// Copy with one entry shifted; used by finite-difference oracles.
    pub fn perturbed(&self, slot: usize, delta: f64) -> Self {
        let mut beta = self.beta.clone();
        beta[slot] += delta;
        Self { beta }
    }

    /// Mean-one weights `n · β_i / Σ_j β_j` at the requested slots. The sum
    /// runs over the whole corpus, not just the batch.
    pub fn normalized_weights(&self, slots: &[usize]) -> Result<Vec<f64>> {
        let total = self.sum();
        if !(total > 0.0) {
            return Err(CailError::DegenerateConfidence);
        }
        let n = self.beta.len() as f64;
        Ok(slots.iter().map(|&i| n * self.beta[i] / total).collect())
    }

    /// Entry-wise `max(β, 0)`.
    pub fn project(&self) -> Self {
        Self {
            beta: self.beta.iter().map(|b| b.max(0.0)).collect(),
        }
    }

    /// `β_i ← β_i - α · g_i` at the given slots, then projection.
    pub fn step(&self, slots: &[usize], grad: &[f64], alpha: f64) -> Self {
        let mut beta = self.beta.clone();
        for (&i, g) in slots.iter().zip(grad) {
            beta[i] -= alpha * g;
        }
        Self { beta }.project()
    }

    /// `β · n / Σβ`. Leaves [`normalized_weights`](Self::normalized_weights)
    /// unchanged.
    pub fn rescaled_to_mean_one(&self) -> Result<Self> {
        let total = self.sum();
        if !(total > 0.0) {
            return Err(CailError::DegenerateConfidence);
        }
        let n = self.beta.len() as f64;
        Ok(Self {
            beta: self.beta.iter().map(|b| b * n / total).collect(),
        })
    }

    /// Mean confidence over the slots of each level.
    pub fn level_means(&self, slot_levels: &[usize], n_levels: usize) -> Vec<f64> {
        let mut sums = vec![0.0; n_levels];
        let mut counts = vec![0usize; n_levels];
        for (b, &l) in self.beta.iter().zip(slot_levels) {
            sums[l] += b;
            counts[l] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    /// One decimal value per line, aligned with the pair index.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.beta.len() * 20);
        for b in &self.beta {
            writeln!(out, "{b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let beta = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| CailError::Parse(format!("bad confidence {l:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        Self::from_values(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_is_ones() {
        assert_eq!(ConfidenceTable::init(3).unwrap().values(), &[1.0, 1.0, 1.0]);
        assert_eq!(ConfidenceTable::init(1).unwrap().values(), &[1.0]);
        assert!(ConfidenceTable::init(0).is_err());
    }

    #[test]
    fn weights_closed_forms() {
        let beta = ConfidenceTable::from_values(vec![2.0, 0.0]).unwrap();
        assert_eq!(beta.normalized_weights(&[0, 1]).unwrap(), vec![2.0, 0.0]);
        let constant = ConfidenceTable::from_values(vec![0.3; 5]).unwrap();
        for w in constant.normalized_weights(&[0, 1, 2, 3, 4]).unwrap() {
            assert!((w - 1.0).abs() < 1e-15);
        }
        let zero = ConfidenceTable::from_values(vec![0.0; 3]).unwrap();
        assert!(matches!(zero.normalized_weights(&[0]), Err(CailError::DegenerateConfidence)));
    }

    #[test]
    fn projection_examples() {
        let beta = ConfidenceTable::from_values(vec![-1.0, 2.0]).unwrap();
        assert_eq!(beta.project().values(), &[0.0, 2.0]);
        let ok = ConfidenceTable::from_values(vec![0.5, 2.0]).unwrap();
        assert_eq!(ok.project(), ok);
    }

    #[test]
    fn step_clamps() {
        let beta = ConfidenceTable::init(3).unwrap();
        let out = beta.step(&[1], &[5.0], 1.0);
        assert_eq!(out.values(), &[1.0, 0.0, 1.0]);
        assert_eq!(beta.step(&[0, 2], &[0.0, 0.0], 1.0), beta);
        assert_eq!(beta.step(&[0], &[3.0], 0.0), beta);
    }

    #[test]
    fn rescale_keeps_weights() {
        let beta = ConfidenceTable::from_values(vec![0.1, 0.3, 0.0, 0.2]).unwrap();
        let r = beta.rescaled_to_mean_one().unwrap();
        assert!((r.sum() - 4.0).abs() < 1e-12);
        let slots = [0, 1, 2, 3];
        for (a, b) in beta.normalized_weights(&slots).unwrap().iter().zip(r.normalized_weights(&slots).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ConfidenceTable::from_values(vec![0.0, 0.0]).unwrap().rescaled_to_mean_one().is_err());
    }

    #[test]
    fn text_round_trip() {
        let beta = ConfidenceTable::from_values(vec![0.25, 1.0 / 3.0, 7.0]).unwrap();
        assert_eq!(ConfidenceTable::from_text(&beta.to_text()).unwrap(), beta);
    }

    proptest! {
        #[test]
        fn weights_are_scale_invariant(beta in prop::collection::vec(0.01f64..10.0, 1..40), c in 0.01f64..100.0) {
            let a = ConfidenceTable::from_values(beta.clone()).unwrap();
            let b = ConfidenceTable::from_values(beta.iter().map(|x| x * c).collect()).unwrap();
            let slots: Vec<usize> = (0..beta.len()).collect();
            let wa = a.normalized_weights(&slots).unwrap();
            let wb = b.normalized_weights(&slots).unwrap();
            for (x, y) in wa.iter().zip(&wb) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            let mean = wa.iter().sum::<f64>() / wa.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn projection_is_idempotent_and_monotone(beta in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let t = ConfidenceTable::from_values(beta.clone()).unwrap();
            let p = t.project();
            prop_assert_eq!(p.project(), p.clone());
            for i in 0..beta.len() {
                for j in 0..beta.len() {
                    if beta[i] <= beta[j] {
                        prop_assert!(p.values()[i] <= p.values()[j]);
                    }
                }
            }
        }
    }
}

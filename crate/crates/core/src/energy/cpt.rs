//! Sparse conditional probability tables.
//!
//! A table stores normalized log-probability rows keyed by conditioning
//! tuples. Rows are materialized either from counts (additive smoothing
//! with the table's pseudo-count) or from explicit probabilities. A
//! lookup against a missing key falls back to the uniform row when the
//! pseudo-count is positive and is an error otherwise.

use std::collections::HashMap;
use std::hash::Hash;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EnergyError;

#[derive(Debug, Clone, PartialEq)]
pub struct Cpt<K> {
    rows: HashMap<K, Vec<f64>>,
    kappa: f64,
}

impl<K: Eq + Hash + Ord + Clone> Cpt<K> {
    pub fn new(kappa: f64) -> Self {
        Self { rows: HashMap::new(), kappa }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Normalizes `counts + kappa` into a log-probability row. With a
    /// zero pseudo-count, unobserved states get probability exactly 0.
    pub fn fit_row(&mut self, key: K, counts: &[f64]) {
        let total: f64 = counts.iter().sum::<f64>() + self.kappa * counts.len() as f64;
        debug_assert!(total > 0.0, "cannot fit a row from zero mass with kappa = 0");
        let row = counts.iter().map(|c| ((c + self.kappa) / total).ln()).collect();
        self.rows.insert(key, row);
    }

    /// Installs an explicit probability row. Zero entries are permitted
    /// and yield infinite energy when hit.
    pub fn set_row_probs(&mut self, key: K, probs: &[f64]) {
        let sum: f64 = probs.iter().sum();
        debug_assert!((sum - 1.0).abs() < 1e-9, "row must sum to 1, got {sum}");
        self.rows.insert(key, probs.iter().map(|p| p.ln()).collect());
    }

    pub fn log_prob(&self, key: &K, state: usize, support: usize) -> Result<f64, EnergyError> {
        match self.rows.get(key) {
            Some(row) => Ok(row[state]),
            None if self.kappa > 0.0 => Ok(-(support as f64).ln()),
            None => Err(EnergyError::MissingEntry { support }),
        }
    }

    /// The full log row, falling back to uniform for unseen keys.
    pub fn log_row(&self, key: &K, support: usize) -> Result<Vec<f64>, EnergyError> {
        match self.rows.get(key) {
            Some(row) => Ok(row.clone()),
            None if self.kappa > 0.0 => Ok(vec![-(support as f64).ln(); support]),
            None => Err(EnergyError::MissingEntry { support }),
        }
    }

    pub fn prob_row(&self, key: &K, support: usize) -> Result<Vec<f64>, EnergyError> {
        Ok(self.log_row(key, support)?.iter().map(|l| l.exp()).collect())
    }

    pub fn stored_row(&self, key: &K) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    pub fn keys_sorted(&self) -> Vec<&K> {
        let mut keys: Vec<&K> = self.rows.keys().collect();
        keys.sort();
        keys
    }

    pub fn rows_mut(&mut self) -> impl Iterator<Item = (&K, &mut Vec<f64>)> {
        self.rows.iter_mut()
    }

    pub fn row_mut(&mut self, key: &K) -> Option<&mut Vec<f64>> {
        self.rows.get_mut(key)
    }

    /// Shifts a log row back onto the simplex after a gradient step.
    pub fn renormalize_row(row: &mut [f64]) {
        let lse = log_sum_exp(row);
        for v in row {
            *v -= lse;
        }
    }

    /// Every stored row sums to 1 within the tolerance.
    pub fn check_normalized(&self, tol: f64) -> bool {
        self.rows
            .values()
            .all(|row| (row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() <= tol)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl<K> Serialize for Cpt<K>
where
    K: Eq + Hash + Ord + Clone + Serialize,
{
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut entries: Vec<(&K, &Vec<f64>)> = self.rows.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        #[derive(Serialize)]
        struct Repr<'a, K> {
            kappa: f64,
            rows: Vec<(&'a K, &'a Vec<f64>)>,
        }
        Repr { kappa: self.kappa, rows: entries }.serialize(serializer)
    }
}

impl<'de, K> Deserialize<'de> for Cpt<K>
where
    K: Eq + Hash + Ord + Clone + DeserializeOwned,
{
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr<K> {
            kappa: f64,
            rows: Vec<(K, Vec<f64>)>,
        }
        let repr = Repr::deserialize(deserializer)?;
        Ok(Self { rows: repr.rows.into_iter().collect(), kappa: repr.kappa })
    }
}

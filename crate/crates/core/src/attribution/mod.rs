//! Token attribution: local feature importance for targeting and
//! counterfactual feature importance for refinement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

mod attention;
mod ig;
mod kshap;

pub use attention::self_attention_importance;
pub use ig::{cfi, integrated_gradients, DEFAULT_IG_STEPS};
pub use kshap::{default_samples, kernel_shap, kernel_shap_exact, kernel_shap_sampled, MAX_DEFAULT_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kshap,
    Ig,
    Attention,
    Cfi,
}

/// One score per token of the attributed text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
    pub method: Method,
    /// Parameters used, e.g. `samples`, `steps`, `seed`, `target`.
    pub meta: BTreeMap<String, String>,
}

impl ImportanceVector {
    pub fn new(scores: Vec<f64>, method: Method) -> Self {
        Self { scores, method, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl core::fmt::Display) -> Self {
        self.meta.insert(key.into(), alloc::format!("{value}"));
        self
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Positions by descending score; equal scores keep ascending position order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ranking_is_descending_with_position_tiebreak() {
        let v = ImportanceVector::new(vec![0.1, 0.5, 0.5, -1.0, 0.2], Method::Kshap);
        assert_eq!(v.ranking(), [1, 2, 4, 0, 3]);
    }
}

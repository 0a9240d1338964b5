//! Corpus-level detoxification metrics.
//!
//! Per item, against an evaluation classifier that did not steer the search:
//! toxicity of the output, word-level sparsity, embedding similarity and the
//! perplexity ratio output / input. Corpus aggregates are the percentage of
//! non-toxic outputs, mean toxicity, mean sparsity, mean similarity (as a
//! percentage) and the median perplexity ratio.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{cosine, BackendSuite};
use crate::error::{Error, Result};
use crate::text::{sparsity_percent, word_levenshtein, TokenText};

/// One text to score. Failed items are scored on their original text.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub original: TokenText,
    pub output: TokenText,
    pub failed: bool,
}

impl EvalItem {
    fn effective_output(&self) -> &TokenText {
        if self.failed {
            &self.original
        } else {
            &self.output
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub oracle_p_toxic: f64,
    pub non_toxic: bool,
    pub sparsity_percent: f64,
    pub content_preservation_percent: f64,
    pub ppl_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    /// Word-level edit distance between input and output.
    pub edits: usize,
    pub failed: bool,
    /// `None` when the item could not be scored at all.
    pub metrics: Option<ItemMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub acc_percent: f64,
    pub mean_toxicity_score: f64,
    pub sparsity_percent: f64,
    pub content_preservation_percent: f64,
    pub delta_ppl_median: f64,
    pub n_inputs: usize,
    pub n_success: usize,
    pub n_failed: usize,
    pub per_item: Vec<ItemRecord>,
}

/// Scores one item with the evaluation suite.
pub fn score_item<B: BackendSuite + ?Sized>(oracle: &B, item: &EvalItem) -> Result<ItemRecord> {
    let output = item.effective_output();
    let p_toxic = oracle.classify(output)?.p_toxic;
    let similarity = cosine(&oracle.embed(output)?, &oracle.embed(&item.original)?);
    let ppl_ratio = oracle.perplexity(output)? / oracle.perplexity(&item.original)?;
    Ok(ItemRecord {
        id: item.id.clone(),
        edits: word_levenshtein(&item.original, output),
        failed: item.failed,
        metrics: Some(ItemMetrics {
            oracle_p_toxic: p_toxic,
            non_toxic: p_toxic <= 0.5,
            sparsity_percent: sparsity_percent(&item.original, output),
            content_preservation_percent: 100.0 * similarity,
            ppl_ratio,
        }),
    })
}

/// Median by sorting; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvaluationReport {
    /// Aggregates scored items. Items without metrics count as inputs that are
    /// not non-toxic and are left out of the other averages.
    pub fn aggregate(per_item: Vec<ItemRecord>) -> Result<Self> {
        if per_item.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n_inputs = per_item.len();
        let n_failed = per_item.iter().filter(|r| r.failed).count();
        let scored: Vec<&ItemMetrics> = per_item.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let non_toxic = scored.iter().filter(|m| m.non_toxic).count();
        let ratios: Vec<f64> = scored.iter().map(|m| m.ppl_ratio).collect();
        Ok(Self {
            acc_percent: 100.0 * non_toxic as f64 / n_inputs as f64,
            mean_toxicity_score: mean(scored.iter().map(|m| m.oracle_p_toxic)),
            sparsity_percent: mean(scored.iter().map(|m| m.sparsity_percent)),
            content_preservation_percent: mean(scored.iter().map(|m| m.content_preservation_percent)),
            delta_ppl_median: median(&ratios).unwrap_or(f64::NAN),
            n_inputs,
            n_success: n_inputs - n_failed,
            n_failed,
            per_item,
        })
    }

    /// Aligned table in the order dPPL, %CP, %S, %ACC, SCORE.
    pub fn table(&self, label: &str) -> String {
        let mut out = String::new();
        let label_width = label.len().max(6);
        let _ = writeln!(
            out,
            "{:<w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
            "method", "dPPL", "%CP", "%S", "%ACC", "SCORE",
            w = label_width
        );
        let _ = writeln!(
            out,
            "{:<w$}  {:>8.2}  {:>8.1}  {:>8.1}  {:>8.1}  {:>8.2}",
            label,
            self.delta_ppl_median,
            self.content_preservation_percent,
            self.sparsity_percent,
            self.acc_percent,
            self.mean_toxicity_score,
            w = label_width
        );
        let _ = writeln!(out, "inputs: {}  success: {}  failed: {}", self.n_inputs, self.n_success, self.n_failed);
        out
    }
}

/// Scores every item and aggregates; any backend error aborts.
pub fn evaluate<B: BackendSuite + ?Sized>(oracle: &B, items: &[EvalItem]) -> Result<EvaluationReport> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let records = items.iter().map(|i| score_item(oracle, i)).collect::<Result<Vec<_>>>()?;
    EvaluationReport::aggregate(records)
}

//! Target-then-replace counterfactual search and CFI-guided refinement.
//!
//! The search walks positions in importance order. Expanding a node at its
//! target position yields one child per infill candidate plus a "skip" child
//! that leaves the position untouched. Each wave expands the `beam_width`
//! lowest-cost open nodes; unexpanded nodes stay open. The first wave that
//! produces a child the steering classifier calls non-toxic ends the search,
//! returning the cheapest such child.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::attribution::{cfi, ImportanceVector};
use crate::backend::{cosine, semantic_distance, BackendSuite};
use crate::error::{Error, Result};
use crate::text::{diff, is_clean_token, EditSet, TokenText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Weight of the semantic distance in the cost.
    pub alpha: f64,
    pub beam_width: usize,
    /// Infill candidates requested per masked position.
    pub top_k_candidates: usize,
    /// Edit budget as a fraction of the token count (rounded up).
    pub max_edit_fraction: f64,
    pub max_expansions: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beam_width: 4,
            top_k_candidates: 15,
            max_edit_fraction: 0.5,
            max_expansions: 1000,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be a finite non-negative number");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be positive");
        }
        if self.top_k_candidates == 0 {
            return bad("top_k_candidates must be positive");
        }
        if !(self.max_edit_fraction > 0.0 && self.max_edit_fraction <= 1.0) {
            return bad("max_edit_fraction must be in (0, 1]");
        }
        if self.max_expansions == 0 {
            return bad("max_expansions must be positive");
        }
        Ok(())
    }

    /// `ceil(max_edit_fraction * d)`, at least one.
    pub fn edit_budget(&self, d: usize) -> usize {
        (libm::ceil(self.max_edit_fraction * d as f64) as usize).max(1)
    }
}

/// `-(p_nontoxic - alpha * (1 - similarity) / 2)`.
pub fn cost_from(p_nontoxic: f64, similarity: f64, alpha: f64) -> f64 {
    -(p_nontoxic - alpha * semantic_distance(similarity))
}

/// Cost of candidate `z` relative to the original `x`; lower is better.
pub fn cost<B: BackendSuite + ?Sized>(suite: &B, z: &TokenText, x: &TokenText, alpha: f64) -> Result<f64> {
    let p = suite.classify(z)?.p_nontoxic;
    let s = cosine(&suite.embed(z)?, &suite.embed(x)?);
    Ok(cost_from(p, s, alpha))
}

/// A search state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamNode {
    pub text: TokenText,
    /// Edited positions, ascending.
    pub edited: Vec<usize>,
    /// Index into the position ranking of the next target.
    pub rank_cursor: usize,
    pub cost: f64,
    pub p_nontoxic: f64,
    pub sim: f64,
}

impl BeamNode {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.text.tokens().cmp(other.text.tokens()))
            .then_with(|| self.rank_cursor.cmp(&other.rank_cursor))
    }
}

struct Ordered(BeamNode);

impl PartialEq for Ordered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ordered {}
impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// Best child scored in one wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Expansions performed when the entry was recorded.
    pub expansion: usize,
    pub cost: f64,
    pub p_nontoxic: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub original: TokenText,
    pub counterfactual: TokenText,
    pub edits: EditSet,
    pub cost: f64,
    pub p_nontoxic: f64,
    pub similarity: f64,
    pub refined: bool,
    pub expansions: usize,
    pub trace: Vec<TraceEntry>,
}

struct Outcome {
    node: BeamNode,
    trace: Vec<TraceEntry>,
    expansions: usize,
}

struct Beam<'a, B: ?Sized> {
    suite: &'a B,
    x: &'a TokenText,
    x_embedding: Vec<f64>,
    config: &'a SearchConfig,
    budget: usize,
}

impl<'a, B: BackendSuite + ?Sized> Beam<'a, B> {
    fn new(suite: &'a B, x: &'a TokenText, config: &'a SearchConfig) -> Result<Self> {
        Ok(Self {
            suite,
            x,
            x_embedding: suite.embed(x)?,
            config,
            budget: config.edit_budget(x.len()),
        })
    }

    fn root(&self) -> Result<BeamNode> {
        let p = self.suite.classify(self.x)?.p_nontoxic;
        Ok(BeamNode {
            text: self.x.clone(),
            edited: Vec::new(),
            rank_cursor: 0,
            cost: cost_from(p, 1.0, self.config.alpha),
            p_nontoxic: p,
            sim: 1.0,
        })
    }

    /// Runs waves over `ranking`; `pool(node, position)` lists substitutions
    /// to try at `position`, never including the original token.
    fn run<F>(&self, ranking: &[usize], mut pool: F) -> Result<Outcome>
    where
        F: FnMut(&BeamNode, usize) -> Result<Vec<String>>,
    {
        let root = self.root()?;
        let mut trace = alloc::vec![TraceEntry {
            expansion: 0,
            cost: root.cost,
            p_nontoxic: root.p_nontoxic,
            similarity: root.sim,
        }];
        let mut open = BinaryHeap::new();
        open.push(Reverse(Ordered(root)));
        let mut expansions = 0;

        while expansions < self.config.max_expansions {
            let mut pending: Vec<BeamNode> = Vec::new();
            let mut skips: Vec<BeamNode> = Vec::new();
            for _ in 0..self.config.beam_width {
                if expansions >= self.config.max_expansions {
                    break;
                }
                let Some(Reverse(Ordered(node))) = open.pop() else { break };
                expansions += 1;
                let mut cursor = node.rank_cursor;
                while cursor < ranking.len() && node.edited.contains(&ranking[cursor]) {
                    cursor += 1;
                }
                if cursor >= ranking.len() {
                    continue;
                }
                let position = ranking[cursor];
                if node.edited.len() < self.budget {
                    for token in pool(&node, position)? {
                        let mut edited = node.edited.clone();
                        let at = edited.partition_point(|&p| p < position);
                        edited.insert(at, position);
                        pending.push(BeamNode {
                            text: node.text.with_token(position, &token)?,
                            edited,
                            rank_cursor: cursor + 1,
                            cost: 0.0,
                            p_nontoxic: 0.0,
                            sim: 0.0,
                        });
                    }
                }
                skips.push(BeamNode { rank_cursor: cursor + 1, ..node });
            }
            if pending.is_empty() && skips.is_empty() && open.is_empty() {
                break;
            }
            self.score(&mut pending)?;

            if let Some(best) = pending.iter().min_by(|a, b| a.key_cmp(b)) {
                trace.push(TraceEntry {
                    expansion: expansions,
                    cost: best.cost,
                    p_nontoxic: best.p_nontoxic,
                    similarity: best.sim,
                });
            }
            let mut success: Option<BeamNode> = None;
            for child in pending {
                if child.p_nontoxic > 0.5 {
                    if success.as_ref().is_none_or(|s| child.key_cmp(s) == Ordering::Less) {
                        success = Some(child);
                    }
                } else if child.rank_cursor < ranking.len() && child.edited.len() < self.budget {
                    open.push(Reverse(Ordered(child)));
                }
            }
            if let Some(node) = success {
                return Ok(Outcome { node, trace, expansions });
            }
            for child in skips {
                if child.rank_cursor < ranking.len() {
                    open.push(Reverse(Ordered(child)));
                }
            }
            if open.is_empty() {
                break;
            }
        }
        Err(Error::NoCounterfactualFound { expansions })
    }

    fn score(&self, nodes: &mut [BeamNode]) -> Result<()> {
        if nodes.is_empty() {
            return Ok(());
        }
        let texts: Vec<TokenText> = nodes.iter().map(|n| n.text.clone()).collect();
        let probs = self.suite.classify_batch(&texts)?;
        let vectors = self.suite.embed_batch(&texts)?;
        if probs.len() != nodes.len() || vectors.len() != nodes.len() {
            return Err(Error::LengthMismatch { left: nodes.len(), right: probs.len().min(vectors.len()) });
        }
        for ((node, p), v) in nodes.iter_mut().zip(probs).zip(vectors) {
            node.p_nontoxic = p.p_nontoxic;
            node.sim = cosine(&v, &self.x_embedding);
            node.cost = cost_from(node.p_nontoxic, node.sim, self.config.alpha);
        }
        Ok(())
    }

    fn result(&self, outcome: Outcome, refined: bool) -> Result<CounterfactualResult> {
        let Outcome { node, trace, expansions } = outcome;
        Ok(CounterfactualResult {
            original: self.x.clone(),
            edits: diff(self.x, &node.text)?,
            counterfactual: node.text,
            cost: node.cost,
            p_nontoxic: node.p_nontoxic,
            similarity: node.sim,
            refined,
            expansions,
            trace,
        })
    }
}

/// Infill candidates usable at `position`: single clean tokens other than the
/// original and the mask token, first occurrence only.
fn infill_pool<B: BackendSuite + ?Sized>(
    suite: &B,
    node: &BeamNode,
    position: usize,
    original: &str,
    k: usize,
    out: &mut Vec<String>,
) -> Result<()> {
    let mask = suite.mask_token();
    for c in suite.fill_mask(&node.text, position, k)? {
        if c.token != original && c.token != mask && is_clean_token(&c.token) && !out.contains(&c.token) {
            out.push(c.token);
        }
    }
    Ok(())
}

/// Searches for a low-cost edit of the toxic text `x` that the steering
/// classifier labels non-toxic, targeting positions in `importance` order.
pub fn generate_cf<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    importance: &ImportanceVector,
    config: &SearchConfig,
) -> Result<CounterfactualResult> {
    config.validate()?;
    if importance.len() != x.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: importance.len() });
    }
    let p_toxic = suite.classify(x)?.p_toxic;
    if p_toxic <= 0.5 {
        return Err(Error::InputNotToxic { p_toxic });
    }
    let beam = Beam::new(suite, x, config)?;
    let ranking = importance.ranking();
    let outcome = beam.run(&ranking, |node, position| {
        let mut out = Vec::new();
        infill_pool(suite, node, position, &x.tokens()[position], config.top_k_candidates, &mut out)?;
        Ok(out)
    })?;
    beam.result(outcome, false)
}

/// Re-runs the search over the edited positions of `raw`, ordered by
/// counterfactual feature importance. At each position the pool is the raw
/// counterfactual's token, fresh infill candidates, and (through the skip
/// child) the original token. The refined result replaces `raw` only if it has
/// fewer edits, or as many edits at a strictly lower cost.
///
/// Counterfactuals with fewer than two edits are returned unchanged.
pub fn refine<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    raw: &CounterfactualResult,
    config: &SearchConfig,
    steps: usize,
) -> Result<CounterfactualResult> {
    config.validate()?;
    let unchanged = || CounterfactualResult { refined: false, ..raw.clone() };
    if raw.edits.len() < 2 {
        return Ok(unchanged());
    }
    if raw.counterfactual.len() != x.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: raw.counterfactual.len() });
    }
    let importance = cfi(suite, x, &raw.counterfactual, steps)?;
    let mut ranking: Vec<usize> = raw.edits.positions().collect();
    ranking.sort_by(|&a, &b| importance.scores[b].total_cmp(&importance.scores[a]).then(a.cmp(&b)));

    let beam = Beam::new(suite, x, config)?;
    let outcome = beam.run(&ranking, |node, position| {
        let original = &x.tokens()[position];
        let mut out = alloc::vec![raw.counterfactual.tokens()[position].clone()];
        infill_pool(suite, node, position, original, config.top_k_candidates, &mut out)?;
        Ok(out)
    });
    let candidate = match outcome {
        Ok(o) => beam.result(o, true)?,
        Err(Error::NoCounterfactualFound { .. }) => return Ok(unchanged()),
        Err(e) => return Err(e),
    };
    let better = candidate.edits.len() < raw.edits.len()
        || (candidate.edits.len() == raw.edits.len() && candidate.cost < raw.cost);
    if candidate.p_nontoxic > 0.5 && better {
        Ok(candidate)
    } else {
        Ok(unchanged())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{integrated_gradients, Method};
    use crate::backend::toy::parse_replacements;
    use crate::backend::{BaselineSpec, ToyBackend, ToyLexicon};
    use crate::text::tokenize;
    use alloc::vec;

    fn suite(weights: &[(&str, f64)], bias: f64, table: &str) -> ToyBackend {
        let lexicon = ToyLexicon::new(weights.iter().map(|(t, w)| ((*t).into(), *w)), bias, "[MASK]").unwrap();
        ToyBackend::new(lexicon)
            .with_replacements(parse_replacements(table).unwrap())
            .with_fallback(Vec::new())
    }

    fn t(s: &str) -> TokenText {
        tokenize(s).unwrap()
    }

    #[test]
    fn defaults() {
        let c = SearchConfig::default();
        assert_eq!((c.alpha, c.beam_width, c.top_k_candidates), (0.3, 4, 15));
        assert_eq!((c.max_edit_fraction, c.max_expansions), (0.5, 1000));
        assert_eq!(c.edit_budget(3), 2);
        assert_eq!(c.edit_budget(1), 1);
        assert!(SearchConfig { beam_width: 0, ..c.clone() }.validate().is_err());
        assert!(SearchConfig { max_edit_fraction: 0.0, ..c.clone() }.validate().is_err());
        assert!(SearchConfig { alpha: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn cost_arithmetic() {
        assert!((cost_from(0.9, 0.8, 0.3) - -0.87).abs() < 1e-12);
        assert_eq!(cost_from(0.4, 1.0, 0.3), -0.4);
        assert_eq!(cost_from(0.4, 0.2, 0.0), -0.4);
        let s = suite(&[("hate", 2.0)], -1.0, "");
        let x = t("i hate cats");
        let p = s.classify(&x).unwrap().p_nontoxic;
        assert!((cost(&s, &x, &x, 0.3).unwrap() + p).abs() < 1e-12);
    }

    #[test]
    fn flips_single_token() {
        let s = suite(&[("hate", 2.0)], -1.0, "hate\tlike:0.9,dislike:0.6\n");
        let x = t("i hate cats");
        let imp = integrated_gradients(&s, &x, 8, &BaselineSpec::Mask).unwrap();
        let r = generate_cf(&s, &x, &imp, &SearchConfig::default()).unwrap();
        // Brute force over every single substitution from the same pool.
        let best = ["like", "dislike"]
            .iter()
            .map(|c| x.with_token(1, c).unwrap())
            .filter(|z| s.classify(z).unwrap().p_nontoxic > 0.5)
            .min_by(|a, b| cost(&s, a, &x, 0.3).unwrap().total_cmp(&cost(&s, b, &x, 0.3).unwrap()))
            .unwrap();
        assert_eq!(r.counterfactual, best);
        assert_eq!(r.edits.len(), 1);
        assert!((r.p_nontoxic - 0.731_058_578_630_004_9).abs() < 1e-9);
        assert!(!r.refined);

        // With "dislike" carrying some toxicity only "like" is optimal.
        let s = suite(&[("hate", 2.0), ("dislike", 0.5)], -1.0, "hate\tlike:0.9,dislike:0.6\n");
        let r = generate_cf(&s, &x, &imp, &SearchConfig::default()).unwrap();
        assert_eq!(r.counterfactual.raw(), "i like cats");
    }

    #[test]
    fn rejects_non_toxic_input() {
        let s = suite(&[("hate", 2.0)], -1.0, "");
        let x = t("i like cats");
        let imp = ImportanceVector::new(vec![0.0; 3], Method::Ig);
        assert!(matches!(
            generate_cf(&s, &x, &imp, &SearchConfig::default()),
            Err(Error::InputNotToxic { .. })
        ));
    }

    #[test]
    fn no_candidates_means_no_counterfactual() {
        let s = suite(&[], 1.0, "");
        let x = t("just some words");
        let imp = ImportanceVector::new(vec![0.0; 3], Method::Ig);
        assert!(matches!(
            generate_cf(&s, &x, &imp, &SearchConfig::default()),
            Err(Error::NoCounterfactualFound { .. })
        ));
    }

    #[test]
    fn expansion_budget_is_respected() {
        let s = suite(&[("bad", 5.0)], -1.0, "a\tb:1\nb\tc:1\nc\td:1\n");
        let x = t("a b c d e f bad");
        let imp = ImportanceVector::new(vec![7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], Method::Ig);
        let config = SearchConfig { max_expansions: 3, ..SearchConfig::default() };
        assert_eq!(
            generate_cf(&s, &x, &imp, &config),
            Err(Error::NoCounterfactualFound { expansions: 3 })
        );
    }

    #[test]
    fn refine_reverts_superfluous_edit() {
        let s = suite(&[("f**k", 3.0)], -1.0, "f**k\theck:0.8\nyou\tthey:0.8\n");
        let x = t("f**k you");
        let cf = t("heck they");
        let raw = CounterfactualResult {
            original: x.clone(),
            edits: diff(&x, &cf).unwrap(),
            cost: cost(&s, &cf, &x, 0.3).unwrap(),
            p_nontoxic: s.classify(&cf).unwrap().p_nontoxic,
            similarity: crate::backend::similarity(&s, &cf, &x).unwrap(),
            counterfactual: cf,
            refined: false,
            expansions: 0,
            trace: Vec::new(),
        };
        let config = SearchConfig { max_edit_fraction: 1.0, ..SearchConfig::default() };
        let r = refine(&s, &x, &raw, &config, 8).unwrap();
        assert!(r.refined);
        assert_eq!(r.counterfactual.raw(), "heck you");
        assert_eq!(r.edits.len(), 1);
    }

    #[test]
    fn refine_skips_single_edit() {
        let s = suite(&[("hate", 2.0)], -1.0, "hate\tlike:0.9\n");
        let x = t("i hate cats");
        let imp = integrated_gradients(&s, &x, 1, &BaselineSpec::Mask).unwrap();
        let raw = generate_cf(&s, &x, &imp, &SearchConfig::default()).unwrap();
        let r = refine(&s, &x, &raw, &SearchConfig::default(), 8).unwrap();
        assert_eq!(r, raw);
    }
}

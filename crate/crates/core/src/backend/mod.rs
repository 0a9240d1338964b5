//! Model capabilities consumed by the engine.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Capability, Error, Result};
use crate::text::TokenText;

pub mod toy;

pub use toy::{ToyBackend, ToyLexicon, UnigramModel};

/// Binary class probabilities from the toxicity classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxicityScore {
    pub p_toxic: f64,
    pub p_nontoxic: f64,
}

impl ToxicityScore {
    pub fn from_p_toxic(p_toxic: f64) -> Self {
        Self { p_toxic, p_nontoxic: 1.0 - p_toxic }
    }

    /// Rescales a (non-toxic, toxic) pair so it sums to one.
    pub fn renormalized(p_nontoxic: f64, p_toxic: f64) -> Option<Self> {
        let sum = p_nontoxic + p_toxic;
        let valid = |p: f64| p.is_finite() && p >= 0.0;
        if !valid(p_nontoxic) || !valid(p_toxic) || sum <= 0.0 {
            return None;
        }
        Some(Self::from_p_toxic(p_toxic / sum))
    }

    /// Toxic iff `p_toxic > 0.5`.
    pub fn is_toxic(&self) -> bool {
        self.p_toxic > 0.5
    }
}

/// A replacement proposed for a masked position; higher score is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillCandidate {
    pub token: String,
    pub score: f64,
}

/// Sorts by score descending, ties by token ascending.
pub fn sort_candidates(candidates: &mut [InfillCandidate]) {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.token.cmp(&b.token)));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub gradient_saliency: bool,
    pub attention: bool,
}

impl Capabilities {
    pub const ALL: Self = Self { gradient_saliency: true, attention: true };

    pub fn has(&self, capability: Capability) -> bool {
        match capability {
            Capability::GradientSaliency => self.gradient_saliency,
            Capability::Attention => self.attention,
        }
    }

    pub fn require(&self, capability: Capability) -> Result<()> {
        if self.has(capability) {
            Ok(())
        } else {
            Err(Error::CapabilityUnavailable(capability))
        }
    }
}

/// Reference point of a gradient path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSpec {
    /// Every token replaced by the backend's mask token.
    Mask,
    /// Another text of the same length, e.g. the original instance for CFI.
    Tokens(Vec<String>),
}

/// The bundle of model capabilities: a binary toxicity classifier, a mask
/// infiller, a sentence embedder and a perplexity scorer, plus the optional
/// gradient and attention probes.
///
/// Implementations must be usable concurrently from several workers.
pub trait BackendSuite: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Token substituted for absent positions (KernelSHAP coalitions, mask baselines).
    fn mask_token(&self) -> &str;

    fn classify(&self, text: &TokenText) -> Result<ToxicityScore>;

    fn classify_batch(&self, texts: &[TokenText]) -> Result<Vec<ToxicityScore>> {
        texts.iter().map(|t| self.classify(t)).collect()
    }

    /// At most `k` candidates for `position`, sorted per [`sort_candidates`],
    /// never containing the mask token.
    fn fill_mask(&self, text: &TokenText, position: usize, k: usize) -> Result<Vec<InfillCandidate>>;

    /// Unit-length sentence embedding.
    fn embed(&self, text: &TokenText) -> Result<Vec<f64>>;

    fn embed_batch(&self, texts: &[TokenText]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    fn perplexity(&self, text: &TokenText) -> Result<f64>;

    /// Per-token `(dF/de_i at the alpha-interpolated point) . (e_i - baseline_i)`
    /// where `F` is the non-toxic logit.
    fn gradient_saliency(
        &self,
        _text: &TokenText,
        _alpha: f64,
        _baseline: &BaselineSpec,
    ) -> Result<Vec<f64>> {
        Err(Error::CapabilityUnavailable(Capability::GradientSaliency))
    }

    /// Last-layer attention from the CLS position, one row of `d` weights per head.
    fn attention_weights(&self, _text: &TokenText) -> Result<Vec<Vec<f64>>> {
        Err(Error::CapabilityUnavailable(Capability::Attention))
    }
}

impl<B: BackendSuite + ?Sized> BackendSuite for &B {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn mask_token(&self) -> &str {
        (**self).mask_token()
    }
    fn classify(&self, text: &TokenText) -> Result<ToxicityScore> {
        (**self).classify(text)
    }
    fn classify_batch(&self, texts: &[TokenText]) -> Result<Vec<ToxicityScore>> {
        (**self).classify_batch(texts)
    }
    fn fill_mask(&self, text: &TokenText, position: usize, k: usize) -> Result<Vec<InfillCandidate>> {
        (**self).fill_mask(text, position, k)
    }
    fn embed(&self, text: &TokenText) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[TokenText]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_batch(texts)
    }
    fn perplexity(&self, text: &TokenText) -> Result<f64> {
        (**self).perplexity(text)
    }
    fn gradient_saliency(&self, text: &TokenText, alpha: f64, baseline: &BaselineSpec) -> Result<Vec<f64>> {
        (**self).gradient_saliency(text, alpha, baseline)
    }
    fn attention_weights(&self, text: &TokenText) -> Result<Vec<Vec<f64>>> {
        (**self).attention_weights(text)
    }
}

impl<B: BackendSuite + ?Sized> BackendSuite for alloc::boxed::Box<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn mask_token(&self) -> &str {
        (**self).mask_token()
    }
    fn classify(&self, text: &TokenText) -> Result<ToxicityScore> {
        (**self).classify(text)
    }
    fn classify_batch(&self, texts: &[TokenText]) -> Result<Vec<ToxicityScore>> {
        (**self).classify_batch(texts)
    }
    fn fill_mask(&self, text: &TokenText, position: usize, k: usize) -> Result<Vec<InfillCandidate>> {
        (**self).fill_mask(text, position, k)
    }
    fn embed(&self, text: &TokenText) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[TokenText]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_batch(texts)
    }
    fn perplexity(&self, text: &TokenText) -> Result<f64> {
        (**self).perplexity(text)
    }
    fn gradient_saliency(&self, text: &TokenText, alpha: f64, baseline: &BaselineSpec) -> Result<Vec<f64>> {
        (**self).gradient_saliency(text, alpha, baseline)
    }
    fn attention_weights(&self, text: &TokenText) -> Result<Vec<Vec<f64>>> {
        (**self).attention_weights(text)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of the two sentence embeddings.
pub fn similarity<B: BackendSuite + ?Sized>(suite: &B, a: &TokenText, b: &TokenText) -> Result<f64> {
    Ok(cosine(&suite.embed(a)?, &suite.embed(b)?))
}

/// `(1 - s) / 2`, mapping a cosine similarity onto `[0, 1]`.
pub fn semantic_distance(similarity: f64) -> f64 {
    0.5 * (1.0 - similarity)
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_formula() {
        assert_eq!(semantic_distance(1.0), 0.0);
        assert_eq!(semantic_distance(-1.0), 1.0);
        assert!((semantic_distance(0.8) - 0.1).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn renormalization() {
        let s = ToxicityScore::renormalized(0.3, 0.9).unwrap();
        assert!((s.p_toxic - 0.75).abs() < 1e-12);
        assert!((s.p_toxic + s.p_nontoxic - 1.0).abs() < 1e-12);
        assert!(ToxicityScore::renormalized(-0.1, 0.5).is_none());
        assert!(ToxicityScore::renormalized(0.0, 0.0).is_none());
        assert!(ToxicityScore::renormalized(f64::NAN, 0.5).is_none());
    }

    #[test]
    fn candidate_order() {
        let c = |t: &str, s: f64| InfillCandidate { token: t.into(), score: s };
        let mut v = alloc::vec![c("b", 0.5), c("z", 0.9), c("a", 0.5)];
        sort_candidates(&mut v);
        let order: Vec<&str> = v.iter().map(|c| c.token.as_str()).collect();
        assert_eq!(order, ["z", "a", "b"]);
    }
}

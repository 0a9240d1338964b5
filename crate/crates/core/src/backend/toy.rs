//! Deterministic toy backends.
//!
//! The classifier is logistic over a sum of per-token weights, the infiller is
//! a replacement table with a global fallback list, embeddings are hashed
//! pseudo-random unit vectors and perplexity comes from a Laplace-smoothed
//! unigram model. All lookups are on the lowercased token.
//!
//! Data files are UTF-8, one record per line. Lexicon, fallback and unigram
//! files use `token<TAB>value`; the replacement table uses
//! `token<TAB>candidate:score,candidate:score,...`. Blank lines and lines
//! starting with `#` are ignored.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{logistic, sort_candidates, BackendSuite, BaselineSpec, Capabilities, InfillCandidate, ToxicityScore};
use crate::error::{Capability, Error, Result};
use crate::hash::fnv1a;
use crate::text::TokenText;

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";
pub const DEFAULT_BIAS: f64 = -1.0;
pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_EMBED_SEED: u64 = 0x005e_ed0f_70c5;

pub const STEERING_LEXICON: &str = include_str!("../../data/steering_lexicon.tsv");
pub const ORACLE_LEXICON: &str = include_str!("../../data/oracle_lexicon.tsv");
pub const REPLACEMENTS: &str = include_str!("../../data/replacements.tsv");
pub const FALLBACK: &str = include_str!("../../data/fallback.tsv");
pub const UNIGRAMS: &str = include_str!("../../data/unigrams.tsv");

fn records(data: &str) -> impl Iterator<Item = (usize, &str)> {
    data.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn invalid(line: usize, message: impl Into<String>) -> Error {
    Error::InvalidData { line, message: message.into() }
}

fn parse_value(line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| invalid(line, alloc::format!("bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(invalid(line, "non-finite value"));
    }
    Ok(v)
}

/// Parses `token<TAB>value` records.
pub fn parse_pairs(data: &str) -> Result<Vec<(String, f64)>> {
    records(data)
        .map(|(n, line)| {
            let (token, value) = line.split_once('\t').ok_or_else(|| invalid(n, "expected token<TAB>value"))?;
            if token.is_empty() {
                return Err(invalid(n, "empty token"));
            }
            Ok((token.to_lowercase(), parse_value(n, value)?))
        })
        .collect()
}

/// Parses `token<TAB>candidate:score,...` records.
pub fn parse_replacements(data: &str) -> Result<BTreeMap<String, Vec<InfillCandidate>>> {
    let mut table = BTreeMap::new();
    for (n, line) in records(data) {
        let (token, list) = line.split_once('\t').ok_or_else(|| invalid(n, "expected token<TAB>candidates"))?;
        let mut candidates = Vec::new();
        for item in list.split(',').filter(|s| !s.trim().is_empty()) {
            let (cand, score) = item.trim().rsplit_once(':').ok_or_else(|| invalid(n, "expected candidate:score"))?;
            candidates.push(InfillCandidate { token: cand.to_string(), score: parse_value(n, score)? });
        }
        sort_candidates(&mut candidates);
        table.insert(token.to_lowercase(), candidates);
    }
    Ok(table)
}

/// Token weights of the toy linear-logistic classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLexicon {
    weights: BTreeMap<String, f64>,
    bias: f64,
    mask_token: String,
}

impl ToyLexicon {
    pub fn new(
        weights: impl IntoIterator<Item = (String, f64)>,
        bias: f64,
        mask_token: impl Into<String>,
    ) -> Result<Self> {
        let mask_token = mask_token.into();
        let mask_key = mask_token.to_lowercase();
        let mut map = BTreeMap::new();
        for (token, w) in weights {
            let key = token.to_lowercase();
            if key == mask_key {
                if w != 0.0 {
                    return Err(invalid(0, "the mask token must have weight 0"));
                }
                continue;
            }
            map.insert(key, w);
        }
        Ok(Self { weights: map, bias, mask_token })
    }

    pub fn parse(data: &str, bias: f64) -> Result<Self> {
        Self::new(parse_pairs(data)?, bias, DEFAULT_MASK_TOKEN)
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(&token.to_lowercase()).copied().unwrap_or(0.0)
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    /// `bias + sum of token weights`; the toxic-class logit.
    pub fn logit<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        self.bias + tokens.iter().map(|t| self.weight(t.as_ref())).sum::<f64>()
    }
}

/// Laplace-smoothed unigram language model: `p(t) = (count(t) + 1) / (N + V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramModel {
    counts: BTreeMap<String, f64>,
    total: f64,
}

impl UnigramModel {
    pub fn new(counts: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (token, c) in counts {
            if c < 0.0 {
                return Err(invalid(0, alloc::format!("negative count for {token:?}")));
            }
            *map.entry(token.to_lowercase()).or_insert(0.0) += c;
        }
        if map.is_empty() {
            return Err(invalid(0, "unigram table is empty"));
        }
        let total = map.values().sum();
        Ok(Self { counts: map, total })
    }

    pub fn parse(data: &str) -> Result<Self> {
        Self::new(parse_pairs(data)?)
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn probability(&self, token: &str) -> f64 {
        let c = self.counts.get(&token.to_lowercase()).copied().unwrap_or(0.0);
        (c + 1.0) / (self.total + self.counts.len() as f64)
    }

    pub fn perplexity<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let nll: f64 = tokens.iter().map(|t| -libm::log(self.probability(t.as_ref()))).sum();
        libm::exp(nll / tokens.len() as f64)
    }
}

/// A complete offline backend suite.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    lexicon: ToyLexicon,
    replacements: BTreeMap<String, Vec<InfillCandidate>>,
    fallback: Vec<InfillCandidate>,
    unigrams: UnigramModel,
    embed_dim: usize,
    embed_seed: u64,
    /// Token -> replacement-table rows it appears in; `None` keeps token
    /// vectors independent.
    neighbourhoods: Option<BTreeMap<String, Vec<String>>>,
    capabilities: Capabilities,
}

/// Weight of a token's own direction against each shared row direction.
const OWN_WEIGHT: f64 = 0.5;

impl ToyBackend {
    /// A suite over `lexicon` with the shipped infill tables and unigram model.
    pub fn new(lexicon: ToyLexicon) -> Self {
        Self {
            lexicon,
            replacements: parse_replacements(REPLACEMENTS).expect("shipped replacement table"),
            fallback: parse_pairs(FALLBACK)
                .expect("shipped fallback list")
                .into_iter()
                .map(|(token, score)| InfillCandidate { token, score })
                .collect(),
            unigrams: UnigramModel::parse(UNIGRAMS).expect("shipped unigram table"),
            embed_dim: DEFAULT_EMBED_DIM,
            embed_seed: DEFAULT_EMBED_SEED,
            neighbourhoods: None,
            capabilities: Capabilities::ALL,
        }
        .sorted_fallback()
    }

    /// Shipped steering classifier.
    pub fn steering() -> Self {
        Self::new(ToyLexicon::parse(STEERING_LEXICON, DEFAULT_BIAS).expect("shipped steering lexicon"))
    }

    /// Shipped evaluation classifier, with weights independent of the steering
    /// one and neighbourhood-aware embeddings.
    pub fn oracle() -> Self {
        Self::new(ToyLexicon::parse(ORACLE_LEXICON, DEFAULT_BIAS).expect("shipped oracle lexicon"))
            .with_neighbourhood_embedding()
    }

    fn sorted_fallback(mut self) -> Self {
        sort_candidates(&mut self.fallback);
        self
    }

    pub fn with_replacements(mut self, table: BTreeMap<String, Vec<InfillCandidate>>) -> Self {
        self.replacements = table;
        if self.neighbourhoods.is_some() {
            self.neighbourhoods = Some(self.build_neighbourhoods());
        }
        self
    }

    /// Tokens sharing a replacement-table row (the head and its candidates)
    /// get a common component in their vectors, so substituting a listed
    /// neighbour keeps a sentence closer than deleting the word would.
    pub fn with_neighbourhood_embedding(mut self) -> Self {
        self.neighbourhoods = Some(self.build_neighbourhoods());
        self
    }

    fn build_neighbourhoods(&self) -> BTreeMap<String, Vec<String>> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (head, candidates) in &self.replacements {
            for token in core::iter::once(head).chain(candidates.iter().map(|c| &c.token)) {
                let rows = map.entry(token.to_lowercase()).or_default();
                if !rows.contains(head) {
                    rows.push(head.clone());
                }
            }
        }
        map
    }

    pub fn with_fallback(mut self, fallback: Vec<InfillCandidate>) -> Self {
        self.fallback = fallback;
        self.sorted_fallback()
    }

    pub fn with_unigrams(mut self, unigrams: UnigramModel) -> Self {
        self.unigrams = unigrams;
        self
    }

    pub fn with_embedding(mut self, dim: usize, seed: u64) -> Self {
        self.embed_dim = dim.max(1);
        self.embed_seed = seed;
        self
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    pub fn lexicon(&self) -> &ToyLexicon {
        &self.lexicon
    }

    pub fn unigrams(&self) -> &UnigramModel {
        &self.unigrams
    }

    /// Deterministic pseudo-random unit vector for one token.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let token = token.to_lowercase();
        let mut v = self.unit_vector(&token);
        if let Some(rows) = self.neighbourhoods.as_ref().and_then(|n| n.get(&token)) {
            v.iter_mut().for_each(|x| *x *= OWN_WEIGHT);
            for head in rows {
                let shared = self.unit_vector(&alloc::format!("\u{1}row:{head}"));
                v.iter_mut().zip(shared).for_each(|(x, s)| *x += s);
            }
            normalize(&mut v);
        }
        v
    }

    fn unit_vector(&self, key: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.embed_seed ^ fnv1a(key));
        let mut v: Vec<f64> = (0..self.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    fn candidates_for(&self, token: &str) -> &[InfillCandidate] {
        self.replacements.get(&token.to_lowercase()).map_or(&self.fallback[..], Vec::as_slice)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl BackendSuite for ToyBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn mask_token(&self) -> &str {
        self.lexicon.mask_token()
    }

    fn classify(&self, text: &TokenText) -> Result<ToxicityScore> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(ToxicityScore::from_p_toxic(logistic(self.lexicon.logit(text.tokens()))))
    }

    fn fill_mask(&self, text: &TokenText, position: usize, k: usize) -> Result<Vec<InfillCandidate>> {
        let original = text.token(position)?;
        let mask = self.mask_token();
        Ok(self
            .candidates_for(original)
            .iter()
            .filter(|c| c.token != mask)
            .take(k)
            .cloned()
            .collect())
    }

    fn embed(&self, text: &TokenText) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut sum = alloc::vec![0.0; self.embed_dim];
        for token in text.tokens() {
            for (s, x) in sum.iter_mut().zip(self.token_vector(token)) {
                *s += x;
            }
        }
        let n = text.len() as f64;
        sum.iter_mut().for_each(|x| *x /= n);
        normalize(&mut sum);
        Ok(sum)
    }

    fn perplexity(&self, text: &TokenText) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(self.unigrams.perplexity(text.tokens()))
    }

    /// The toy model is linear in token presence, so the value does not depend
    /// on `alpha`: it is the non-toxic logit contribution of the token minus
    /// that of the baseline token, `-(w(t_i) - w(b_i))`.
    fn gradient_saliency(&self, text: &TokenText, alpha: f64, baseline: &BaselineSpec) -> Result<Vec<f64>> {
        self.capabilities.require(Capability::GradientSaliency)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(alloc::format!("alpha {alpha} outside [0, 1]")));
        }
        let weights = text.tokens().iter().map(|t| self.lexicon.weight(t));
        match baseline {
            BaselineSpec::Mask => Ok(weights.map(|w| -w).collect()),
            BaselineSpec::Tokens(base) => {
                if base.len() != text.len() {
                    return Err(Error::LengthMismatch { left: text.len(), right: base.len() });
                }
                Ok(weights.zip(base).map(|(w, b)| -(w - self.lexicon.weight(b))).collect())
            }
        }
    }

    /// One pseudo-head: `|w_i| / sum_j |w_j|`, uniform when every weight is zero.
    fn attention_weights(&self, text: &TokenText) -> Result<Vec<Vec<f64>>> {
        self.capabilities.require(Capability::Attention)?;
        let abs: Vec<f64> = text.tokens().iter().map(|t| libm::fabs(self.lexicon.weight(t))).collect();
        let total: f64 = abs.iter().sum();
        let row = if total > 0.0 {
            abs.iter().map(|a| a / total).collect()
        } else {
            alloc::vec![1.0 / text.len() as f64; text.len()]
        };
        Ok(alloc::vec![row])
    }
}

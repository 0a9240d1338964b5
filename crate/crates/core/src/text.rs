//! Word-level text representation, edit sets and edit distances.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn is_special_body(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
}

/// Length of a `[UPPER_CASE]` special token (such as `[MASK]`) at the start of `s`.
fn special_prefix(s: &str) -> Option<usize> {
    let body = s.strip_prefix('[')?;
    let end = body.find(']')?;
    is_special_body(&body[..end]).then_some(end + 2)
}

fn special_suffix(s: &str) -> Option<usize> {
    let body = s.strip_suffix(']')?;
    let start = body.rfind('[')?;
    is_special_body(&body[start + 1..]).then_some(s.len() - start)
}

/// Splits one whitespace-free chunk, detaching leading and trailing punctuation
/// marks one character at a time. Interior punctuation stays in the word and
/// bracketed special tokens like `[MASK]` stay whole.
fn split_chunk<'a>(chunk: &'a str, out: &mut Vec<&'a str>) {
    let mut rest = chunk;
    let mut trailing = Vec::new();
    while let Some(c) = rest.chars().next() {
        let n = match special_prefix(rest) {
            Some(n) => n,
            None if is_punct(c) => c.len_utf8(),
            None => break,
        };
        out.push(&rest[..n]);
        rest = &rest[n..];
    }
    while let Some(c) = rest.chars().next_back() {
        let n = match special_suffix(rest) {
            Some(n) => n,
            None if is_punct(c) => c.len_utf8(),
            None => break,
        };
        let at = rest.len() - n;
        trailing.push(&rest[at..]);
        rest = &rest[..at];
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out.extend(trailing.into_iter().rev());
}

fn split(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

/// Whether `token` is a single token under [`tokenize`].
pub fn is_clean_token(token: &str) -> bool {
    let parts = split(token);
    parts.len() == 1 && parts[0] == token
}

fn attaches_left(token: &str) -> bool {
    matches!(token, "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "}")
}

/// Joins tokens back into a string. Closing punctuation is attached to the
/// preceding token; everything else is separated by one space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if i > 0 && !attaches_left(t) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// A word-level token sequence together with its raw string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenText {
    raw: String,
    tokens: Vec<String>,
}

/// Whitespace split with punctuation detached from word edges. Casing is kept.
pub fn tokenize(raw: &str) -> Result<TokenText> {
    let tokens: Vec<String> = split(raw).into_iter().map(ToString::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(TokenText { raw: raw.to_string(), tokens })
}

impl TokenText {
    /// Builds a text from tokens; each must be a clean single token.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(bad) = tokens.iter().find(|t| !is_clean_token(t)) {
            return Err(Error::InvalidToken(bad.clone()));
        }
        Ok(Self { raw: detokenize(&tokens), tokens })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token count `d`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed text; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, position: usize) -> Result<&str> {
        self.tokens
            .get(position)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange { position, len: self.len() })
    }

    /// Copy of this text with the token at `position` substituted.
    pub fn with_token(&self, position: usize, token: &str) -> Result<Self> {
        self.token(position)?;
        if !is_clean_token(token) {
            return Err(Error::InvalidToken(token.to_string()));
        }
        let mut tokens = self.tokens.clone();
        tokens[position] = token.to_string();
        Ok(Self { raw: detokenize(&tokens), tokens })
    }
}

impl fmt::Display for TokenText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// One in-place token substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub position: usize,
    pub original: String,
    pub replacement: String,
}

/// Substitutions with unique, strictly increasing positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditSet {
    edits: Vec<Edit>,
}

impl EditSet {
    /// Validates ordering and that every edit actually changes its token.
    pub fn new(edits: Vec<Edit>) -> Result<Self> {
        for (i, e) in edits.iter().enumerate() {
            if e.original == e.replacement {
                return Err(Error::InvalidData {
                    line: i,
                    message: alloc::format!("edit at position {} does not change the token", e.position),
                });
            }
            if i > 0 && edits[i - 1].position >= e.position {
                return Err(Error::InvalidData {
                    line: i,
                    message: "edit positions must be strictly increasing".to_string(),
                });
            }
        }
        Ok(Self { edits })
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.edits.iter().map(|e| e.position)
    }

    /// Applies the substitutions to `text`. Each edit's original token must match.
    pub fn apply(&self, text: &TokenText) -> Result<TokenText> {
        let mut tokens = text.tokens.clone();
        for e in &self.edits {
            let current = text.token(e.position)?;
            if current != e.original {
                return Err(Error::InvalidData {
                    line: e.position,
                    message: alloc::format!("expected {:?}, found {:?}", e.original, current),
                });
            }
            tokens[e.position] = e.replacement.clone();
        }
        TokenText::from_tokens(tokens)
    }
}

/// Positions where two equal-length texts differ.
pub fn diff(a: &TokenText, b: &TokenText) -> Result<EditSet> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let edits = a
        .tokens
        .iter()
        .zip(&b.tokens)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(position, (x, y))| Edit { position, original: x.clone(), replacement: y.clone() })
        .collect();
    Ok(EditSet { edits })
}

/// Unit-cost insert/delete/substitute distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn word_levenshtein(a: &TokenText, b: &TokenText) -> usize {
    levenshtein(&a.tokens, &b.tokens)
}

/// `100 * (1 - lev(a, b) / max(d_a, d_b))`.
pub fn sparsity_percent(a: &TokenText, b: &TokenText) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 100.0;
    }
    100.0 * (1.0 - word_levenshtein(a, b) as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(s: &str) -> TokenText {
        tokenize(s).unwrap()
    }

    #[test]
    fn tokenize_detaches_edge_punctuation() {
        assert_eq!(t("F**k you.").tokens(), ["F**k", "you", "."]);
        assert_eq!(t("i hate cats").tokens(), ["i", "hate", "cats"]);
        assert_eq!(t("  (wow)!! ").tokens(), ["(", "wow", ")", "!", "!"]);
        assert_eq!(t("don't stop").tokens(), ["don't", "stop"]);
        assert_eq!(t("...").tokens(), [".", ".", "."]);
        assert_eq!(t("i hate cats").len(), 3);
        assert_eq!(t("[MASK] you [MASK].").tokens(), ["[MASK]", "you", "[MASK]", "."]);
        assert_eq!(t("([MASK])").tokens(), ["(", "[MASK]", ")"]);
        assert_eq!(t("[x]").tokens(), ["[", "x", "]"]);
    }

    #[test]
    fn tokenize_rejects_blank() {
        assert_eq!(tokenize(""), Err(Error::EmptyText));
        assert_eq!(tokenize(" \t\n"), Err(Error::EmptyText));
    }

    #[test]
    fn detokenize_attaches_closing_punctuation() {
        let text = TokenText::from_tokens(["heck", "you", "."]).unwrap();
        assert_eq!(text.raw(), "heck you.");
        assert!(TokenText::from_tokens(["heck!"]).is_err());
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(word_levenshtein(&t("you are stupid"), &t("you are silly")), 1);
        assert_eq!(word_levenshtein(&t("a b c"), &t("a b c")), 0);
        // Table by hand: delete "a", insert "d".
        assert_eq!(word_levenshtein(&t("a b c"), &t("b c d")), 2);
        assert_eq!(word_levenshtein(&t("a"), &t("a b c d")), 3);
    }

    #[test]
    fn sparsity_examples() {
        let x = t("you are stupid");
        assert_eq!(sparsity_percent(&x, &x), 100.0);
        let s = sparsity_percent(&x, &t("you are silly"));
        assert!((s - 66.67).abs() < 0.01);
        let a = t("a b c d e f g h i j");
        let b = t("a b X d e f Y h i j");
        assert!((sparsity_percent(&a, &b) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn diff_examples() {
        let d = diff(&t("i hate cats"), &t("i like cats")).unwrap();
        assert_eq!(
            d.edits(),
            [Edit { position: 1, original: "hate".into(), replacement: "like".into() }]
        );
        assert!(diff(&t("i hate cats"), &t("i hate cats")).unwrap().is_empty());
        assert_eq!(
            diff(&t("a b"), &t("a b c")),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn edit_set_validation() {
        let e = |p: usize, o: &str, r: &str| Edit { position: p, original: o.into(), replacement: r.into() };
        assert!(EditSet::new(vec![e(0, "a", "b"), e(2, "c", "d")]).is_ok());
        assert!(EditSet::new(vec![e(2, "a", "b"), e(0, "c", "d")]).is_err());
        assert!(EditSet::new(vec![e(1, "a", "b"), e(1, "c", "d")]).is_err());
        assert!(EditSet::new(vec![e(0, "a", "a")]).is_err());
        let set = EditSet::new(vec![e(5, "a", "b")]).unwrap();
        assert!(matches!(set.apply(&t("a b")), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn with_token_substitutes() {
        let x = t("i hate cats.");
        let y = x.with_token(1, "like").unwrap();
        assert_eq!(y.raw(), "i like cats.");
        assert!(x.with_token(4, "a").is_err());
        assert!(x.with_token(0, "two words").is_err());
    }
}

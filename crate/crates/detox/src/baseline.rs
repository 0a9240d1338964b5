//! Reference detoxifier: delete every word the lexicon scores as toxic.

use detox_core::backend::ToyLexicon;
use detox_core::text::TokenText;

/// Drops every token with a positive lexicon weight. `None` when nothing
/// would remain.
pub fn delete_lexicon_words(lexicon: &ToyLexicon, x: &TokenText) -> Option<TokenText> {
    let kept: Vec<String> = x.tokens().iter().filter(|t| lexicon.weight(t) <= 0.0).cloned().collect();
    if kept.is_empty() {
        return None;
    }
    TokenText::from_tokens(kept).ok()
}

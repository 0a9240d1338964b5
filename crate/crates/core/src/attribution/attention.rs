use super::{ImportanceVector, Method};
use crate::backend::BackendSuite;
use crate::error::{Capability, Error, Result};
use crate::text::TokenText;

/// Mean over heads of the last-layer CLS attention rows.
pub fn self_attention_importance<B: BackendSuite + ?Sized>(suite: &B, x: &TokenText) -> Result<ImportanceVector> {
    suite.capabilities().require(Capability::Attention)?;
    let heads = suite.attention_weights(x)?;
    if heads.is_empty() {
        return Err(Error::InvalidData { line: 0, message: "backend returned no attention heads".into() });
    }
    let mut scores = alloc::vec![0.0; x.len()];
    for row in &heads {
        if row.len() != x.len() {
            return Err(Error::LengthMismatch { left: x.len(), right: row.len() });
        }
        scores.iter_mut().zip(row).for_each(|(s, w)| *s += w);
    }
    let n = heads.len() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    Ok(ImportanceVector::new(scores, Method::Attention).with_meta("heads", heads.len()))
}

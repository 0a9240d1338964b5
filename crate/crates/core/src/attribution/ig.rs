//! Integrated gradients from per-step saliency terms supplied by the backend.

use alloc::vec::Vec;

use super::{ImportanceVector, Method};
use crate::backend::{BackendSuite, BaselineSpec};
use crate::error::{Capability, Error, Result};
use crate::text::TokenText;

pub const DEFAULT_IG_STEPS: usize = 32;

/// Right-endpoint Riemann sum `(1/steps) * sum_{m=1..steps} saliency(alpha = m/steps)`.
fn riemann<B: BackendSuite + ?Sized>(
    suite: &B,
    text: &TokenText,
    steps: usize,
    baseline: &BaselineSpec,
) -> Result<Vec<f64>> {
    suite.capabilities().require(Capability::GradientSaliency)?;
    if steps == 0 {
        return Err(Error::InvalidConfig("IG steps must be positive".into()));
    }
    let mut total = alloc::vec![0.0; text.len()];
    for m in 1..=steps {
        let alpha = m as f64 / steps as f64;
        let saliency = suite.gradient_saliency(text, alpha, baseline)?;
        if saliency.len() != text.len() {
            return Err(Error::LengthMismatch { left: text.len(), right: saliency.len() });
        }
        total.iter_mut().zip(saliency).for_each(|(t, s)| *t += s);
    }
    total.iter_mut().for_each(|t| *t /= steps as f64);
    Ok(total)
}

/// Integrated gradients attributing the toxic logit: the negated saliency of
/// the non-toxic logit, integrated from `baseline` to `x`.
pub fn integrated_gradients<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    steps: usize,
    baseline: &BaselineSpec,
) -> Result<ImportanceVector> {
    let scores = riemann(suite, x, steps, baseline)?.into_iter().map(|s| -s).collect();
    let baseline_name = match baseline {
        BaselineSpec::Mask => "mask",
        BaselineSpec::Tokens(_) => "tokens",
    };
    Ok(ImportanceVector::new(scores, Method::Ig)
        .with_meta("steps", steps)
        .with_meta("baseline", baseline_name)
        .with_meta("target", "toxic"))
}

/// Counterfactual feature importance: integrated gradients of the non-toxic
/// logit along the path from `x` to `x_cf`. Unchanged positions score exactly 0.
pub fn cfi<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    x_cf: &TokenText,
    steps: usize,
) -> Result<ImportanceVector> {
    if x.len() != x_cf.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: x_cf.len() });
    }
    if x.tokens() == x_cf.tokens() {
        return Err(Error::IdenticalTexts);
    }
    let baseline = BaselineSpec::Tokens(x.tokens().to_vec());
    let mut scores = riemann(suite, x_cf, steps, &baseline)?;
    for (score, (a, b)) in scores.iter_mut().zip(x.tokens().iter().zip(x_cf.tokens())) {
        if a == b {
            *score = 0.0;
        }
    }
    Ok(ImportanceVector::new(scores, Method::Cfi)
        .with_meta("steps", steps)
        .with_meta("baseline", "instance")
        .with_meta("target", "non_toxic"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Capabilities, ToyBackend, ToyLexicon};
    use crate::text::tokenize;
    use alloc::vec;

    fn suite() -> ToyBackend {
        ToyBackend::new(ToyLexicon::new(vec![("hate".into(), 2.0), ("stupid".into(), 2.5)], -1.0, "[MASK]").unwrap())
    }

    #[test]
    fn mask_baseline_example() {
        let x = tokenize("i hate cats").unwrap();
        for steps in [1, 8, 32] {
            let v = integrated_gradients(&suite(), &x, steps, &BaselineSpec::Mask).unwrap();
            assert_eq!(v.scores, [0.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn own_baseline_is_zero() {
        let x = tokenize("you stupid hate").unwrap();
        let v = integrated_gradients(&suite(), &x, 8, &BaselineSpec::Tokens(x.tokens().to_vec())).unwrap();
        assert!(v.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn cfi_single_edit() {
        let x = tokenize("i hate cats").unwrap();
        let cf = tokenize("i like cats").unwrap();
        let v = cfi(&suite(), &x, &cf, 32).unwrap();
        assert_eq!(v.scores, [0.0, 2.0, 0.0]);
        assert_eq!(v.method, Method::Cfi);
        assert_eq!(cfi(&suite(), &x, &x, 4), Err(Error::IdenticalTexts));
        let short = tokenize("i hate").unwrap();
        assert!(matches!(cfi(&suite(), &x, &short, 4), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn requires_capability() {
        let s = suite().with_capabilities(Capabilities::default());
        let x = tokenize("i hate cats").unwrap();
        assert_eq!(
            integrated_gradients(&s, &x, 4, &BaselineSpec::Mask),
            Err(Error::CapabilityUnavailable(Capability::GradientSaliency))
        );
        assert!(integrated_gradients(&suite(), &x, 0, &BaselineSpec::Mask).is_err());
    }
}

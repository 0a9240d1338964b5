//! KernelSHAP over token presence.
//!
//! A coalition is a subset of token positions; absent positions are replaced by
//! the backend's mask token and the coalition value is the toxic-class
//! probability. Attributions solve the Shapley-kernel weighted least-squares
//! problem with the efficiency constraint `sum(phi) = v(full) - v(empty)`
//! eliminated through the last coordinate.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImportanceVector, Method};
use crate::backend::BackendSuite;
use crate::error::{Error, Result};
use crate::linalg;
use crate::text::TokenText;

pub const MAX_DEFAULT_SAMPLES: usize = 2048;
const RIDGE: f64 = 1e-9;

/// `min(2^d, 2048)`.
pub fn default_samples(d: usize) -> usize {
    if d >= 11 {
        MAX_DEFAULT_SAMPLES
    } else {
        (1usize << d).min(MAX_DEFAULT_SAMPLES)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of one coalition of size `s` out of `d`.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * (s * (d - s)) as f64)
}

fn masked_text(x: &TokenText, present: &[bool], mask: &str) -> Result<TokenText> {
    TokenText::from_tokens(
        x.tokens()
            .iter()
            .zip(present)
            .map(|(t, &keep)| if keep { t.as_str() } else { mask }),
    )
}

/// Evaluates the toxic probability for each coalition in one batch.
fn coalition_values<B: BackendSuite + ?Sized>(suite: &B, x: &TokenText, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
    let mask = suite.mask_token();
    let texts = coalitions
        .iter()
        .map(|c| masked_text(x, c, mask))
        .collect::<Result<Vec<_>>>()?;
    let scores = suite.classify_batch(&texts)?;
    if scores.len() != texts.len() {
        return Err(Error::LengthMismatch { left: texts.len(), right: scores.len() });
    }
    Ok(scores.into_iter().map(|s| s.p_toxic).collect())
}

struct Row {
    present: Vec<bool>,
    value: f64,
    weight: f64,
}

fn solve_constrained(d: usize, rows: &[Row], v_empty: f64, v_full: f64) -> Result<Vec<f64>> {
    let delta = v_full - v_empty;
    let last = d - 1;
    let mut a = alloc::vec![alloc::vec![0.0; last]; last];
    let mut b = alloc::vec![0.0; last];
    let mut features = alloc::vec![0.0; last];
    for row in rows {
        let z_last = f64::from(u8::from(row.present[last]));
        let target = row.value - v_empty - z_last * delta;
        for (j, f) in features.iter_mut().enumerate() {
            *f = f64::from(u8::from(row.present[j])) - z_last;
        }
        for i in 0..last {
            if features[i] == 0.0 {
                continue;
            }
            let wf = row.weight * features[i];
            b[i] += wf * target;
            for j in 0..last {
                a[i][j] += wf * features[j];
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += RIDGE;
    }
    let mut phi = linalg::solve(a, b)
        .ok_or_else(|| Error::InvalidConfig("KernelSHAP system is singular; increase n_samples".into()))?;
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(phi)
}

/// `[v(empty), v(full)]`.
fn endpoints<B: BackendSuite + ?Sized>(suite: &B, x: &TokenText) -> Result<(f64, f64)> {
    let d = x.len();
    let v = coalition_values(suite, x, &[alloc::vec![false; d], alloc::vec![true; d]])?;
    Ok((v[0], v[1]))
}

/// Exact Shapley values by enumerating every coalition. Cost is `2^d` model calls.
pub fn kernel_shap_exact<B: BackendSuite + ?Sized>(suite: &B, x: &TokenText) -> Result<ImportanceVector> {
    let d = x.len();
    if d == 0 {
        return Err(Error::EmptyText);
    }
    if d >= 31 {
        return Err(Error::InvalidConfig(alloc::format!("exact enumeration over {d} tokens")));
    }
    let (v_empty, v_full) = endpoints(suite, x)?;
    let scores = if d == 1 {
        alloc::vec![v_full - v_empty]
    } else {
        let coalitions: Vec<Vec<bool>> = (1..(1u32 << d) - 1)
            .map(|bits| (0..d).map(|i| bits & (1 << i) != 0).collect())
            .collect();
        let values = coalition_values(suite, x, &coalitions)?;
        let rows: Vec<Row> = coalitions
            .into_iter()
            .zip(values)
            .map(|(present, value)| {
                let s = present.iter().filter(|&&p| p).count();
                Row { present, value, weight: kernel_weight(d, s) }
            })
            .collect();
        solve_constrained(d, &rows, v_empty, v_full)?
    };
    Ok(ImportanceVector::new(scores, Method::Kshap)
        .with_meta("mode", "exact")
        .with_meta("samples", (1u64 << d) - 2)
        .with_meta("target", "toxic"))
}

/// KernelSHAP with `n_samples` coalitions drawn from the Shapley kernel: a size
/// `s` with probability proportional to `(d-1) / (s (d-s))`, then a uniform
/// subset of that size. Duplicate draws accumulate weight.
pub fn kernel_shap_sampled<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    n_samples: usize,
    seed: u64,
) -> Result<ImportanceVector> {
    let d = x.len();
    if d == 0 {
        return Err(Error::EmptyText);
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    let (v_empty, v_full) = endpoints(suite, x)?;
    let scores = if d == 1 {
        alloc::vec![v_full - v_empty]
    } else {
        let size_weights: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
        let total: f64 = size_weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
        for _ in 0..n_samples {
            let mut u = rng.random_range(0.0..total);
            let mut size = d - 1;
            for (i, w) in size_weights.iter().enumerate() {
                if u < *w {
                    size = i + 1;
                    break;
                }
                u -= w;
            }
            let mut present = alloc::vec![false; d];
            for i in rand::seq::index::sample(&mut rng, d, size) {
                present[i] = true;
            }
            *counts.entry(present).or_insert(0.0) += 1.0;
        }
        let (coalitions, weights): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        let values = coalition_values(suite, x, &coalitions)?;
        let rows: Vec<Row> = coalitions
            .into_iter()
            .zip(values)
            .zip(weights)
            .map(|((present, value), weight)| Row { present, value, weight })
            .collect();
        solve_constrained(d, &rows, v_empty, v_full)?
    };
    Ok(ImportanceVector::new(scores, Method::Kshap)
        .with_meta("mode", "sampled")
        .with_meta("samples", n_samples)
        .with_meta("seed", seed)
        .with_meta("target", "toxic"))
}

/// Enumerates exactly when `2^d <= n_samples`, samples otherwise.
pub fn kernel_shap<B: BackendSuite + ?Sized>(
    suite: &B,
    x: &TokenText,
    n_samples: usize,
    seed: u64,
) -> Result<ImportanceVector> {
    let d = x.len();
    if d < usize::BITS as usize - 1 && (1usize << d) <= n_samples {
        kernel_shap_exact(suite, x)
    } else {
        kernel_shap_sampled(suite, x, n_samples, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyLexicon};
    use crate::text::tokenize;
    use alloc::vec;

    fn suite() -> ToyBackend {
        ToyBackend::new(ToyLexicon::new(vec![("hate".into(), 2.0)], -1.0, "[MASK]").unwrap())
    }

    #[test]
    fn enumeration_example() {
        let v = kernel_shap(&suite(), &tokenize("i hate cats").unwrap(), 2048, 7).unwrap();
        assert_eq!(v.meta["mode"], "exact");
        let expected = 1.0 / (1.0 + libm::exp(-1.0)) - 1.0 / (1.0 + libm::exp(1.0));
        assert!(v.scores[0].abs() < 1e-9);
        assert!((v.scores[1] - expected).abs() < 1e-9);
        assert!((v.scores[1] - 0.4621).abs() < 1e-4);
        assert!(v.scores[2].abs() < 1e-9);
    }

    #[test]
    fn constant_model_gives_zero() {
        let v = kernel_shap(&suite(), &tokenize("the cats sat here").unwrap(), 64, 1).unwrap();
        assert!(v.scores.iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn single_token() {
        let s = suite();
        let x = tokenize("hate").unwrap();
        let v = kernel_shap(&s, &x, 2048, 0).unwrap();
        let full = s.classify(&x).unwrap().p_toxic;
        let empty = s.classify(&tokenize("[MASK]").unwrap()).unwrap().p_toxic;
        assert_eq!(v.scores, [full - empty]);
        assert_eq!(kernel_shap_sampled(&s, &x, 1, 0).unwrap().scores, [full - empty]);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(kernel_shap_sampled(&suite(), &tokenize("a hate b").unwrap(), 0, 0).is_err());
    }

    #[test]
    fn default_sample_budget() {
        assert_eq!(default_samples(3), 8);
        assert_eq!(default_samples(11), 2048);
        assert_eq!(default_samples(200), 2048);
    }
}

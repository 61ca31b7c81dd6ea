//! Unbiased pass@k estimator.

use crate::error::{LensError, Result};

/// Largest `n` for which binomials are computed exactly in integers.
const EXACT_LIMIT: usize = 100;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// `1 - C(n - c, k) / C(n, k)` for one question.
pub fn pass_at_k_single(n: usize, c: usize, k: usize) -> Result<f64> {
    if k > n {
        return Err(LensError::KTooLarge { k, n });
    }
    if c > n {
        return Err(LensError::DomainError(format!("{c} correct out of {n} samples")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    if n <= EXACT_LIMIT {
        let total = binomial(n, k);
        return Ok((total - binomial(n - c, k)) as f64 / total as f64);
    }
    // C(n-c, k) / C(n, k) = prod_{i = n-c+1}^{n} (1 - k / i)
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Mean pass@k over questions, each given as its list of sample outcomes.
pub fn pass_at_k(results: &[Vec<bool>], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(LensError::DomainError("pass@k over zero questions".into()));
    }
    let mut total = 0.0;
    for r in results {
        let c = r.iter().filter(|&&b| b).count();
        total += pass_at_k_single(r.len(), c, k)?;
    }
    Ok(total / results.len() as f64)
}

//! Small statistics helpers for evaluation reports.

use crate::error::{EmsError, Result};

/// Pearson correlation coefficient of two paired samples.
///
/// Errors on length mismatch, fewer than two pairs, non-finite entries, or
/// a zero-variance side (the coefficient is undefined there).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EmsError::invalid(format!(
            "correlation needs two equally long samples of at least 2 values, \
             got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EmsError::numeric("non-finite value in correlation input"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(EmsError::invalid(
            "correlation undefined: one sample has zero variance",
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Result of a two-sided exact binomial sign test on paired differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs where the first sample exceeds the second.
    pub positive: usize,
    /// Pairs where the second sample exceeds the first.
    pub negative: usize,
    /// Exactly tied pairs (excluded from the test).
    pub ties: usize,
    /// Two-sided p-value under the fair-coin null, capped at 1.
    pub p_value: f64,
}

/// Two-sided exact sign test for paired samples `a` vs `b`.
///
/// Ties are dropped; with no informative pairs left the test is undefined
/// and errors.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EmsError::invalid(format!(
            "sign test needs equal non-empty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut positive = 0usize;
    let mut negative = 0usize;
    let mut ties = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if !x.is_finite() || !y.is_finite() {
            return Err(EmsError::numeric("non-finite value in sign test input"));
        }
        match x.partial_cmp(&y).expect("finite values compare") {
            std::cmp::Ordering::Greater => positive += 1,
            std::cmp::Ordering::Less => negative += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }
    }
    let n = positive + negative;
    if n == 0 {
        return Err(EmsError::invalid(
            "sign test undefined: every pair is tied",
        ));
    }
    let k = positive.min(negative);
    // Two-sided: twice the lower tail P(X <= k) for X ~ Binomial(n, 1/2).
    let p_value = (2.0 * binomial_cdf_half(n, k)).min(1.0);
    Ok(SignTest {
        positive,
        negative,
        ties,
        p_value,
    })
}

/// P(X <= k) for X ~ Binomial(n, 1/2), computed exactly in floating point.
fn binomial_cdf_half(n: usize, k: usize) -> f64 {
    // C(n, i) built incrementally: C(n, 0) = 1, C(n, i) = C(n, i-1)*(n-i+1)/i.
    let mut coeff = 1.0f64;
    let mut total = 1.0f64; // i = 0 term
    for i in 1..=k {
        coeff = coeff * (n - i + 1) as f64 / i as f64;
        total += coeff;
    }
    total * 0.5f64.powi(n as i32)
}

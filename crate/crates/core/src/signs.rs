//! Exhaustive enumeration of Rademacher sign patterns.

use crate::error::{Error, Result};

/// Largest number of independent signs enumerated exhaustively.
pub const MAX_SIGNS: usize = 16;

/// Calls `visit` with every pattern `ε ∈ {−1, 1}^n` (as `±1.0` values).
pub fn for_each_pattern(n: usize, mut visit: impl FnMut(&[f64])) -> Result<()> {
    if n > MAX_SIGNS {
        return Err(Error::TooLarge(format!(
            "{n} signs exceed the enumeration bound {MAX_SIGNS}"
        )));
    }
    let mut eps = vec![1.0; n];
    for mask in 0u32..(1u32 << n) {
        for (i, e) in eps.iter_mut().enumerate() {
            *e = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
        }
        visit(&eps);
    }
    Ok(())
}

/// `(E|Σ ε_i x_i|, (E|Σ ε_i x_i|²)^{1/2})` by full enumeration.
pub fn rademacher_moments(xs: &[f64]) -> Result<(f64, f64)> {
    let mut first = 0.0;
    let mut second = 0.0;
    let mut count = 0u64;
    for_each_pattern(xs.len(), |eps| {
        let s: f64 = eps.iter().zip(xs).map(|(e, x)| e * x).sum();
        first += s.abs();
        second += s * s;
        count += 1;
    })?;
    let n = count as f64;
    Ok((first / n, (second / n).sqrt()))
}

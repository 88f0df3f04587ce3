//! Fixed-order reductions.
//!
//! Sums are accumulated strictly left to right. Callers that parallelise
//! upstream work collect results in input order first, so these are the only
//! place floating-point association is decided.

/// Mean taken around the first element, so a constant input returns that
/// constant exactly.
pub fn mean(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let origin = values[0];
    let mut sum = 0.0;
    for &v in &values[1..] {
        sum += v - origin;
    }
    origin + sum / values.len() as f64
}

/// Divides by `n`, so a single value has variance zero.
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let mut acc = 0.0;
    for &v in values {
        let d = v - m;
        acc += d * d;
    }
    acc / values.len() as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    population_variance(values).sqrt()
}

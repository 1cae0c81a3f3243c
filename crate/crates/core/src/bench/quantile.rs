use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantileError {
    #[error("cannot compute quantiles of an empty sample")]
    Empty,
    #[error("quantile {0} is outside (0, 1]")]
    OutOfRange(f64),
}

/// Slack for `q * n` landing a hair above an integer because of binary
/// rounding (e.g. `0.29 * 100`).
const RANK_EPS: f64 = 1e-9;

/// 1-based nearest rank `ceil(q * n)`, clamped to `[1, n]`.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let rank = (q * n as f64 - RANK_EPS).ceil();
    (rank.max(1.0) as usize).min(n)
}

/// Nearest-rank quantiles of `samples` for every fraction in `qs`.
pub fn compute_quantiles(samples: &[u64], qs: &[f64]) -> Result<Vec<u64>, QuantileError> {
    if samples.is_empty() {
        return Err(QuantileError::Empty);
    }
    if let Some(&bad) = qs.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(QuantileError::OutOfRange(bad));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(qs.iter().map(|&q| sorted[nearest_rank(q, sorted.len()) - 1]).collect())
}

/// Median by nearest rank, as used when summarizing repetitions.
pub fn median(samples: &[u64]) -> Result<u64, QuantileError> {
    compute_quantiles(samples, &[0.5]).map(|v| v[0])
}

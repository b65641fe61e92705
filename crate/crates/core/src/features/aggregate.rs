//! Seven summary statistics of a time series.

use crate::error::{Error, Result};

pub const STAT_NAMES: [&str; 7] = ["mean", "std", "min", "max", "median", "skew", "kurtosis"];

/// `(mean, std, min, max, median, skewness g1, excess kurtosis)`, population
/// moments throughout. Zero variance gives skewness and kurtosis 0.
pub fn aggregate(series: &[f64]) -> Result<[f64; 7]> {
    if series.is_empty() {
        return Err(Error::ContractViolation("aggregate of an empty series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in series {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok([mean, m2.sqrt(), sorted[0], sorted[sorted.len() - 1], median, skew, kurt])
}

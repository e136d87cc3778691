//! Latency summaries over nanosecond samples.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub min_ns: f64,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p99_ns: f64,
    pub max_ns: f64,
}

impl LatencySummary {
    /// Summary of `samples`; all zero when empty.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        LatencySummary {
            count: n as u64,
            min_ns: sorted[0],
            mean_ns: sorted.iter().sum::<f64>() / n as f64,
            median_ns: median_sorted(&sorted),
            p99_ns: percentile_sorted(&sorted, 99.0),
            max_ns: sorted[n - 1],
        }
    }

    pub fn from_ns(samples: &[u64]) -> Self {
        let s: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        Self::from_samples(&s)
    }
}

/// Nearest-rank percentile over sorted data.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(LatencySummary::from_samples(&[]), LatencySummary::default());
    }

    #[test]
    fn basic_summary() {
        let s = LatencySummary::from_ns(&(1..=100).collect::<Vec<_>>());
        assert_eq!(s.count, 100);
        assert_eq!(s.min_ns, 1.0);
        assert_eq!(s.max_ns, 100.0);
        assert_eq!(s.mean_ns, 50.5);
        assert_eq!(s.median_ns, 50.5);
        assert_eq!(s.p99_ns, 99.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}

//! Latency summary statistics. p95 uses the nearest-rank definition:
//! sort ascending, take element ceil(0.95 * n) - 1, so a 100-sample run
//! reports its 95th smallest value, not an interpolation.

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().sum::<f64>() / samples.len() as f64
}

pub fn p95(samples: &[f64]) -> f64 {
    percentile(samples, 0.95)
}

pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1)]
}

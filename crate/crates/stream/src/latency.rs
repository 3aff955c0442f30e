//! Ingest-to-emit latency statistics for one session.

use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyReport {
    /// per motion packet, in emission order
    pub samples_ns: Vec<u64>,
    pub mean_ns: Option<f64>,
    /// nearest-rank 99th percentile
    pub p99_ns: Option<u64>,
    /// emitted packets per second of session time
    pub throughput_hz: Option<f64>,
    pub dropped: u64,
}

impl LatencyReport {
    /// Empty sessions carry counts but no statistics.
    pub fn new(samples_ns: Vec<u64>, elapsed: Duration, dropped: u64) -> Self {
        if samples_ns.is_empty() {
            return Self { samples_ns, dropped, ..Default::default() };
        }
        let n = samples_ns.len();
        let mean = samples_ns.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let secs = elapsed.as_secs_f64();
        Self {
            mean_ns: Some(mean),
            p99_ns: Some(percentile(&samples_ns, 0.99)),
            throughput_hz: (secs > 0.0).then(|| n as f64 / secs),
            samples_ns,
            dropped,
        }
    }

    pub fn count(&self) -> usize {
        self.samples_ns.len()
    }
}

/// Nearest-rank percentile, `q ∈ (0, 1]`; `values` must be non-empty.
pub fn percentile(values: &[u64], q: f64) -> u64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

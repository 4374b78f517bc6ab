use serde::Serialize;

/// Transport KPIs of one sub-network over one collection window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SubnetMetrics {
    pub window_us: u64,
    /// Bytes on air over the window, in Mbit/s.
    pub throughput_mbps: f64,
    pub latency_p50_us: f64,
    pub latency_p99_us: f64,
    /// Population standard deviation of the latency samples.
    pub jitter_us: f64,
    /// Late or dropped frames over frames resolved in the window; 0 for
    /// profiles without a deadline.
    pub deadline_miss_ratio: f64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    /// Nothing was delivered or dropped in the window.
    pub no_data: bool,
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p/100 * n)`. Returns `None` on an empty sample.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn population_std_dev(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Raw per-window counters from which [`SubnetMetrics`] are derived.
#[derive(Clone, Debug, Default)]
pub struct Window {
    pub airtime_bytes: u64,
    /// Frame latencies in nanoseconds.
    pub latencies_ns: Vec<u64>,
    pub late: u64,
    pub dropped: u64,
    pub has_deadline: bool,
}

impl Window {
    pub fn summarize(mut self, window_us: u64) -> SubnetMetrics {
        let delivered = self.latencies_ns.len() as u64;
        if delivered == 0 && self.dropped == 0 {
            return SubnetMetrics {
                window_us,
                no_data: true,
                ..SubnetMetrics::default()
            };
        }
        self.latencies_ns.sort_unstable();
        let us = |ns: u64| ns as f64 / 1000.0;
        let samples: Vec<f64> = self.latencies_ns.iter().map(|&ns| us(ns)).collect();
        let resolved = delivered + self.dropped;
        SubnetMetrics {
            window_us,
            throughput_mbps: if window_us == 0 {
                0.0
            } else {
                (self.airtime_bytes * 8) as f64 / window_us as f64
            },
            latency_p50_us: nearest_rank(&self.latencies_ns, 50.0).map_or(0.0, us),
            latency_p99_us: nearest_rank(&self.latencies_ns, 99.0).map_or(0.0, us),
            jitter_us: population_std_dev(&samples),
            deadline_miss_ratio: if self.has_deadline {
                (self.late + self.dropped) as f64 / resolved as f64
            } else {
                0.0
            },
            frames_delivered: delivered,
            frames_dropped: self.dropped,
            no_data: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_window_is_flagged() {
        let m = Window::default().summarize(1_000_000);
        assert!(m.no_data);
        assert_eq!(m.throughput_mbps, 0.0);
        assert_eq!(m.latency_p99_us, 0.0);
    }

    #[test]
    fn constant_latency_has_no_jitter() {
        let w = Window {
            airtime_bytes: 6400,
            latencies_ns: vec![100_000; 100],
            ..Window::default()
        };
        let m = w.summarize(1000);
        assert_eq!(
            (m.latency_p50_us, m.latency_p99_us, m.jitter_us),
            (100.0, 100.0, 0.0)
        );
        assert_eq!(m.throughput_mbps, 51.2);
    }

    #[test]
    fn nearest_rank_small_samples() {
        let s = [15, 20, 35, 40, 50];
        assert_eq!(nearest_rank(&s, 30.0), Some(20));
        assert_eq!(nearest_rank(&s, 40.0), Some(20));
        assert_eq!(nearest_rank(&s, 50.0), Some(35));
        assert_eq!(nearest_rank(&s, 100.0), Some(50));
        assert_eq!(nearest_rank(&s, 0.0), Some(15));
        assert_eq!(nearest_rank::<u32>(&[], 50.0), None);
    }

    #[test]
    fn std_dev_is_population() {
        assert_eq!(
            population_std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]),
            2.0
        );
    }

    #[test]
    fn deadline_ratio_counts_drops() {
        let w = Window {
            latencies_ns: vec![1; 6],
            late: 1,
            dropped: 2,
            has_deadline: true,
            ..Window::default()
        };
        assert_eq!(w.summarize(10).deadline_miss_ratio, 3.0 / 8.0);
    }
}

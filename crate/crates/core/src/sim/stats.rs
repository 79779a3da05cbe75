use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided Student-t quantile for `confidence` with `df` degrees of freedom.
pub fn t_quantile(confidence: f64, df: usize) -> f64 {
    if df == 0 {
        return f64::INFINITY;
    }
    let t = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
    t.inverse_cdf(0.5 + confidence / 2.0)
}

/// Mean and 95% half-width of a set of (approximately independent) batch or
/// replication means. The half-width is zero for fewer than two values.
pub fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, t_quantile(0.95, k - 1) * (var / k as f64).sqrt())
}

/// Streaming per-job waiting-time summary with time-batched means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingTimeStats {
    pub count: u64,
    pub mean: f64,
    /// Sample variance of individual waits.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    /// 95% half-width from batch means.
    pub half_width: f64,
    pub batch_means: Vec<f64>,
}

impl WaitingTimeStats {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.lower()..=self.upper()).contains(&value)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WaitAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    batch_sum: Vec<f64>,
    batch_count: Vec<u64>,
}

impl WaitAccumulator {
    pub(crate) fn new(batches: usize) -> Self {
        WaitAccumulator {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            batch_sum: vec![0.0; batches],
            batch_count: vec![0; batches],
        }
    }

    pub(crate) fn push(&mut self, batch: usize, w: f64) {
        self.count += 1;
        let delta = w - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (w - self.mean);
        self.min = self.min.min(w);
        self.max = self.max.max(w);
        let b = batch.min(self.batch_sum.len() - 1);
        self.batch_sum[b] += w;
        self.batch_count[b] += 1;
    }

    pub(crate) fn count(&self) -> u64 {
        self.count
    }

    pub(crate) fn finish(&self) -> WaitingTimeStats {
        let batch_means: Vec<f64> = self
            .batch_sum
            .iter()
            .zip(&self.batch_count)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let (_, half_width) = mean_and_half_width(&batch_means);
        let variance = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        WaitingTimeStats {
            count: self.count,
            mean: if self.count > 0 { self.mean } else { 0.0 },
            variance,
            min: if self.count > 0 { self.min } else { 0.0 },
            max: if self.count > 0 { self.max } else { 0.0 },
            half_width,
            batch_means,
        }
    }
}

/// Time-averaged empirical occupancy after warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySampler {
    /// `mean[i]` = time average of `S_i`, `mean[0] = 1`.
    pub mean: Vec<f64>,
    /// 95% batch-means half-width per level.
    pub half_width: Vec<f64>,
    /// Time average of `||S||_1` (jobs per server).
    pub mean_l1: f64,
    pub l1_half_width: f64,
    pub duration: f64,
}

impl OccupancySampler {
    pub fn levels(&self) -> usize {
        self.mean.len() - 1
    }
}

/// Fraction of observed time spent with `m` tokens stored, `m = 0..=c(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub fractions: Vec<f64>,
}

impl TokenHistogram {
    pub fn mean(&self) -> f64 {
        self.fractions.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }

    pub fn empty_fraction(&self) -> f64 {
        self.fractions.first().copied().unwrap_or(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn t_quantiles() {
        assert_abs_diff_eq!(t_quantile(0.95, 31), 2.0395, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.95, 7), 2.3646, epsilon = 1e-4);
    }

    #[test]
    fn half_width_of_constant_is_zero() {
        let (m, h) = mean_and_half_width(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(h, 0.0);
        assert_eq!(mean_and_half_width(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn accumulator_summary() {
        let mut acc = WaitAccumulator::new(2);
        for (b, w) in [(0, 1.0), (0, 3.0), (1, 5.0), (1, 7.0)] {
            acc.push(b, w);
        }
        let s = acc.finish();
        assert_eq!(s.count, 4);
        assert_abs_diff_eq!(s.mean, 4.0);
        assert_abs_diff_eq!(s.variance, 20.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.batch_means, vec![2.0, 6.0]);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert!(s.half_width > 0.0);
    }
}

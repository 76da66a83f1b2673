//! Sample statistics used by the Monte Carlo estimators.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation; fixed evaluation order for reproducibility.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(x) / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// Mean with its standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        Self {
            mean: mean(x),
            std_error: (variance(x) / n.max(1) as f64).sqrt(),
            n,
        }
    }

    /// `|mean - target| <= z * se`.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.std_error
    }
}

/// Estimate of `E[exp(x)]` computed in log space: samples are scaled by
/// `exp(-max)` before averaging and the scale is restored at the end.
pub fn exp_mean(log_samples: &[f64]) -> Estimate {
    let n = log_samples.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            std_error: f64::NAN,
            n,
        };
    }
    let shift = log_samples
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_samples.iter().map(|x| (x - shift).exp()).collect();
    let e = Estimate::from_samples(&w);
    let scale = shift.exp();
    Estimate {
        mean: e.mean * scale,
        std_error: e.std_error * scale,
        n,
    }
}

/// Order statistics summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(x: &[f64]) -> Self {
        if x.is_empty() {
            return Self {
                min: f64::NAN,
                q05: f64::NAN,
                q50: f64::NAN,
                q95: f64::NAN,
                max: f64::NAN,
            };
        }
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            s[lo] * (1.0 - w) + s[hi] * w
        };
        Self {
            min: s[0],
            q05: q(0.05),
            q50: q(0.5),
            q95: q(0.95),
            max: s[s.len() - 1],
        }
    }
}

/// Welford-style running moments with an associative merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64) * (other.count as f64) / n as f64;
        Moments { count: n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            std_error: (self.variance() / self.count.max(1) as f64).sqrt(),
            n: self.count as usize,
        }
    }
}

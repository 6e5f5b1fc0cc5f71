use serde::{Deserialize, Serialize};

/// A value with its Monte Carlo standard error.
///
/// Closed-form values carry `stderr == 0` and `replicates == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub stderr: f64,
    pub replicates: u64,
}

impl EstimateWithError {
    pub fn exact(value: f64) -> Self {
        EstimateWithError {
            value,
            stderr: 0.0,
            replicates: 0,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        self.replicates == 0
    }

    /// Upper end of the `width`-stderr band.
    pub fn upper(&self, width: f64) -> f64 {
        self.value + width * self.stderr
    }

    pub fn relative_stderr(&self) -> f64 {
        if self.value == 0.0 {
            if self.stderr == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.stderr / self.value.abs()
        }
    }
}

/// Welford accumulator. Accumulation order is the caller's, so results are
/// bit-reproducible whenever the push order is fixed.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn estimate(&self) -> EstimateWithError {
        let stderr = if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        };
        EstimateWithError {
            value: self.mean,
            stderr,
            replicates: self.count,
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

//! Sample statistics for the Monte-Carlo harnesses.

/// Streaming mean and variance (Welford), plus the observed range.
#[derive(Debug, Clone, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Running {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        if self.n == 0 {
            (self.min, self.max) = (x, x);
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// `max − min` of the samples; zero when empty.
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Per-coordinate running moments of a vector-valued sample.
#[derive(Debug, Clone)]
pub struct RunningVec {
    coords: Vec<Running>,
}

impl RunningVec {
    pub fn new(d: usize) -> Self {
        Self { coords: vec![Running::new(); d] }
    }

    pub fn push(&mut self, x: &[f64]) {
        for (r, v) in self.coords.iter_mut().zip(x) {
            r.push(*v);
        }
    }

    pub fn coords(&self) -> &[Running] {
        &self.coords
    }

    pub fn means(&self) -> Vec<f64> {
        self.coords.iter().map(Running::mean).collect()
    }

    /// Largest `|mean_j - target_j| / stderr_j`.
    ///
    /// A coordinate that never moved in `n` samples cannot be scored that
    /// way. If its gap to the target is `g` and any departure is at most
    /// the widest range seen on another coordinate, `J`, an unbiased
    /// coordinate departs with probability at least `g/J`, so `n` constant
    /// samples have probability at most `exp(−n g/J)`. That tail is reported
    /// as the equivalent two-sided normal score.
    pub fn max_z(&self, target: &[f64]) -> f64 {
        let jump = self.coords.iter().map(Running::range).fold(0.0, f64::max);
        self.coords
            .iter()
            .zip(target)
            .map(|(r, t)| {
                let gap = (r.mean() - t).abs();
                let se = r.stderr();
                let scale = t.abs().max(r.mean().abs()).max(f64::MIN_POSITIVE);
                if gap <= 1e-12 * scale {
                    0.0
                } else if se > 0.0 {
                    gap / se
                } else if jump > 0.0 {
                    let log_tail = -(r.count() as f64) * gap / jump;
                    if log_tail < f64::MIN_POSITIVE.ln() {
                        f64::INFINITY
                    } else {
                        -normal_quantile(log_tail.exp() / 2.0)
                    }
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; zero for a single sample.
pub fn std_pop(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile probability must lie in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// z-threshold for `comparisons` two-sided tests at family-wise level
/// `alpha`, never below `floor`.
pub fn simultaneous_z(comparisons: usize, alpha: f64, floor: f64) -> f64 {
    let p = alpha / (2.0 * comparisons.max(1) as f64);
    normal_quantile(1.0 - p).max(floor)
}

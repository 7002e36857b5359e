//! Estimate records and delete-one jackknife error bars.

/// Counters collected while sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    /// Grid coincidences with a singular potential (both signs).
    pub singular_hits: u64,
    /// Samples dropped because an attractive singularity was hit.
    pub rejected: u64,
    /// Exponents below `-E_max` that were clamped.
    pub clamp_hits: u64,
    /// Samples whose `x`-Laplacian of the total energy was positive.
    pub sign_violations: u64,
    /// Fraction of samples with a nonnegative per-sample integrand, where the
    /// estimand defines one.
    pub nonnegative_fraction: Option<f64>,
    /// Some potential failed grid certification of superharmonicity.
    pub uncertified: bool,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.singular_hits += other.singular_hits;
        self.rejected += other.rejected;
        self.clamp_hits += other.clamp_hits;
        self.sign_violations += other.sign_violations;
        self.uncertified |= other.uncertified;
        if self.nonnegative_fraction.is_none() {
            self.nonnegative_fraction = other.nonnegative_fraction;
        }
    }
}

/// A Monte Carlo result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    /// Multiplies the estimate by an exact constant.
    pub fn scaled(mut self, c: f64) -> Self {
        self.mean *= c;
        self.stderr *= c.abs();
        self
    }

    /// `mean ≥ bound - k · stderr`.
    pub fn at_least(&self, bound: f64, k: f64) -> bool {
        self.mean >= bound - k * self.stderr
    }

    /// `|mean - target| ≤ k · stderr`.
    pub fn consistent_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Per-sample columns of equal length, summed in index order.
#[derive(Debug, Clone)]
pub struct Columns {
    data: Vec<Vec<f64>>,
    sums: Vec<f64>,
    len: usize,
}

impl Columns {
    pub fn new(data: Vec<Vec<f64>>) -> Self {
        let len = data.first().map_or(0, Vec::len);
        assert!(data.iter().all(|c| c.len() == len), "jackknife columns differ in length");
        let sums = data.iter().map(|c| c.iter().sum()).collect();
        Self { data, sums, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.len as f64).collect()
    }

    pub fn sum(&self, column: usize) -> f64 {
        self.sums[column]
    }

    /// The statistic evaluated at the column means and its delete-one
    /// jackknife standard error.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, stat: F) -> (f64, f64) {
        let full = stat(&self.means());
        let n = self.len;
        if n < 2 {
            return (full, f64::NAN);
        }
        let m = (n - 1) as f64;
        let mut buf = vec![0.0; self.data.len()];
        let leave_out: Vec<f64> = (0..n)
            .map(|i| {
                for (b, (col, s)) in buf.iter_mut().zip(self.data.iter().zip(&self.sums)) {
                    *b = (s - col[i]) / m;
                }
                stat(&buf)
            })
            .collect();
        let center = leave_out.iter().sum::<f64>() / n as f64;
        let var = leave_out.iter().map(|t| (t - center) * (t - center)).sum::<f64>() * m / n as f64;
        (full, var.sqrt())
    }

    /// Mean of one column with the usual `s/√N` error.
    pub fn mean_stderr(&self, column: usize) -> (f64, f64) {
        mean_stderr(&self.data[column])
    }
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

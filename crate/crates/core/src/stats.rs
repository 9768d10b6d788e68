//! Small summation and moment helpers shared by the Monte Carlo code.

/// Neumaier-compensated sum. Callers feed values in a fixed order (path index),
/// so totals do not depend on how the values were produced.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Sample standard deviation over sqrt(n).
    pub stderr: f64,
    pub samples: usize,
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, stderr: f64::NAN, samples: 0 };
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let stderr = if n > 1 {
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, stderr, samples: n }
}

/// Unbiased sample variance together with an asymptotic standard error
/// sqrt((m4 - s^4) / n), m4 the fourth central moment.
pub fn variance_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    assert!(n > 1, "variance needs at least two samples");
    let nf = n as f64;
    let mean = compensated_sum(values.iter().copied()) / nf;
    let m2 = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / nf;
    let m4 = compensated_sum(values.iter().map(|v| (v - mean).powi(4))) / nf;
    let var = m2 * nf / (nf - 1.0);
    MeanEstimate { mean: var, stderr: ((m4 - m2 * m2).max(0.0) / nf).sqrt(), samples: n }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Shared estimator plumbing: sample means, stabilized log-mean-exp,
//! effective sample size, and small fitting helpers.
//!
//! Exponential estimators are kept in log space end to end; only
//! self-normalized ratios are exponentiated, always after a max shift.

use serde::Serialize;

use crate::error::Error;
use crate::Result;

/// Fraction of the sample count below which exponential weights are
/// considered degenerate.
pub const ESS_DEGENERATE_FRACTION: f64 = 0.01;

const BOOTSTRAP_RESAMPLES: usize = 200;

/// A Monte Carlo scalar with its sampling pedigree.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    /// Effective sample size; equals `n_samples` for unweighted means.
    pub ess: f64,
    /// True when ess fell below [`ESS_DEGENERATE_FRACTION`] of the sample
    /// count and the estimate should be treated as unreliable.
    pub ess_degenerate: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            standard_error: 0.0,
            n_samples: 1,
            ess: 1.0,
            ess_degenerate: false,
        }
    }
}

/// Plain sample mean with standard error.
pub fn mean_se(samples: &[f64]) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(Estimate {
        value: mean,
        standard_error: (var / n).sqrt(),
        n_samples: samples.len(),
        ess: n,
        ess_degenerate: false,
    })
}

/// Max-shifted log of the mean of `exp(x_i)`.
pub fn log_mean_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (zero weights) or a non-finite input.
        return Ok(m);
    }
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    Ok(m + (sum / xs.len() as f64).ln())
}

/// Effective sample size of the exponential weights `exp(x_i)`:
/// `(sum w)^2 / sum w^2`, computed max-shifted.
pub fn exp_weight_ess(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for x in xs {
        let w = (x - m).exp();
        s1 += w;
        s2 += w * w;
    }
    if s2 == 0.0 {
        0.0
    } else {
        s1 * s1 / s2
    }
}

/// Self-normalized weights `exp(x_i) / sum_j exp(x_j)`; they sum to 1
/// exactly up to the final division.
pub fn normalized_exp_weights(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `log mean exp(scale * x_i) / scale` with delta-method standard error,
/// ESS bookkeeping, and a bootstrap SE fallback once the weights degenerate.
pub fn log_mean_exp_estimate(xs: &[f64], scale: f64) -> Result<Estimate> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    if scale == 0.0 {
        return Err(Error::AlphaZero);
    }
    let exponents: Vec<f64> = xs.iter().map(|x| scale * x).collect();
    let n = xs.len() as f64;
    let lse = log_mean_exp(&exponents)?;
    let value = lse / scale;
    let ess = exp_weight_ess(&exponents);
    let degenerate = ess < ESS_DEGENERATE_FRACTION * n;

    let standard_error = if xs.len() == 1 {
        0.0
    } else if degenerate {
        bootstrap_se(&exponents, scale)
    } else {
        // Delta method: se(log M) = sd(w) / (sqrt(n) * mean(w)); the max
        // shift cancels in the ratio.
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean_w = exponents.iter().map(|x| (x - m).exp()).sum::<f64>() / n;
        let var_w = exponents
            .iter()
            .map(|x| ((x - m).exp() - mean_w).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        var_w.sqrt() / (n.sqrt() * mean_w * scale.abs())
    };

    Ok(Estimate {
        value,
        standard_error,
        n_samples: xs.len(),
        ess,
        ess_degenerate: degenerate,
    })
}

/// Bootstrap SE of the log-mean-exp value over a fixed resample count.
/// Deterministic: the resampling stream is derived from the sample size.
fn bootstrap_se(exponents: &[f64], scale: f64) -> f64 {
    let rng = crate::rng::CounterRng::new(crate::rng::derive_seed(
        exponents.len() as u64,
        "bootstrap-se",
        0,
    ));
    let n = exponents.len();
    let mut values = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut resample = vec![0.0; n];
    for b in 0..BOOTSTRAP_RESAMPLES {
        for (i, slot) in resample.iter_mut().enumerate() {
            let u = rng.uniform(b, i, 0, 0.0, n as f64);
            *slot = exponents[u as usize];
        }
        if let Ok(lse) = log_mean_exp(&resample) {
            values.push(lse / scale);
        }
    }
    match mean_se(&values) {
        Ok(e) => e.standard_error * (values.len() as f64).sqrt(),
        Err(_) => f64::NAN,
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

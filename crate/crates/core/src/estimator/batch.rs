use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::EstimatorError;

pub const MIN_BATCH_SAMPLES: usize = 50;
const MAX_ITERATIONS: usize = 500;
const LOG_LIKELIHOOD_TOL: f64 = 1e-9;

/// `p_t · N(mu, sigma²) + (1 − p_t) · U(lower, upper)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub p_t: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MixtureModel {
    fn normal_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn uniform_pdf(&self, x: f64) -> f64 {
        if x >= self.lower && x <= self.upper {
            1.0 / (self.upper - self.lower)
        } else {
            0.0
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.p_t * self.normal_pdf(x) + (1.0 - self.p_t) * self.uniform_pdf(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let normal = 0.5 * erfc(-(x - self.mu) / (self.sigma * std::f64::consts::SQRT_2));
        let uniform = ((x - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0);
        self.p_t * normal + (1.0 - self.p_t) * uniform
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|x| self.pdf(*x).ln()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub model: MixtureModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `model` is then the best iterate.
    pub converged: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Maximum-likelihood Gaussian + uniform fit by expectation-maximisation.
///
/// Starts from the median, half the interquartile range and `p_t = 0.75`;
/// stops when the log-likelihood gains less than 1e-9 or after 500 rounds.
pub fn fit_mixture_batch(samples: &[f64], lower: f64, upper: f64) -> Result<MixtureFit, EstimatorError> {
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(EstimatorError::InvalidConfig(format!(
            "invalid bounds [{lower}, {upper}]"
        )));
    }
    if samples.len() < MIN_BATCH_SAMPLES {
        return Err(EstimatorError::TooFewSamples {
            needed: MIN_BATCH_SAMPLES,
            got: samples.len(),
        });
    }
    let outside = samples.iter().filter(|x| !(**x >= lower && **x <= upper)).count();
    if outside > 0 {
        return Err(EstimatorError::SamplesOutOfBounds {
            count: outside,
            lower,
            upper,
        });
    }

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let width = upper - lower;
    // keeps the Gaussian from collapsing onto repeated values
    let sigma_floor = 1e-6 * width;
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let mut model = MixtureModel {
        p_t: 0.75,
        mu: quantile(&sorted, 0.5),
        sigma: if iqr > 0.0 { 0.5 * iqr } else { width / 20.0 }.max(sigma_floor),
        lower,
        upper,
    };
    let mut ll = model.log_likelihood(samples);
    let mut best = (model, ll);
    let n = samples.len() as f64;
    let mut resp = vec![0.0; samples.len()];

    for iteration in 1..=MAX_ITERATIONS {
        let u = (1.0 - model.p_t) / width;
        for (r, x) in resp.iter_mut().zip(samples) {
            let g = model.p_t * model.normal_pdf(*x);
            let total = g + u;
            *r = if total > 0.0 { g / total } else { 0.0 };
        }
        let sum_r: f64 = resp.iter().sum();
        if sum_r <= 0.0 {
            // nothing left in the Gaussian component
            model.p_t = f64::MIN_POSITIVE;
        } else {
            let mu = resp.iter().zip(samples).map(|(r, x)| r * x).sum::<f64>() / sum_r;
            let var = resp
                .iter()
                .zip(samples)
                .map(|(r, x)| r * (x - mu).powi(2))
                .sum::<f64>()
                / sum_r;
            model.p_t = (sum_r / n).clamp(f64::MIN_POSITIVE, 1.0);
            model.mu = mu;
            model.sigma = var.sqrt().max(sigma_floor);
        }
        let next = model.log_likelihood(samples);
        if next > best.1 {
            best = (model, next);
        }
        if (next - ll).abs() < LOG_LIKELIHOOD_TOL {
            return Ok(MixtureFit {
                model: best.0,
                log_likelihood: best.1,
                iterations: iteration,
                converged: true,
            });
        }
        ll = next;
    }
    Ok(MixtureFit {
        model: best.0,
        log_likelihood: best.1,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and `model`.
pub fn empirical_cdf_distance(samples: &[f64], model: &MixtureModel) -> Result<f64, EstimatorError> {
    if samples.len() < MIN_BATCH_SAMPLES {
        return Err(EstimatorError::TooFewSamples {
            needed: MIN_BATCH_SAMPLES,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = model.cdf(*x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(d.clamp(0.0, 1.0))
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{EstimatorError, GrowthChart};
use crate::biometric::{Biometric, GestationalAge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Prior truth probability.
    pub p_t0: f64,
    /// Prior weight on `p_t`. Large values converge slowly, small ones oscillate.
    pub w0: f64,
    pub w_mu0: f64,
    pub w_sigma2_0: f64,
    /// Credible interval half-width in standard errors.
    pub ci_multiplier: f64,
    /// Half-width of the gestational-age window used for the plausibility
    /// bounds: 3rd centile at GA − window, 97th centile at GA + window.
    pub window_weeks: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            p_t0: 0.75,
            w0: 10.0,
            w_mu0: 2.0,
            w_sigma2_0: 2.0,
            ci_multiplier: 2.0,
            window_weeks: 3.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |what: &str| Err(EstimatorError::InvalidConfig(what.to_string()));
        if !(self.p_t0 > 0.0 && self.p_t0 < 1.0) {
            return bad("p_t0 must lie in (0, 1)");
        }
        for (name, w) in [
            ("w0", self.w0),
            ("w_mu0", self.w_mu0),
            ("w_sigma2_0", self.w_sigma2_0),
            ("ci_multiplier", self.ci_multiplier),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.window_weeks.is_finite() && self.window_weeks >= 0.0) {
            return bad("window_weeks must be non-negative");
        }
        Ok(())
    }
}

/// Outcome of the plausibility check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Reject,
}

/// Published view of a [`MixtureState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    pub mu: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_t: f64,
    pub n_accepted: u64,
    pub n_rejected: u64,
}

/// Recursive Gaussian + uniform mixture estimate for one biometric.
///
/// Invariants: `0 < p_t < 1`, `sigma2 > 0`, `lower < mu < upper`,
/// `w >= w0 > 0`, `w_mu > 0`, `w_sigma2 > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    p_t: f64,
    mu: f64,
    sigma2: f64,
    lower: f64,
    upper: f64,
    w: f64,
    w0: f64,
    w_mu: f64,
    w_sigma2: f64,
    ci_multiplier: f64,
    n_accepted: u64,
    n_rejected: u64,
}

impl MixtureState {
    /// Fresh state with prior `mu`, `sigma` and the nuisance window
    /// `[lower, upper]`, weighted by `cfg`.
    pub fn new(
        mu: f64,
        sigma: f64,
        lower: f64,
        upper: f64,
        cfg: &EstimatorConfig,
    ) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let state = Self {
            p_t: cfg.p_t0,
            mu,
            sigma2: sigma * sigma,
            lower,
            upper,
            w: cfg.w0,
            w0: cfg.w0,
            w_mu: cfg.w_mu0,
            w_sigma2: cfg.w_sigma2_0,
            ci_multiplier: cfg.ci_multiplier,
            n_accepted: 0,
            n_rejected: 0,
        };
        state
            .check_invariants()
            .map_err(EstimatorError::InvalidState)?;
        Ok(state)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let all_finite = [
            self.p_t,
            self.mu,
            self.sigma2,
            self.lower,
            self.upper,
            self.w,
            self.w_mu,
            self.w_sigma2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(format!("non-finite field in {self:?}"));
        }
        if !(self.p_t > 0.0 && self.p_t < 1.0) {
            return Err(format!("p_t = {} outside (0, 1)", self.p_t));
        }
        if !(self.sigma2 > 0.0) {
            return Err(format!("sigma2 = {} not positive", self.sigma2));
        }
        if !(self.lower < self.mu && self.mu < self.upper) {
            return Err(format!(
                "mu = {} outside ({}, {})",
                self.mu, self.lower, self.upper
            ));
        }
        if !(self.w0 > 0.0 && self.w >= self.w0 && self.w_mu > 0.0 && self.w_sigma2 > 0.0) {
            return Err(format!(
                "weights out of range: w={} w0={} w_mu={} w_sigma2={}",
                self.w, self.w0, self.w_mu, self.w_sigma2
            ));
        }
        Ok(())
    }

    pub fn p_t(&self) -> f64 {
        self.p_t
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn weights(&self) -> (f64, f64, f64) {
        (self.w, self.w_mu, self.w_sigma2)
    }

    pub fn n_accepted(&self) -> u64 {
        self.n_accepted
    }

    pub fn n_rejected(&self) -> u64 {
        self.n_rejected
    }

    /// Closed-interval anatomical plausibility check. A rejection is counted
    /// and leaves everything else untouched.
    pub fn plausibility_gate(&mut self, x: f64) -> GateDecision {
        if x >= self.lower && x <= self.upper {
            GateDecision::Accept
        } else {
            self.n_rejected += 1;
            GateDecision::Reject
        }
    }

    /// Posterior probability that `x` came from the Gaussian component,
    /// evaluated in log-odds form so extreme states cannot overflow.
    pub fn posterior_truth_prob(&self, x: f64) -> f64 {
        let log_normal =
            -0.5 * (2.0 * PI * self.sigma2).ln() - (x - self.mu).powi(2) / (2.0 * self.sigma2);
        let log_odds = log_normal + self.p_t.ln() + (self.upper - self.lower).ln()
            - (1.0 - self.p_t).ln();
        1.0 / (1.0 + (-log_odds).exp())
    }

    /// Folds in one plausible measurement and returns its truth posterior.
    ///
    /// The posterior is taken from the pre-update state and the variance term
    /// uses the previous mean.
    pub fn update(&mut self, x: f64) -> Result<f64, EstimatorError> {
        if !(x >= self.lower && x <= self.upper) {
            return Err(EstimatorError::Implausible {
                x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let p = self.posterior_truth_prob(x);
        let mu_prev = self.mu;
        self.p_t = (p + self.w * self.p_t) / (self.w + 1.0);
        self.mu = (x * p + self.w_mu * mu_prev) / (p + self.w_mu);
        self.sigma2 = ((x - mu_prev).powi(2) * p + self.w_sigma2 * self.sigma2) / (p + self.w_sigma2);
        self.w += 1.0;
        self.w_mu += p;
        self.w_sigma2 += p;
        self.n_accepted += 1;
        Ok(p)
    }

    /// Plausibility gate followed by an update. `None` means rejected.
    pub fn observe(&mut self, x: f64) -> Option<f64> {
        match self.plausibility_gate(x) {
            GateDecision::Accept => self.update(x).ok(),
            GateDecision::Reject => None,
        }
    }

    /// `σ / √W_σ²`
    pub fn standard_error(&self) -> f64 {
        self.sigma2.sqrt() / self.w_sigma2.sqrt()
    }

    pub fn snapshot(&self) -> EstimateSnapshot {
        let se = self.standard_error();
        EstimateSnapshot {
            mu: self.mu,
            sigma_hat: se,
            ci_low: self.mu - self.ci_multiplier * se,
            ci_high: self.mu + self.ci_multiplier * se,
            p_t: self.p_t,
            n_accepted: self.n_accepted,
            n_rejected: self.n_rejected,
        }
    }
}

/// Prior state from the growth chart: the median at `ga`, a spread matching
/// the 3rd–97th centile band, and the plausibility window
/// `[c3(ga − w), c97(ga + w)]` clamped to the chart domain.
pub fn init_estimator(
    biometric: Biometric,
    ga: GestationalAge,
    chart: &GrowthChart,
    cfg: &EstimatorConfig,
) -> Result<MixtureState, EstimatorError> {
    cfg.validate()?;
    let (lo, hi) = chart
        .domain(biometric)
        .ok_or(EstimatorError::MissingBiometric(biometric))?;
    let g = ga.days() as f64;
    if g < lo || g > hi {
        return Err(EstimatorError::GaOutOfRange { biometric, ga });
    }
    let here = chart.centiles(biometric, g)?;
    let window = 7.0 * cfg.window_weeks;
    let lower = chart.centiles(biometric, (g - window).max(lo))?.c3;
    let upper = chart.centiles(biometric, (g + window).min(hi))?.c97;
    let sigma0 = (here.c97 - here.c3) / 4.0;
    MixtureState::new(here.c50, sigma0, lower, upper, cfg)
}

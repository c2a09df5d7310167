//! Agreement between paired measurements.
//!
//! MSD is the root-mean-square difference, reported in millimetres.
//! Percentages are relative to the mean of the reference values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::RunReport;
use super::PipelineError;
use crate::biometric::Biometric;

/// Identifies one subject (or scan) across estimate and reference sets.
pub type SubjectKey = String;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanRow {
    pub mean: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    pub bias_mm: f64,
    pub bias_pct: f64,
    pub msd_mm: f64,
    pub msd_pct: f64,
    pub mad_mm: f64,
    pub mad_pct: f64,
    /// Sample standard deviation of the differences (zero for a single pair).
    pub sd_mm: f64,
    pub sd_pct: f64,
    /// Fraction of pairs with |difference| within the supplied limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_limit: Option<f64>,
    pub bland_altman: Vec<BlandAltmanRow>,
}

/// Statistics of `estimate − reference` over matched pairs.
pub fn agreement(
    estimate: &[f64],
    reference: &[f64],
    limit_mm: Option<f64>,
) -> Result<AgreementStats, PipelineError> {
    if estimate.len() != reference.len() {
        return Err(PipelineError::Config(format!(
            "{} estimates vs {} reference values",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(PipelineError::EmptyIntersection("no paired values".into()));
    }
    let n = estimate.len() as f64;
    let diffs: Vec<f64> = estimate.iter().zip(reference).map(|(e, r)| e - r).collect();
    let bias = diffs.iter().sum::<f64>() / n;
    let msd = (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let mad = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let sd = if diffs.len() > 1 {
        (diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let ref_mean = reference.iter().sum::<f64>() / n;
    let pct = |v: f64| if ref_mean != 0.0 { 100.0 * v / ref_mean } else { f64::NAN };
    Ok(AgreementStats {
        n: diffs.len(),
        bias_mm: bias,
        bias_pct: pct(bias),
        msd_mm: msd,
        msd_pct: pct(msd),
        mad_mm: mad,
        mad_pct: pct(mad),
        sd_mm: sd,
        sd_pct: pct(sd),
        within_limit: limit_mm
            .map(|l| diffs.iter().filter(|d| d.abs() <= l).count() as f64 / n),
        bland_altman: estimate
            .iter()
            .zip(reference)
            .map(|(e, r)| BlandAltmanRow {
                mean: 0.5 * (e + r),
                diff: e - r,
            })
            .collect(),
    })
}

/// Per-biometric agreement of whole-scan estimates with reference values,
/// matched by subject. Biometrics without any matched subject are omitted.
pub fn compare(
    estimates: &BTreeMap<SubjectKey, RunReport>,
    reference: &BTreeMap<SubjectKey, BTreeMap<Biometric, f64>>,
    limits: &BTreeMap<Biometric, f64>,
) -> Result<BTreeMap<Biometric, AgreementStats>, PipelineError> {
    let mut out = BTreeMap::new();
    for b in Biometric::ALL {
        let (mut est, mut refs) = (Vec::new(), Vec::new());
        for (subject, report) in estimates {
            let Some(r) = reference.get(subject).and_then(|m| m.get(&b)) else {
                continue;
            };
            match report.estimate(b) {
                Some(s) if s.n_accepted > 0 => {
                    est.push(s.mu);
                    refs.push(*r);
                }
                _ => {}
            }
        }
        if !est.is_empty() {
            out.insert(b, agreement(&est, &refs, limits.get(&b).copied())?);
        }
    }
    if out.is_empty() {
        return Err(PipelineError::EmptyIntersection(
            "no subject has both an estimate and a reference value".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetestStats {
    pub pairs: usize,
    /// Pairs where either scan accepted no measurement of this biometric.
    pub excluded: usize,
    pub stats: AgreementStats,
    /// RMS over pairs of `√(σ̂₁² + σ̂₂²)`, the spread the standard errors predict.
    pub predicted_sd_mm: f64,
}

/// Second-scan minus first-scan agreement for each biometric.
pub fn test_retest(
    pairs: &[(RunReport, RunReport)],
) -> Result<BTreeMap<Biometric, RetestStats>, PipelineError> {
    let mut out = BTreeMap::new();
    for b in Biometric::ALL {
        let (mut first, mut second, mut var) = (Vec::new(), Vec::new(), 0.0);
        let mut excluded = 0;
        for (r1, r2) in pairs {
            match (r1.estimate(b), r2.estimate(b)) {
                (Some(s1), Some(s2)) if s1.n_accepted > 0 && s2.n_accepted > 0 => {
                    first.push(s1.mu);
                    second.push(s2.mu);
                    var += s1.sigma_hat.powi(2) + s2.sigma_hat.powi(2);
                }
                _ => excluded += 1,
            }
        }
        if first.is_empty() {
            continue;
        }
        let n = first.len();
        out.insert(
            b,
            RetestStats {
                pairs: n,
                excluded,
                stats: agreement(&second, &first, None)?,
                predicted_sd_mm: (var / n as f64).sqrt(),
            },
        );
    }
    if out.is_empty() {
        return Err(PipelineError::EmptyIntersection(
            "no biometric was measured in both scans of any pair".into(),
        ));
    }
    Ok(out)
}

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::gates::{gate_chain, resolve_scale, Disposition, RejectReason, ScaleTracker};
use super::record::{ingest, FrameRecord, LineError};
use super::PipelineError;
use crate::biometric::{Biometric, GestationalAge};
use crate::estimator::{init_estimator, EstimateSnapshot, GrowthChart, MixtureState};

pub const TIMESERIES_HEADER: &str =
    "frame,t,biometric,mu_mm,sigma_hat_mm,ci_low_mm,ci_high_mm,p_t,n_accepted";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub accepted: u64,
    pub frozen: u64,
    pub confidence: u64,
    pub geometry: u64,
    pub eccentricity: u64,
    pub dsc: u64,
    pub plausibility: u64,
}

impl DispositionCounts {
    pub fn record(&mut self, d: &Disposition) {
        let slot = match d {
            Disposition::Accepted { .. } => &mut self.accepted,
            Disposition::Rejected(RejectReason::Frozen) => &mut self.frozen,
            Disposition::Rejected(RejectReason::Confidence) => &mut self.confidence,
            Disposition::Rejected(RejectReason::Geometry) => &mut self.geometry,
            Disposition::Rejected(RejectReason::Eccentricity) => &mut self.eccentricity,
            Disposition::Rejected(RejectReason::Dsc) => &mut self.dsc,
            Disposition::Rejected(RejectReason::Plausibility) => &mut self.plausibility,
        };
        *slot += 1;
    }

    pub fn total(&self) -> u64 {
        self.accepted
            + self.frozen
            + self.confidence
            + self.geometry
            + self.eccentricity
            + self.dsc
            + self.plausibility
    }

    /// Frames that produced a measurement.
    pub fn geometry_valid(&self) -> u64 {
        self.accepted + self.eccentricity + self.dsc + self.plausibility
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricReport {
    pub lower_mm: f64,
    pub upper_mm: f64,
    #[serde(rename = "final")]
    pub final_estimate: EstimateSnapshot,
    pub routed: u64,
    pub counts: DispositionCounts,
    /// Accepted share of geometry-valid frames; absent when there were none.
    pub acceptance_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub frame: u64,
    pub t: f64,
    pub biometric: Biometric,
    pub snapshot: EstimateSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub ga: GestationalAge,
    pub frames_total: u64,
    pub frames_unrouted: u64,
    #[serde(default)]
    pub lines_skipped: u64,
    pub biometrics: BTreeMap<Biometric, BiometricReport>,
    /// One entry per accepted measurement, in stream order.
    #[serde(skip)]
    pub timeseries: Vec<TimePoint>,
}

impl RunReport {
    pub fn estimate(&self, b: Biometric) -> Option<&EstimateSnapshot> {
        self.biometrics.get(&b).map(|r| &r.final_estimate)
    }
}

/// Processes records in order. One estimator is started for every biometric
/// the chart covers.
pub fn run_records(
    records: &[FrameRecord],
    chart: &GrowthChart,
    cfg: &RunConfig,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let mut states: BTreeMap<Biometric, MixtureState> = BTreeMap::new();
    for b in chart.biometrics() {
        let s = init_estimator(b, cfg.ga, chart, &cfg.estimator)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        states.insert(b, s);
    }
    if states.is_empty() {
        return Err(PipelineError::Config("growth chart is empty".into()));
    }
    let mut counts: BTreeMap<Biometric, DispositionCounts> =
        states.keys().map(|b| (*b, DispositionCounts::default())).collect();
    let mut tracker = ScaleTracker::default();
    let mut timeseries = Vec::new();
    let mut unrouted = 0u64;

    for fr in records {
        let scale = resolve_scale(fr, &cfg.ticks, &mut tracker);
        let out = gate_chain(fr, &cfg.gates, scale, &mut states);
        if out.is_empty() {
            unrouted += 1;
        }
        for (b, d) in out {
            counts.get_mut(&b).expect("counted biometric").record(&d);
            if matches!(d, Disposition::Accepted { .. }) {
                timeseries.push(TimePoint {
                    frame: fr.frame,
                    t: fr.t,
                    biometric: b,
                    snapshot: states[&b].snapshot(),
                });
            }
        }
    }

    let biometrics = states
        .iter()
        .map(|(b, s)| {
            let c = counts[b];
            let valid = c.geometry_valid();
            let (lower_mm, upper_mm) = s.bounds();
            let r = BiometricReport {
                lower_mm,
                upper_mm,
                final_estimate: s.snapshot(),
                routed: c.total(),
                counts: c,
                acceptance_fraction: (valid > 0).then(|| c.accepted as f64 / valid as f64),
            };
            (*b, r)
        })
        .collect();
    Ok(RunReport {
        ga: cfg.ga,
        frames_total: records.len() as u64,
        frames_unrouted: unrouted,
        lines_skipped: 0,
        biometrics,
        timeseries,
    })
}

/// Ingests a JSONL stream and runs it. Skipped lines are returned alongside.
pub fn run<R: BufRead>(
    reader: R,
    chart: &GrowthChart,
    cfg: &RunConfig,
    strict: bool,
) -> Result<(RunReport, Vec<LineError>), PipelineError> {
    let ingested = ingest(reader, strict)?;
    let mut report = run_records(&ingested.records, chart, cfg)?;
    report.lines_skipped = ingested.skipped.len() as u64;
    Ok((report, ingested.skipped))
}

pub fn write_timeseries_csv<W: Write>(w: W, report: &RunReport) -> Result<(), PipelineError> {
    let io = |e: csv::Error| PipelineError::Io(e.to_string());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TIMESERIES_HEADER.split(',')).map_err(io)?;
    for p in &report.timeseries {
        let s = &p.snapshot;
        wr.write_record([
            p.frame.to_string(),
            p.t.to_string(),
            p.biometric.as_str().to_string(),
            s.mu.to_string(),
            s.sigma_hat.to_string(),
            s.ci_low.to_string(),
            s.ci_high.to_string(),
            s.p_t.to_string(),
            s.n_accepted.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| PipelineError::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub n: usize,
    pub covered: usize,
    pub fraction: f64,
}

/// Share of estimates whose credible interval contains the true value.
pub fn ci_coverage<'a, I>(pairs: I) -> Coverage
where
    I: IntoIterator<Item = (&'a EstimateSnapshot, f64)>,
{
    let (mut n, mut covered) = (0usize, 0usize);
    for (s, truth) in pairs {
        n += 1;
        if s.ci_low <= truth && truth <= s.ci_high {
            covered += 1;
        }
    }
    Coverage {
        n,
        covered,
        fraction: if n == 0 { 0.0 } else { covered as f64 / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biometric::Plane;
    use crate::pipeline::Payload;

    fn cfg() -> RunConfig {
        RunConfig::new(GestationalAge::from_weeks_days(20, 3))
    }

    fn femur(frame: u64, v: f64, conf: f64) -> FrameRecord {
        FrameRecord {
            frame,
            t: frame as f64 / 30.0,
            plane: Plane::Femur,
            conf,
            payload: Payload::Measurement {
                values: BTreeMap::from([(Biometric::Fl, v)]),
            },
            scale_mm_per_px: None,
            scanline: None,
            frozen: false,
        }
    }

    #[test]
    fn empty_stream_reports_priors() {
        let chart = GrowthChart::synthetic();
        let r = run_records(&[], &chart, &cfg()).unwrap();
        assert_eq!(r.frames_total, 0);
        for (b, br) in &r.biometrics {
            assert_eq!(br.final_estimate.n_accepted, 0);
            assert_eq!(br.acceptance_fraction, None);
            let c = chart.centiles(*b, 143.0).unwrap();
            assert!((br.final_estimate.mu - c.c50).abs() < 1e-12);
        }
        assert!(r.timeseries.is_empty());
    }

    #[test]
    fn counts_reconcile() {
        let mut recs = vec![femur(0, 33.0, 0.99), femur(1, 33.5, 0.5), femur(2, 99.0, 0.99)];
        let mut frozen = femur(3, 33.0, 0.99);
        frozen.frozen = true;
        recs.push(frozen);
        let mut bg = femur(4, 33.0, 0.99);
        bg.plane = Plane::Background;
        recs.push(bg);
        let r = run_records(&recs, &GrowthChart::synthetic(), &cfg()).unwrap();
        let fl = &r.biometrics[&Biometric::Fl];
        assert_eq!(fl.routed, 4);
        assert_eq!(fl.counts.total(), 4);
        assert_eq!((fl.counts.accepted, fl.counts.confidence, fl.counts.plausibility, fl.counts.frozen), (1, 1, 1, 1));
        assert_eq!(fl.acceptance_fraction, Some(0.5));
        assert_eq!(r.frames_unrouted, 1);
        assert_eq!(r.timeseries.len(), 1);
    }

    #[test]
    fn csv_and_json_are_stable() {
        let recs: Vec<_> = (0..20).map(|i| femur(i, 32.0 + (i % 5) as f64 * 0.5, 0.99)).collect();
        let chart = GrowthChart::synthetic();
        let a = run_records(&recs, &chart, &cfg()).unwrap();
        let b = run_records(&recs, &chart, &cfg()).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_timeseries_csv(&mut ca, &a).unwrap();
        write_timeseries_csv(&mut cb, &b).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert_eq!(text.lines().next().unwrap(), TIMESERIES_HEADER);
        assert_eq!(text.lines().count(), 21);
        let json = serde_json::to_string(&a).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.biometrics, a.biometrics);
        assert!(json.contains("\"final\""));
    }

    #[test]
    fn coverage_counts() {
        let s = EstimateSnapshot {
            mu: 1.0,
            sigma_hat: 0.1,
            ci_low: 0.8,
            ci_high: 1.2,
            p_t: 0.8,
            n_accepted: 3,
            n_rejected: 0,
        };
        let c = ci_coverage([(&s, 1.0), (&s, 1.2), (&s, 1.3)]);
        assert_eq!((c.n, c.covered), (3, 2));
        assert_eq!(ci_coverage(std::iter::empty()).fraction, 0.0);
    }
}

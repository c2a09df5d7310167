use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::biometric::{Biometric, GestationalAge};

const SYNTHETIC_CHART: &str = include_str!("../../data/synthetic_chart.csv");

/// One row of the growth-chart file
/// (`biometric,ga_days,c3_mm,c50_mm,c97_mm`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartRow {
    pub biometric: Biometric,
    pub ga_days: f64,
    pub c3_mm: f64,
    pub c50_mm: f64,
    pub c97_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centiles {
    pub c3: f64,
    pub c50: f64,
    pub c97: f64,
}

/// Piecewise-linear 3rd/50th/97th centile curves per biometric.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthChart {
    curves: BTreeMap<Biometric, Vec<ChartRow>>,
}

impl GrowthChart {
    pub fn from_rows(rows: Vec<ChartRow>) -> Result<Self, EstimatorError> {
        let mut curves: BTreeMap<Biometric, Vec<ChartRow>> = BTreeMap::new();
        for row in rows {
            curves.entry(row.biometric).or_default().push(row);
        }
        for (b, rows) in curves.iter_mut() {
            rows.sort_by(|p, q| p.ga_days.total_cmp(&q.ga_days));
            for r in rows.iter() {
                let finite = [r.ga_days, r.c3_mm, r.c50_mm, r.c97_mm]
                    .iter()
                    .all(|v| v.is_finite());
                if !finite || !(r.c3_mm < r.c50_mm && r.c50_mm < r.c97_mm) {
                    return Err(EstimatorError::InvalidChart(format!(
                        "{b} at {} days: centiles must satisfy c3 < c50 < c97",
                        r.ga_days
                    )));
                }
            }
            for w in rows.windows(2) {
                let (p, q) = (w[0], w[1]);
                if q.ga_days <= p.ga_days {
                    return Err(EstimatorError::InvalidChart(format!(
                        "{b}: duplicate gestational age {} days",
                        q.ga_days
                    )));
                }
                if q.c3_mm < p.c3_mm || q.c50_mm < p.c50_mm || q.c97_mm < p.c97_mm {
                    return Err(EstimatorError::InvalidChart(format!(
                        "{b}: centiles decrease between {} and {} days",
                        p.ga_days, q.ga_days
                    )));
                }
            }
        }
        Ok(Self { curves })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, EstimatorError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<ChartRow>, _>>()
            .map_err(|e| EstimatorError::InvalidChart(e.to_string()))?;
        if rows.is_empty() {
            return Err(EstimatorError::InvalidChart("no rows".into()));
        }
        Self::from_rows(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self, EstimatorError> {
        let file = std::fs::File::open(path)
            .map_err(|e| EstimatorError::InvalidChart(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    /// The chart shipped with the crate, matching the simulator's default truths.
    pub fn synthetic() -> Self {
        Self::from_reader(SYNTHETIC_CHART.as_bytes()).expect("bundled chart is valid")
    }

    pub fn synthetic_csv() -> &'static str {
        SYNTHETIC_CHART
    }

    pub fn biometrics(&self) -> impl Iterator<Item = Biometric> + '_ {
        self.curves.keys().copied()
    }

    /// Inclusive GA domain in days.
    pub fn domain(&self, biometric: Biometric) -> Option<(f64, f64)> {
        let rows = self.curves.get(&biometric)?;
        Some((rows.first()?.ga_days, rows.last()?.ga_days))
    }

    /// Centiles at `ga_days` by linear interpolation. Extrapolation is an error.
    pub fn centiles(&self, biometric: Biometric, ga_days: f64) -> Result<Centiles, EstimatorError> {
        let rows = self
            .curves
            .get(&biometric)
            .ok_or(EstimatorError::MissingBiometric(biometric))?;
        let out_of_range = || EstimatorError::GaOutOfRange {
            biometric,
            ga: GestationalAge::from_days(ga_days.max(0.0).round() as u32),
        };
        let (lo, hi) = (rows[0].ga_days, rows[rows.len() - 1].ga_days);
        if !(ga_days >= lo && ga_days <= hi) {
            return Err(out_of_range());
        }
        let i = rows.partition_point(|r| r.ga_days <= ga_days);
        if i == rows.len() || i == 0 {
            let r = rows[i.saturating_sub(1)];
            return Ok(Centiles {
                c3: r.c3_mm,
                c50: r.c50_mm,
                c97: r.c97_mm,
            });
        }
        let (p, q) = (rows[i - 1], rows[i]);
        let t = (ga_days - p.ga_days) / (q.ga_days - p.ga_days);
        let lerp = |a: f64, b: f64| a + t * (b - a);
        Ok(Centiles {
            c3: lerp(p.c3_mm, q.c3_mm),
            c50: lerp(p.c50_mm, q.c50_mm),
            c97: lerp(p.c97_mm, q.c97_mm),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_chart_values() {
        let chart = GrowthChart::synthetic();
        let c = chart.centiles(Biometric::Fl, 143.0).unwrap();
        assert!((c.c50 - 33.0).abs() < 1e-9);
        assert!((c.c3 - 28.0).abs() < 1e-9 && (c.c97 - 38.0).abs() < 1e-9);
        assert_eq!(chart.domain(Biometric::Hc), Some((105.0, 182.0)));
        assert_eq!(chart.biometrics().count(), 5);
    }

    #[test]
    fn extrapolation_is_an_error() {
        let chart = GrowthChart::synthetic();
        assert!(matches!(
            chart.centiles(Biometric::Fl, 210.0),
            Err(EstimatorError::GaOutOfRange { .. })
        ));
        assert!(chart.centiles(Biometric::Fl, 104.9).is_err());
        assert!(chart.centiles(Biometric::Fl, 182.0).is_ok());
    }

    #[test]
    fn rejects_bad_charts() {
        let crossed = "biometric,ga_days,c3_mm,c50_mm,c97_mm\nfl,100,30,29,31\n";
        assert!(GrowthChart::from_reader(crossed.as_bytes()).is_err());
        let shrinking = "biometric,ga_days,c3_mm,c50_mm,c97_mm\nfl,100,28,30,32\nfl,107,27,29,31\n";
        assert!(GrowthChart::from_reader(shrinking.as_bytes()).is_err());
        let garbage = "biometric,ga_days,c3_mm,c50_mm,c97_mm\nknee,100,28,30,32\n";
        assert!(GrowthChart::from_reader(garbage.as_bytes()).is_err());
        assert!(GrowthChart::from_reader("".as_bytes()).is_err());
    }

    #[test]
    fn curves_monotone_and_ordered() {
        let chart = GrowthChart::synthetic();
        for b in Biometric::ALL {
            let mut prev: Option<Centiles> = None;
            for g in 105..=182 {
                let c = chart.centiles(b, g as f64).unwrap();
                assert!(c.c3 < c.c50 && c.c50 < c.c97);
                if let Some(p) = prev {
                    assert!(c.c3 >= p.c3 && c.c50 >= p.c50 && c.c97 >= p.c97);
                }
                prev = Some(c);
            }
        }
    }
}

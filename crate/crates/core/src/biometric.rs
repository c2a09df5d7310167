//! Biometric, standard-plane and gestational-age vocabulary shared by all modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Biometric {
    Hc,
    Bpd,
    Ac,
    Fl,
    Tcd,
}

/// How a biometric is read off the frame geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// Ellipse circumference (HC, AC).
    Circumference,
    /// Minor axis of the head ellipse (BPD).
    HeadMinorAxis,
    /// Distance between two caliper endpoints (FL, TCD).
    Linear,
}

impl Biometric {
    pub const ALL: [Biometric; 5] = [
        Biometric::Hc,
        Biometric::Bpd,
        Biometric::Ac,
        Biometric::Fl,
        Biometric::Tcd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Biometric::Hc => "hc",
            Biometric::Bpd => "bpd",
            Biometric::Ac => "ac",
            Biometric::Fl => "fl",
            Biometric::Tcd => "tcd",
        }
    }

    pub fn kind(self) -> MeasurementKind {
        match self {
            Biometric::Hc | Biometric::Ac => MeasurementKind::Circumference,
            Biometric::Bpd => MeasurementKind::HeadMinorAxis,
            Biometric::Fl | Biometric::Tcd => MeasurementKind::Linear,
        }
    }

    /// Standard plane in which this biometric is measured.
    pub fn plane(self) -> Plane {
        match self {
            Biometric::Hc | Biometric::Bpd => Plane::BrainTv,
            Biometric::Tcd => Plane::BrainCb,
            Biometric::Ac => Plane::Abdominal,
            Biometric::Fl => Plane::Femur,
        }
    }
}

impl fmt::Display for Biometric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Biometric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Biometric::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown biometric {s:?}"))
    }
}

/// Classifier plane label. Labels outside the four biometric planes collapse
/// to `Background`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    BrainTv,
    BrainCb,
    Abdominal,
    Femur,
    #[serde(other)]
    Background,
}

impl Plane {
    pub fn biometrics(self) -> &'static [Biometric] {
        match self {
            Plane::BrainTv => &[Biometric::Hc, Biometric::Bpd],
            Plane::BrainCb => &[Biometric::Tcd],
            Plane::Abdominal => &[Biometric::Ac],
            Plane::Femur => &[Biometric::Fl],
            Plane::Background => &[],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::BrainTv => "brain_tv",
            Plane::BrainCb => "brain_cb",
            Plane::Abdominal => "abdominal",
            Plane::Femur => "femur",
            Plane::Background => "background",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gestational age in whole days. Written as `20w3d`, `20+3` or plain days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GestationalAge(u32);

impl GestationalAge {
    pub const fn from_days(days: u32) -> Self {
        Self(days)
    }

    pub const fn from_weeks_days(weeks: u32, days: u32) -> Self {
        Self(weeks * 7 + days)
    }

    pub fn days(self) -> u32 {
        self.0
    }

    pub fn weeks(self) -> f64 {
        self.0 as f64 / 7.0
    }
}

impl fmt::Display for GestationalAge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}w{}d", self.0 / 7, self.0 % 7)
    }
}

impl FromStr for GestationalAge {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || format!("invalid gestational age {s:?} (expected e.g. 20w3d, 20+3 or 143)");
        if let Ok(days) = t.parse::<u32>() {
            return Ok(Self(days));
        }
        let (w, d) = if let Some((w, rest)) = t.split_once('w') {
            let d = rest.trim_end_matches('d');
            (w, if d.is_empty() { "0" } else { d })
        } else if let Some((w, d)) = t.split_once('+') {
            (w, d)
        } else {
            return Err(bad());
        };
        let weeks: u32 = w.trim().parse().map_err(|_| bad())?;
        let days: u32 = d.trim().parse().map_err(|_| bad())?;
        if days > 6 {
            return Err(bad());
        }
        Ok(Self::from_weeks_days(weeks, days))
    }
}

impl Serialize for GestationalAge {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GestationalAge {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Days(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Days(n) => Ok(Self(n)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

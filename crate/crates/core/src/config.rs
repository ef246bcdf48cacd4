//! System parameters, validation and CSI latency classification.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network dimensions, powers and seeds for one simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of D2D pairs.
    pub kd: usize,
    /// Antennas at every terrestrial terminal.
    pub n: usize,
    /// Satellite antennas.
    pub ms: usize,
    /// RIS elements.
    pub l: usize,
    pub p_s: f64,
    pub p_k: f64,
    pub sigma2: f64,
    pub seed: u64,
    #[serde(default)]
    pub snr_grid_db: Vec<f64>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A config with unit powers and the given dimensions.
    pub fn with_dims(kd: usize, n: usize, ms: usize, l: usize) -> Self {
        SystemConfig {
            kd,
            n,
            ms,
            l,
            p_s: 1.0,
            p_k: 1.0,
            sigma2: 1.0,
            seed: 0,
            snr_grid_db: Vec::new(),
        }
    }

    /// `kd²·n²`, the per-slot RIS constraint count of the single-slot schemes.
    pub fn ris_requirement(&self) -> Option<usize> {
        self.kd
            .checked_mul(self.kd)?
            .checked_mul(self.n)?
            .checked_mul(self.n)
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Fails with the first violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            Some(v) => Err(Error::InvalidConfig(v.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const UNDER_PROVISIONED: &str = "RIS under-provisioned";

pub fn validate(cfg: &SystemConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    for (name, v) in [("kd", cfg.kd), ("n", cfg.n), ("ms", cfg.ms), ("l", cfg.l)] {
        if v < 1 {
            r.violations.push(format!("{name} must be at least 1 (got {v})"));
        }
    }
    for (name, v) in [("p_s", cfg.p_s), ("p_k", cfg.p_k)] {
        if !(v.is_finite() && v > 0.0) {
            r.violations.push(format!("{name} must be a positive finite power (got {v})"));
        }
    }
    if !(cfg.sigma2.is_finite() && cfg.sigma2 >= 0.0) {
        r.violations
            .push(format!("sigma2 must be finite and nonnegative (got {})", cfg.sigma2));
    }
    if cfg.snr_grid_db.iter().any(|x| !x.is_finite()) {
        r.violations.push("snr_grid_db contains a non-finite value".into());
    }
    if cfg.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
        r.violations.push("snr_grid_db must be strictly increasing".into());
    }
    match cfg.ris_requirement() {
        None => r.violations.push("kd²·n² overflows".into()),
        Some(need) if cfg.l < need && r.violations.is_empty() => r.warnings.push(format!(
            "{UNDER_PROVISIONED}: l = {} < kd²·n² = {need}",
            cfg.l
        )),
        Some(_) => {}
    }
    r
}

/// Timing of the CSI available at a transmitter, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiLatency {
    pub t_p: f64,
    pub t_f: f64,
    pub t_c: f64,
    pub t_acq: f64,
}

impl CsiLatency {
    /// `t_f / (t_c − t_p)`.
    pub fn ratio(&self) -> Result<f64> {
        self.check()?;
        Ok(self.t_f / (self.t_c - self.t_p))
    }

    fn check(&self) -> Result<()> {
        let CsiLatency { t_p, t_f, t_c, t_acq } = *self;
        if ![t_p, t_f, t_c, t_acq].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidLatency("non-finite time".into()));
        }
        if t_c <= t_p {
            return Err(Error::InvalidLatency(format!(
                "coherence time {t_c} must exceed past time {t_p}"
            )));
        }
        if t_p < 0.0 {
            return Err(Error::InvalidLatency(format!("negative past time {t_p}")));
        }
        if t_f < 0.0 {
            return Err(Error::InvalidLatency(format!("negative feedback delay {t_f}")));
        }
        if t_acq < t_p || t_acq > t_c {
            return Err(Error::InvalidLatency(format!(
                "acquisition instant {t_acq} outside [{t_p}, {t_c}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CsiType {
    Instantaneous,
    ModeratelyDelayed,
    Delayed,
    None,
}

impl CsiType {
    pub fn short_name(self) -> &'static str {
        match self {
            CsiType::Instantaneous => "inst",
            CsiType::ModeratelyDelayed => "moderate",
            CsiType::Delayed => "delayed",
            CsiType::None => "none",
        }
    }
}

impl fmt::Display for CsiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for CsiType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inst" | "instantaneous" => Ok(CsiType::Instantaneous),
            "moderate" | "moderately-delayed" => Ok(CsiType::ModeratelyDelayed),
            "delayed" => Ok(CsiType::Delayed),
            "none" => Ok(CsiType::None),
            other => Err(Error::InvalidConfig(format!("unknown CSI type {other:?}"))),
        }
    }
}

/// Classifies CSI freshness from its latency.
///
/// The comparisons avoid forming the ratio so that a common rescaling of
/// all four times never changes the answer. An acquisition exactly at
/// `t_p + t_f` counts as instantaneous.
pub fn classify_csi(lat: &CsiLatency) -> Result<CsiType> {
    lat.check()?;
    let window = lat.t_c - lat.t_p;
    if lat.t_f == 0.0 {
        Ok(CsiType::Instantaneous)
    } else if lat.t_f >= window {
        Ok(CsiType::Delayed)
    } else if lat.t_acq <= lat.t_p + lat.t_f {
        Ok(CsiType::Instantaneous)
    } else {
        Ok(CsiType::ModeratelyDelayed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lat(t_p: f64, t_f: f64, t_c: f64, t_acq: f64) -> CsiLatency {
        CsiLatency { t_p, t_f, t_c, t_acq }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_csi(&lat(0.0, 0.0, 1.0, 0.5)).unwrap(), CsiType::Instantaneous);
        assert_eq!(classify_csi(&lat(0.0, 2.0, 1.0, 1.0)).unwrap(), CsiType::Delayed);
        assert_eq!(
            classify_csi(&lat(0.0, 0.3, 1.0, 0.9)).unwrap(),
            CsiType::ModeratelyDelayed
        );
    }

    #[test]
    fn breakpoint_is_instantaneous() {
        assert_eq!(classify_csi(&lat(0.0, 0.25, 1.0, 0.25)).unwrap(), CsiType::Instantaneous);
        assert_eq!(classify_csi(&lat(0.0, 1.0, 1.0, 0.5)).unwrap(), CsiType::Delayed);
    }

    #[test]
    fn rejects_bad_latency() {
        assert!(classify_csi(&lat(1.0, 0.0, 1.0, 1.0)).is_err());
        assert!(classify_csi(&lat(0.0, -0.1, 1.0, 0.5)).is_err());
        assert!(classify_csi(&lat(0.2, 0.1, 1.0, 0.1)).is_err());
        assert!(lat(2.0, 0.0, 1.0, 1.5).ratio().is_err());
    }

    fn base() -> SystemConfig {
        SystemConfig::with_dims(6, 3, 21, 324)
    }

    #[test]
    fn validate_examples() {
        let ok = base().validate();
        assert!(ok.is_valid() && ok.warnings.is_empty());

        let mut under = base();
        under.l = 100;
        let r = under.validate();
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].starts_with(UNDER_PROVISIONED));

        let mut empty = base();
        empty.kd = 0;
        assert!(!empty.validate().is_valid());
        assert!(empty.ensure_valid().is_err());
    }

    #[test]
    fn validate_powers_and_grid() {
        let mut c = base();
        c.p_s = 0.0;
        c.sigma2 = -1.0;
        c.snr_grid_db = vec![40.0, 40.0];
        assert_eq!(c.validate().violations.len(), 3);
        c = base();
        c.sigma2 = 0.0;
        c.snr_grid_db = vec![30.0, 40.0, 60.0];
        assert!(c.validate().is_valid());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let good = r#"{"kd":2,"n":2,"ms":6,"l":16,"p_s":1,"p_k":1,"sigma2":1,"seed":7}"#;
        let cfg = SystemConfig::from_json(good).unwrap();
        assert_eq!(cfg.kd, 2);
        assert!(cfg.snr_grid_db.is_empty());
        let bad = r#"{"kd":2,"n":2,"ms":6,"l":16,"p_s":1,"p_k":1,"sigma2":1,"seed":7,"x":1}"#;
        assert!(SystemConfig::from_json(bad).is_err());
    }

    #[test]
    fn csi_names_round_trip() {
        for t in [
            CsiType::Instantaneous,
            CsiType::ModeratelyDelayed,
            CsiType::Delayed,
            CsiType::None,
        ] {
            assert_eq!(t.short_name().parse::<CsiType>().unwrap(), t);
        }
    }

    proptest! {
        #[test]
        fn classify_scale_invariant(
            t_p in 0.0f64..5.0,
            width in 0.01f64..5.0,
            t_f in 0.0f64..10.0,
            frac in 0.0f64..=1.0,
            scale in prop::sample::select(vec![0.5, 2.0, 4.0, 1024.0]),
        ) {
            let t_c = t_p + width;
            let l = lat(t_p, t_f, t_c, t_p + frac * width);
            let s = lat(t_p * scale, t_f * scale, t_c * scale, (t_p + frac * width) * scale);
            prop_assert_eq!(classify_csi(&l).unwrap(), classify_csi(&s).unwrap());
        }

        #[test]
        fn classify_single_breakpoint(
            t_p in 0.0f64..1.0,
            width in 0.1f64..2.0,
            ratio in 0.01f64..0.99,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let t_c = t_p + width;
            let t_f = ratio * width;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c_lo = classify_csi(&lat(t_p, t_f, t_c, t_p + lo * width)).unwrap();
            let c_hi = classify_csi(&lat(t_p, t_f, t_c, t_p + hi * width)).unwrap();
            // monotone: once moderately delayed, stays so later in the slot
            if c_lo == CsiType::ModeratelyDelayed {
                prop_assert_eq!(c_hi, CsiType::ModeratelyDelayed);
            }
            prop_assert!(c_lo != CsiType::Delayed && c_lo != CsiType::None);
        }
    }
}

//! Achievable rates with interference treated as colored Gaussian noise,
//! and the DoF read off their high-SNR slope.

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::ris::Rx;
use crate::scheme::{PowerClass, SinkModel};

/// Transmit powers at one SNR point: `P_k = snr·σ²`, `P_s = P_k·p_s/p_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Powers {
    pub sat: f64,
    pub d2d: f64,
    pub sigma2: f64,
}

impl Powers {
    pub fn at_snr_db(snr_db: f64, sigma2: f64, p_s: f64, p_k: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rates need a positive noise power (got {sigma2})"
            )));
        }
        if !(p_s > 0.0 && p_k > 0.0 && snr_db.is_finite()) {
            return Err(Error::InvalidConfig("rates need positive powers and a finite SNR".into()));
        }
        let d2d = 10f64.powf(snr_db / 10.0) * sigma2;
        Ok(Powers {
            sat: d2d * p_s / p_k,
            d2d,
            sigma2,
        })
    }

    fn of(&self, class: PowerClass) -> f64 {
        match class {
            PowerClass::Satellite => self.sat,
            PowerClass::D2d => self.d2d,
        }
    }
}

fn log2_det_hpd(m: &CMatrix, what: &'static str) -> Result<f64> {
    let hermitian = (m + m.adjoint()).scale(0.5);
    let chol = Cholesky::new(hermitian)
        .ok_or(Error::Decomposition(what))?;
    Ok(chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.re.log2())
        .sum())
}

fn covariance(rows: usize, terms: impl Iterator<Item = (f64, CMatrix)>) -> CMatrix {
    let mut cov = CMatrix::zeros(rows, rows);
    for (p, map) in terms {
        cov += (&map * map.adjoint()).scale(p);
    }
    cov
}

/// `log₂det(I + S·Q⁻¹)/slots` in bits per slot, where `S` is the desired
/// covariance and `Q = σ²·noise_cov + interference`.
pub fn sink_rate(model: &SinkModel, powers: &Powers) -> Result<f64> {
    let rows = model.noise_cov.nrows();
    if rows == 0 || model.slots == 0 {
        return Ok(0.0);
    }
    let q = model.noise_cov.scale(powers.sigma2)
        + covariance(
            rows,
            model
                .interference
                .iter()
                .map(|t| (powers.of(t.power), t.map.clone())),
        );
    let s = covariance(
        rows,
        model
            .desired
            .iter()
            .map(|t| (powers.of(t.power), t.map.clone())),
    );
    // det(I + S·Q⁻¹) = det(Q + S)/det(Q)
    let total = log2_det_hpd(&(&q + &s), "signal-plus-noise covariance")?;
    let base = log2_det_hpd(&q, "noise covariance")?;
    Ok(((total - base) / model.slots as f64).max(0.0))
}

pub fn sum_rate(sinks: &[SinkModel], powers: &Powers) -> Result<f64> {
    sinks.iter().map(|s| sink_rate(s, powers)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkSlope {
    pub sink: Rx,
    pub slope: f64,
    /// Streams over slots.
    pub counted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofEstimate {
    pub per_sink: Vec<SinkSlope>,
    pub total: f64,
}

impl DofEstimate {
    /// Largest per-sink gap between slope and counted DoF.
    pub fn max_gap(&self) -> f64 {
        self.per_sink
            .iter()
            .map(|s| (s.slope - s.counted).abs())
            .fold(0.0, f64::max)
    }
}

/// Rate slope between two SNR points, in units of `log₂(1+SNR)`.
pub fn empirical_dof(
    sinks: &[SinkModel],
    snr_db: (f64, f64),
    sigma2: f64,
    p_s: f64,
    p_k: f64,
) -> Result<DofEstimate> {
    let (lo, hi) = snr_db;
    if lo < 30.0 || hi <= lo {
        return Err(Error::InvalidConfig(format!(
            "slope needs 30 dB ≤ snr₁ < snr₂ (got {lo}, {hi})"
        )));
    }
    let p_lo = Powers::at_snr_db(lo, sigma2, p_s, p_k)?;
    let p_hi = Powers::at_snr_db(hi, sigma2, p_s, p_k)?;
    let span = (1.0 + 10f64.powf(hi / 10.0)).log2() - (1.0 + 10f64.powf(lo / 10.0)).log2();
    let per_sink = sinks
        .iter()
        .map(|s| {
            Ok(SinkSlope {
                sink: s.sink,
                slope: (sink_rate(s, &p_hi)? - sink_rate(s, &p_lo)?) / span,
                counted: s.streams as f64 / s.slots as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_sink.iter().map(|s| s.slope).sum();
    Ok(DofEstimate { per_sink, total })
}

/// A sink whose decoded output is `√P·I_n` with no interference.
#[cfg(test)]
pub(crate) fn identity_sink(n: usize, slots: usize) -> SinkModel {
    use crate::scheme::Term;
    SinkModel {
        sink: Rx::SatUser,
        desired: vec![Term {
            map: CMatrix::identity(n, n),
            power: PowerClass::Satellite,
        }],
        interference: Vec::new(),
        noise_cov: CMatrix::identity(n, n),
        slots,
        streams: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::Term;

    #[test]
    fn identity_channel_rate() {
        let s = identity_sink(3, 1);
        let p = Powers::at_snr_db(20.0, 1.0, 1.0, 1.0).unwrap();
        let r = sink_rate(&s, &p).unwrap();
        assert!((r - 3.0 * 101f64.log2()).abs() < 1e-10);
    }

    #[test]
    fn identity_slope_is_stream_count() {
        let e = empirical_dof(&[identity_sink(4, 1)], (40.0, 60.0), 1.0, 1.0, 1.0).unwrap();
        assert!((e.total - 4.0).abs() < 1e-6);
        assert!(e.max_gap() < 1e-6);
        let e = empirical_dof(&[identity_sink(4, 2)], (40.0, 60.0), 1.0, 1.0, 1.0).unwrap();
        assert!((e.total - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_desired_slope_is_zero() {
        let mut s = identity_sink(2, 1);
        s.desired[0].map = CMatrix::zeros(2, 2);
        let e = empirical_dof(&[s], (40.0, 60.0), 1.0, 1.0, 1.0).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn full_interference_kills_slope() {
        let mut s = identity_sink(2, 1);
        s.interference.push(Term {
            map: CMatrix::identity(2, 2),
            power: PowerClass::D2d,
        });
        let e = empirical_dof(&[s], (40.0, 60.0), 1.0, 1.0, 1.0).unwrap();
        assert!(e.total.abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Powers::at_snr_db(10.0, 0.0, 1.0, 1.0).is_err());
        assert!(empirical_dof(&[identity_sink(1, 1)], (20.0, 60.0), 1.0, 1.0, 1.0).is_err());
        assert!(empirical_dof(&[identity_sink(1, 1)], (60.0, 40.0), 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn satellite_power_ratio() {
        let p = Powers::at_snr_db(10.0, 2.0, 4.0, 1.0).unwrap();
        assert!((p.d2d - 20.0).abs() < 1e-12);
        assert!((p.sat - 80.0).abs() < 1e-12);
    }
}

//! The three interference-management constructions and what they share:
//! payloads, single-slot plans, physical propagation and sink models for
//! rate evaluation.

pub mod dcsi;
pub mod icsi;
pub mod nocsi;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64};
use crate::ris::{self, LinkSpec, RisDesign, Rx, Tx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    NoCsi,
    Icsi,
    Dcsi,
}

impl SchemeId {
    pub fn name(self) -> &'static str {
        match self {
            SchemeId::NoCsi => "nocsi",
            SchemeId::Icsi => "icsi",
            SchemeId::Dcsi => "dcsi",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nocsi" => Ok(SchemeId::NoCsi),
            "icsi" => Ok(SchemeId::Icsi),
            "dcsi" => Ok(SchemeId::Dcsi),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Which transmit power scales a signal term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PowerClass {
    Satellite,
    D2d,
}

/// `CN(0, 1)` symbols.
pub fn random_symbols<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVector {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    CVector::from_fn(len, |_, _| C64::new(normal.sample(rng), normal.sample(rng)))
}

/// One symbol vector per source of a single-slot scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Payloads {
    pub sat: CVector,
    pub d2d: Vec<CVector>,
}

impl Payloads {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, sat_len: usize, kd: usize, d2d_len: usize) -> Self {
        let sat = random_symbols(rng, sat_len);
        let d2d = (0..kd).map(|_| random_symbols(rng, d2d_len)).collect();
        Payloads { sat, d2d }
    }

    pub fn zeros(sat_len: usize, kd: usize, d2d_len: usize) -> Self {
        Payloads {
            sat: CVector::zeros(sat_len),
            d2d: vec![CVector::zeros(d2d_len); kd],
        }
    }

    fn check(&self, sat_len: usize, kd: usize, d2d_len: usize) -> Result<()> {
        if self.sat.len() != sat_len
            || self.d2d.len() != kd
            || self.d2d.iter().any(|x| x.len() != d2d_len)
        {
            return Err(Error::DimensionMismatch(format!(
                "payloads: expected {sat_len} satellite and {kd}×{d2d_len} D2D symbols"
            )));
        }
        Ok(())
    }
}

/// SVD factors of `h·w = a·Λ·bᴴ` with `w̄ = w·b` and `v = aᴴ`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub w_bar: CMatrix,
    pub v: CMatrix,
    pub a: CMatrix,
    pub b: CMatrix,
    pub lambda: Vec<f64>,
}

pub fn svd_normalize(h: &CMatrix, w: &CMatrix) -> Result<SvdFactors> {
    let d = linalg::svd(&(h * w))?;
    Ok(SvdFactors {
        w_bar: w * &d.v,
        v: d.u.adjoint(),
        a: d.u,
        b: d.v,
        lambda: d.s,
    })
}

/// Leading `d` columns of the `n×n` identity.
pub(crate) fn first_columns(n: usize, d: usize) -> CMatrix {
    CMatrix::identity(n, d)
}

/// A complete single-slot transmission plan.
#[derive(Debug, Clone)]
pub struct SchemePlan {
    pub scheme: SchemeId,
    /// Satellite precoder, `ms × streams.sat`.
    pub w_s: CMatrix,
    /// D2D precoders, `n × streams.d2d`.
    pub w_kt: Vec<CMatrix>,
    /// D2D decoders, `streams.d2d × n`.
    pub v_kr: Vec<CMatrix>,
    /// Satellite-user decoder, `streams.sat × n`.
    pub v_c: CMatrix,
    pub ris: RisDesign,
    pub streams: Streams,
    pub slots: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Streams {
    pub sat: usize,
    pub d2d: usize,
}

impl SchemePlan {
    /// Every (source, sink) link with its decoder and precoder.
    pub fn links(&self, ch: &ChannelRealization) -> Vec<LinkSpec> {
        let kd = ch.kd();
        let mut out = Vec::with_capacity((kd + 1) * (kd + 1));
        out.push(LinkSpec {
            tx: Tx::Satellite,
            rx: Rx::SatUser,
            desired: true,
            decoder: self.v_c.clone(),
            direct: ch.h_sc.clone(),
            cascade: None,
            precoder: self.w_s.clone(),
        });
        for i in 0..kd {
            out.push(LinkSpec {
                tx: Tx::D2d(i),
                rx: Rx::SatUser,
                desired: false,
                decoder: self.v_c.clone(),
                direct: ch.h_ktc[i].clone(),
                cascade: Some((ch.h_rc.clone(), ch.h_ktr[i].clone())),
                precoder: self.w_kt[i].clone(),
            });
        }
        for j in 0..kd {
            out.push(LinkSpec {
                tx: Tx::Satellite,
                rx: Rx::D2d(j),
                desired: false,
                decoder: self.v_kr[j].clone(),
                direct: ch.h_skr[j].clone(),
                cascade: None,
                precoder: self.w_s.clone(),
            });
            for i in 0..kd {
                out.push(LinkSpec {
                    tx: Tx::D2d(i),
                    rx: Rx::D2d(j),
                    desired: i == j,
                    decoder: self.v_kr[j].clone(),
                    direct: ch.h_ktkr[i][j].clone(),
                    cascade: Some((ch.h_rkr[j].clone(), ch.h_ktr[i].clone())),
                    precoder: self.w_kt[i].clone(),
                });
            }
        }
        out
    }

    pub fn verify(&self, ch: &ChannelRealization) -> Result<ris::ResidualReport> {
        ris::verify(&self.links(ch), &self.ris.alpha)
    }

    /// Decoded-signal models of every sink, for rate evaluation.
    pub fn sinks(&self, ch: &ChannelRealization) -> Vec<SinkModel> {
        let links = self.links(ch);
        let mut sinks: Vec<Rx> = links.iter().map(|l| l.rx).collect();
        sinks.dedup();
        sinks
            .into_iter()
            .map(|rx| {
                let mut model = SinkModel {
                    sink: rx,
                    desired: Vec::new(),
                    interference: Vec::new(),
                    noise_cov: CMatrix::zeros(0, 0),
                    slots: self.slots,
                    streams: 0,
                };
                for l in links.iter().filter(|l| l.rx == rx) {
                    let class = match l.tx {
                        Tx::Satellite => PowerClass::Satellite,
                        Tx::D2d(_) => PowerClass::D2d,
                    };
                    let term = Term {
                        map: l.effective(&self.ris.alpha),
                        power: class,
                    };
                    if l.desired {
                        model.streams = term.map.ncols();
                        model.noise_cov = &l.decoder * l.decoder.adjoint();
                        model.desired.push(term);
                    } else {
                        model.interference.push(term);
                    }
                }
                model
            })
            .collect()
    }

    /// Noiseless transmission of `payloads` followed by linear decoding.
    pub fn transmit(&self, ch: &ChannelRealization, payloads: &Payloads) -> Result<Vec<CVector>> {
        let kd = ch.kd();
        payloads.check(self.streams.sat, kd, self.streams.d2d)?;
        let mut out = Vec::with_capacity(kd + 1);
        let alpha = &self.ris.alpha;
        let mut y_c = &ch.h_sc * (&self.w_s * &payloads.sat);
        for i in 0..kd {
            let h = &ch.h_ktc[i] + linalg::cascade(&ch.h_rc, alpha, &ch.h_ktr[i]);
            y_c += h * (&self.w_kt[i] * &payloads.d2d[i]);
        }
        out.push(&self.v_c * y_c);
        for j in 0..kd {
            let mut y = &ch.h_skr[j] * (&self.w_s * &payloads.sat);
            for i in 0..kd {
                let h = &ch.h_ktkr[i][j] + linalg::cascade(&ch.h_rkr[j], alpha, &ch.h_ktr[i]);
                y += h * (&self.w_kt[i] * &payloads.d2d[i]);
            }
            out.push(&self.v_kr[j] * y);
        }
        Ok(out)
    }

    pub fn dof_counted(&self, kd: usize) -> Ratio<i64> {
        Ratio::new((self.streams.sat + kd * self.streams.d2d) as i64, self.slots as i64)
    }

    /// Runs one noiseless transmission and checks the whole-system blocks.
    pub fn execute(&self, ch: &ChannelRealization, payloads: &Payloads) -> Result<SchemeOutcome> {
        let recovered = self.transmit(ch, payloads)?;
        let mut sent = vec![payloads.sat.clone()];
        sent.extend(payloads.d2d.iter().cloned());
        let report = self.verify(ch)?;
        Ok(SchemeOutcome {
            scheme: self.scheme,
            recovery_err: recovery_error(&sent, &recovered),
            sent,
            recovered,
            interference_residual: report.max_interference,
            ris_residual: self.ris.max_residual,
            min_desired_sv: report.min_desired_sv,
            dof_counted: self.dof_counted(ch.kd()),
            slots: self.slots,
            sinks: self.sinks(ch),
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// A linear map from one group of symbols into a sink's decoded signal.
#[derive(Debug, Clone)]
pub struct Term {
    pub map: CMatrix,
    pub power: PowerClass,
}

/// What a sink sees after its decoder: desired and interfering terms and
/// the decoder-shaped noise covariance (in units of `σ²`).
#[derive(Debug, Clone)]
pub struct SinkModel {
    pub sink: Rx,
    pub desired: Vec<Term>,
    pub interference: Vec<Term>,
    pub noise_cov: CMatrix,
    pub slots: usize,
    /// Streams this sink is designed to recover.
    pub streams: usize,
}

#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub scheme: SchemeId,
    /// Satellite payload first, then D2D transmitters in order.
    pub sent: Vec<CVector>,
    /// Satellite user first, then D2D receivers in order.
    pub recovered: Vec<CVector>,
    pub recovery_err: f64,
    pub interference_residual: f64,
    pub ris_residual: f64,
    pub min_desired_sv: f64,
    pub dof_counted: Ratio<i64>,
    pub slots: usize,
    pub sinks: Vec<SinkModel>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Largest per-sink relative error; absolute where the sent vector is zero.
pub fn recovery_error(sent: &[CVector], recovered: &[CVector]) -> f64 {
    sent.iter()
        .zip(recovered)
        .map(|(s, r)| {
            if s.len() != r.len() {
                return f64::INFINITY;
            }
            let err = (r - s).norm();
            let scale = s.norm();
            if scale > 0.0 {
                err / scale
            } else {
                err
            }
        })
        .fold(0.0, f64::max)
}

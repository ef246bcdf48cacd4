//! Block-fading channel generation for the satellite, the D2D pairs and the
//! UAV-mounted RIS.
//!
//! Satellite links follow a Shadowed-Rician law (a scattered complex
//! Gaussian term plus a Nakagami-faded line-of-sight term with uniform
//! phase). Terrestrial and RIS links are Nakagami-m with uniform phase.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    pub sr_b: f64,
    pub sr_m: f64,
    pub sr_omega: f64,
    pub nak_m: f64,
    pub nak_omega: f64,
}

/// Average-shadowing land-mobile satellite values for the Shadowed-Rician
/// part and unit-power Nakagami-2 for the rest.
impl Default for FadingParams {
    fn default() -> Self {
        FadingParams {
            sr_b: 0.126,
            sr_m: 10.1,
            sr_omega: 0.835,
            nak_m: 2.0,
            nak_omega: 1.0,
        }
    }
}

impl FadingParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidFading(format!("{what} = {v}")));
        if !(self.sr_b.is_finite() && self.sr_b > 0.0) {
            return bad("sr_b", self.sr_b);
        }
        if !(self.sr_m.is_finite() && self.sr_m > 0.0) {
            return bad("sr_m", self.sr_m);
        }
        if !(self.sr_omega.is_finite() && self.sr_omega >= 0.0) {
            return bad("sr_omega", self.sr_omega);
        }
        if !(self.nak_m.is_finite() && self.nak_m >= 0.5) {
            return bad("nak_m", self.nak_m);
        }
        if !(self.nak_omega.is_finite() && self.nak_omega > 0.0) {
            return bad("nak_omega", self.nak_omega);
        }
        Ok(())
    }

    /// Mean power `E|h|²` of a Shadowed-Rician entry.
    pub fn sr_mean_power(&self) -> f64 {
        2.0 * self.sr_b + self.sr_omega
    }
}

/// Which distributions feed the channel generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FadingModel {
    Standard(FadingParams),
    /// Unit-variance circular complex Gaussian on every link.
    GenericGaussian,
}

impl Default for FadingModel {
    fn default() -> Self {
        FadingModel::Standard(FadingParams::default())
    }
}

impl FadingModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FadingModel::Standard(p) => p.validate(),
            FadingModel::GenericGaussian => Ok(()),
        }
    }
}

fn gamma(shape: f64, scale: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, scale).map_err(|e| Error::InvalidFading(e.to_string()))
}

fn unit_phasor<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::from_polar(1.0, rng.random::<f64>() * TAU)
}

/// Shadowed-Rician matrix: `c + ζ·e^{jθ}` per entry with `c ~ CN(0, 2b)` and
/// `ζ ~ Nakagami(m, Ω)`.
pub fn sample_shadowed_rician<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    params: &FadingParams,
    rng: &mut R,
) -> Result<CMatrix> {
    params.validate()?;
    let scatter = Normal::new(0.0, params.sr_b.sqrt())
        .map_err(|e| Error::InvalidFading(e.to_string()))?;
    let los = if params.sr_omega > 0.0 {
        Some(gamma(params.sr_m, params.sr_omega / params.sr_m)?)
    } else {
        None
    };
    let mut out = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let c = C64::new(scatter.sample(rng), scatter.sample(rng));
            let z = match &los {
                Some(g) => unit_phasor(rng) * g.sample(rng).sqrt(),
                None => C64::new(0.0, 0.0),
            };
            out[(i, j)] = c + z;
        }
    }
    Ok(out)
}

/// Nakagami-m matrix with uniform phase: `|h|² ~ Gamma(m, Ω/m)`.
pub fn sample_nakagami<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    params: &FadingParams,
    rng: &mut R,
) -> Result<CMatrix> {
    params.validate()?;
    let power = gamma(params.nak_m, params.nak_omega / params.nak_m)?;
    let mut out = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let amp = power.sample(rng).sqrt();
            out[(i, j)] = unit_phasor(rng) * amp;
        }
    }
    Ok(out)
}

/// `CN(0, 1)` entries.
pub fn sample_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let mut out = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = C64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    out
}

/// Every channel matrix of one coherence slot.
///
/// Indices are 0-based: `h_ktkr[i][j]` is transmitter `i` to receiver `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Satellite to satellite user, `n×ms`.
    pub h_sc: CMatrix,
    /// Satellite to D2D receiver `k`, `n×ms`.
    pub h_skr: Vec<CMatrix>,
    /// D2D transmitter `i` to receiver `j`, `n×n`.
    pub h_ktkr: Vec<Vec<CMatrix>>,
    /// D2D transmitter `i` to the satellite user, `n×n`.
    pub h_ktc: Vec<CMatrix>,
    /// RIS to satellite user, `n×l`.
    pub h_rc: CMatrix,
    /// RIS to D2D receiver `j`, `n×l`.
    pub h_rkr: Vec<CMatrix>,
    /// D2D transmitter `i` to RIS, `l×n`.
    pub h_ktr: Vec<CMatrix>,
    pub slot: usize,
}

impl ChannelRealization {
    pub fn kd(&self) -> usize {
        self.h_skr.len()
    }

    pub fn n(&self) -> usize {
        self.h_sc.nrows()
    }

    pub fn ms(&self) -> usize {
        self.h_sc.ncols()
    }

    pub fn l(&self) -> usize {
        self.h_rc.ncols()
    }

    fn matrices(&self) -> impl Iterator<Item = (&'static str, &CMatrix)> {
        std::iter::once(("h_sc", &self.h_sc))
            .chain(self.h_skr.iter().map(|m| ("h_skr", m)))
            .chain(self.h_ktkr.iter().flatten().map(|m| ("h_ktkr", m)))
            .chain(self.h_ktc.iter().map(|m| ("h_ktc", m)))
            .chain(std::iter::once(("h_rc", &self.h_rc)))
            .chain(self.h_rkr.iter().map(|m| ("h_rkr", m)))
            .chain(self.h_ktr.iter().map(|m| ("h_ktr", m)))
    }

    /// Checks every dimension against the config and that entries are finite.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let (kd, n, ms, l) = (cfg.kd, cfg.n, cfg.ms, cfg.l);
        let mismatch = |what: &str| Err(Error::DimensionMismatch(format!("channel {what}")));
        if self.h_skr.len() != kd
            || self.h_ktkr.len() != kd
            || self.h_ktkr.iter().any(|r| r.len() != kd)
            || self.h_ktc.len() != kd
            || self.h_rkr.len() != kd
            || self.h_ktr.len() != kd
        {
            return mismatch("link count");
        }
        for (name, m) in self.matrices() {
            let want = match name {
                "h_sc" | "h_skr" => (n, ms),
                "h_ktkr" | "h_ktc" => (n, n),
                "h_rc" | "h_rkr" => (n, l),
                _ => (l, n),
            };
            if m.shape() != want {
                return mismatch(name);
            }
            crate::linalg::ensure_finite(m, name)?;
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    satellite: bool,
    fading: &FadingModel,
    rng: &mut R,
) -> Result<CMatrix> {
    match fading {
        FadingModel::GenericGaussian => Ok(sample_gaussian(rows, cols, rng)),
        FadingModel::Standard(p) if satellite => sample_shadowed_rician(rows, cols, p, rng),
        FadingModel::Standard(p) => sample_nakagami(rows, cols, p, rng),
    }
}

/// Draws one slot. The draw order is fixed so a seed pins every matrix.
pub fn generate_slot<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    fading: &FadingModel,
    rng: &mut R,
    slot: usize,
) -> Result<ChannelRealization> {
    cfg.ensure_valid()?;
    fading.validate()?;
    let (kd, n, ms, l) = (cfg.kd, cfg.n, cfg.ms, cfg.l);
    let h_sc = draw(n, ms, true, fading, rng)?;
    let h_skr = (0..kd)
        .map(|_| draw(n, ms, true, fading, rng))
        .collect::<Result<Vec<_>>>()?;
    let h_ktkr = (0..kd)
        .map(|_| (0..kd).map(|_| draw(n, n, false, fading, rng)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let h_ktc = (0..kd)
        .map(|_| draw(n, n, false, fading, rng))
        .collect::<Result<Vec<_>>>()?;
    let h_rc = draw(n, l, false, fading, rng)?;
    let h_rkr = (0..kd)
        .map(|_| draw(n, l, false, fading, rng))
        .collect::<Result<Vec<_>>>()?;
    let h_ktr = (0..kd)
        .map(|_| draw(l, n, false, fading, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelRealization {
        h_sc,
        h_skr,
        h_ktkr,
        h_ktc,
        h_rc,
        h_rkr,
        h_ktr,
        slot,
    })
}

/// Independent slots numbered `1..=t_count`.
pub fn generate_block<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    fading: &FadingModel,
    rng: &mut R,
    t_count: usize,
) -> Result<Vec<ChannelRealization>> {
    if t_count == 0 {
        return Err(Error::InvalidConfig("a block needs at least one slot".into()));
    }
    (1..=t_count)
        .map(|t| generate_slot(cfg, fading, rng, t))
        .collect()
}

/// Row-major `[re, im]` entries behind a dimensions header.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDump {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixDump {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        MatrixDump {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixDump {
    fn into_matrix(self) -> Result<CMatrix> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "dump holds {} entries for {}×{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        let m = CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            C64::new(re, im)
        });
        crate::linalg::ensure_finite(&m, "channel dump")?;
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealizationDump {
    slot: usize,
    kd: usize,
    n: usize,
    ms: usize,
    l: usize,
    h_sc: MatrixDump,
    h_skr: Vec<MatrixDump>,
    h_ktkr: Vec<Vec<MatrixDump>>,
    h_ktc: Vec<MatrixDump>,
    h_rc: MatrixDump,
    h_rkr: Vec<MatrixDump>,
    h_ktr: Vec<MatrixDump>,
}

fn load_all(v: Vec<MatrixDump>) -> Result<Vec<CMatrix>> {
    v.into_iter().map(MatrixDump::into_matrix).collect()
}

impl ChannelRealization {
    pub fn to_json(&self) -> Result<String> {
        let dump = RealizationDump {
            slot: self.slot,
            kd: self.kd(),
            n: self.n(),
            ms: self.ms(),
            l: self.l(),
            h_sc: (&self.h_sc).into(),
            h_skr: self.h_skr.iter().map(Into::into).collect(),
            h_ktkr: self
                .h_ktkr
                .iter()
                .map(|r| r.iter().map(Into::into).collect())
                .collect(),
            h_ktc: self.h_ktc.iter().map(Into::into).collect(),
            h_rc: (&self.h_rc).into(),
            h_rkr: self.h_rkr.iter().map(Into::into).collect(),
            h_ktr: self.h_ktr.iter().map(Into::into).collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: RealizationDump = serde_json::from_str(text)?;
        let (kd, n, ms, l) = (d.kd, d.n, d.ms, d.l);
        let out = ChannelRealization {
            h_sc: d.h_sc.into_matrix()?,
            h_skr: load_all(d.h_skr)?,
            h_ktkr: d
                .h_ktkr
                .into_iter()
                .map(load_all)
                .collect::<Result<Vec<_>>>()?,
            h_ktc: load_all(d.h_ktc)?,
            h_rc: d.h_rc.into_matrix()?,
            h_rkr: load_all(d.h_rkr)?,
            h_ktr: load_all(d.h_ktr)?,
            slot: d.slot,
        };
        out.check(&SystemConfig::with_dims(kd, n, ms, l))?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

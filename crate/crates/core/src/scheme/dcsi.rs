//! Space-time interference management with delayed satellite CSI.
//!
//! A session spans `kd + 2` slots:
//!
//! * slot 1: the satellite alone sends `(kd+1)·n` symbols; every D2D
//!   receiver feeds its observation back to its transmitter;
//! * slots `2..=kd+1`: transmitter `t − 2` retransmits its feedback while
//!   the satellite sends the sum of the other receivers' slot-1
//!   observations, so every receiver sees the same combination of satellite
//!   symbols; the remaining transmitters send fresh data;
//! * slot `kd+2`: the satellite is silent and every transmitter repeats its
//!   last fresh vector.
//!
//! The satellite user stacks slots `1..=kd+1` into a square system. Each
//! D2D receiver subtracts the slot in which its own transmitter
//! retransmitted, which cancels the common satellite term.
//!
//! Transmitters are 0-based; slots are 1-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::ris::{self, Family, Label, NullConstraint, RisDesign, Rx, Tx};
use crate::scheme::{random_symbols, recovery_error, PowerClass, SchemeId, SchemeOutcome, SinkModel, Term};

/// Slots in which transmitter `k` sends fresh data.
pub fn fresh_slots(k: usize, kd: usize) -> Vec<usize> {
    (2..=kd + 1).filter(|&t| t - 2 != k).collect()
}

/// Transmitter retransmitting its feedback in phase-2 slot `t`.
pub fn retransmitter(t: usize) -> usize {
    t - 2
}

pub fn last_fresh_slot(k: usize, kd: usize) -> usize {
    if k + 1 == kd {
        kd
    } else {
        kd + 1
    }
}

pub fn session_slots(kd: usize) -> usize {
    kd + 2
}

/// Scalar RIS constraints per phase-2 slot, `(kd²+1)·n²`.
pub fn constraints_per_slot(kd: usize, n: usize) -> usize {
    (kd * kd + 1) * n * n
}

/// Satellite symbols plus `kd − 1` fresh vectors per transmitter, in the
/// order of [`fresh_slots`].
#[derive(Debug, Clone, PartialEq)]
pub struct DcsiPayloads {
    pub sat: CVector,
    pub fresh: Vec<Vec<CVector>>,
}

impl DcsiPayloads {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, kd: usize, n: usize) -> Self {
        let sat = random_symbols(rng, (kd + 1) * n);
        let fresh = (0..kd)
            .map(|_| (0..kd - 1).map(|_| random_symbols(rng, n)).collect())
            .collect();
        DcsiPayloads { sat, fresh }
    }

    pub fn zeros(kd: usize, n: usize) -> Self {
        DcsiPayloads {
            sat: CVector::zeros((kd + 1) * n),
            fresh: vec![vec![CVector::zeros(n); kd - 1]; kd],
        }
    }

    fn check(&self, kd: usize, n: usize) -> Result<()> {
        if self.sat.len() != (kd + 1) * n
            || self.fresh.len() != kd
            || self
                .fresh
                .iter()
                .any(|f| f.len() != kd - 1 || f.iter().any(|x| x.len() != n))
        {
            return Err(Error::DimensionMismatch(format!(
                "payloads: expected {} satellite symbols and {kd}×{}×{n} fresh symbols",
                (kd + 1) * n,
                kd - 1
            )));
        }
        Ok(())
    }
}

/// Column layout of the session-wide symbol vector `[x_s; fresh...]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    kd: usize,
    n: usize,
}

impl Layout {
    fn m(&self) -> usize {
        (self.kd + 1) * self.n
    }

    fn width(&self) -> usize {
        self.m() + self.kd * (self.kd - 1) * self.n
    }

    fn fresh_col(&self, k: usize, slot: usize) -> usize {
        let idx = fresh_slots(k, self.kd)
            .iter()
            .position(|&t| t == slot)
            .expect("slot is fresh for this transmitter");
        self.m() + (k * (self.kd - 1) + idx) * self.n
    }

    fn fresh_cols(&self, k: usize) -> Vec<usize> {
        let start = self.m() + k * (self.kd - 1) * self.n;
        (start..start + (self.kd - 1) * self.n).collect()
    }

    /// `rows × width` map with `block` placed at column `col`.
    fn embed(&self, block: &CMatrix, col: usize) -> CMatrix {
        let mut out = CMatrix::zeros(block.nrows(), self.width());
        out.columns_mut(col, block.ncols()).copy_from(block);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Silent,
    Fresh,
    Retransmit,
    Repeat,
    Broadcast,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum TraceEvent {
    Slot {
        slot: usize,
        phase: u8,
        satellite: Role,
        transmitters: Vec<Role>,
        constraints: usize,
        ris_max_residual: f64,
    },
    Decode {
        sink: Rx,
        streams: usize,
        recovery_err: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CsiKind {
    /// `H_{s,k}` restricted to the satellite's first `(kd+1)·n` antennas.
    SatFull,
    /// `H_{s,k}` restricted to the first `n` antennas.
    SatActive,
    /// `H_{k,k}`.
    Direct,
}

#[derive(Debug, Clone)]
struct CachedCsi {
    slot: usize,
    kind: CsiKind,
    k: usize,
    m: CMatrix,
}

/// Causal state of one delayed-CSI session.
#[derive(Debug, Clone)]
pub struct SessionState {
    kd: usize,
    n: usize,
    /// Last completed slot, 0 before phase 1.
    pub slot: usize,
    pub phase: u8,
    csi_cache: Vec<CachedCsi>,
    /// Satellite-side copy of its slot-1 symbols.
    sat_symbols: CVector,
    /// Slot-1 observation held by each transmitter.
    feedback: Vec<CVector>,
    /// Fresh vectors held by each transmitter, by slot.
    sent_fresh: Vec<BTreeMap<usize, CVector>>,
    /// `W_k[t]`, identity for retransmission slots.
    pub precoder_log: Vec<BTreeMap<usize, CMatrix>>,
    /// Received vectors per D2D receiver, slot `t` at index `t − 1`.
    pub rx_log: Vec<Vec<CVector>>,
    pub satuser_log: Vec<CVector>,
    /// Per-slot decoders `V_r[t]` known at each receiver.
    rx_decoders: Vec<BTreeMap<usize, CMatrix>>,
    /// Effective desired blocks `V_r[t]·(H_rr + GΘF_r)·W_r[t]`.
    rx_desired: Vec<BTreeMap<usize, CMatrix>>,
    /// Rows of the satellite user's stacked system, one block per slot.
    satuser_rows: Vec<CMatrix>,
    /// Received maps over the session symbol vector, per sink and slot.
    rx_maps: Vec<Vec<CMatrix>>,
    satuser_maps: Vec<CMatrix>,
    pub designs: Vec<RisDesign>,
    merge_residual: f64,
    pub trace: Vec<TraceEvent>,
}

impl SessionState {
    pub fn new(kd: usize, n: usize) -> Result<Self> {
        if kd < 2 {
            return Err(Error::NotApplicable(
                "space-time scheme needs at least two D2D pairs".into(),
            ));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(SessionState {
            kd,
            n,
            slot: 0,
            phase: 0,
            csi_cache: Vec::new(),
            sat_symbols: CVector::zeros(0),
            feedback: Vec::new(),
            sent_fresh: vec![BTreeMap::new(); kd],
            precoder_log: vec![BTreeMap::new(); kd],
            rx_log: vec![Vec::new(); kd],
            satuser_log: Vec::new(),
            rx_decoders: vec![BTreeMap::new(); kd],
            rx_desired: vec![BTreeMap::new(); kd],
            satuser_rows: Vec::new(),
            rx_maps: vec![Vec::new(); kd],
            satuser_maps: Vec::new(),
            designs: Vec::new(),
            merge_residual: 0.0,
            trace: Vec::new(),
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            kd: self.kd,
            n: self.n,
        }
    }

    /// Largest merge-constraint residual seen so far.
    pub fn merge_residual(&self) -> f64 {
        self.merge_residual
    }

    /// Reads delayed CSI; only slots strictly before `now` are visible.
    fn cached(&self, kind: CsiKind, k: usize, slot: usize, now: usize) -> Result<&CMatrix> {
        if slot >= now {
            return Err(Error::SessionOrder(format!(
                "slot {now} asked for CSI of slot {slot}"
            )));
        }
        self.csi_cache
            .iter()
            .find(|c| c.kind == kind && c.k == k && c.slot == slot)
            .map(|c| &c.m)
            .ok_or_else(|| Error::SessionOrder(format!("no cached CSI for slot {slot}")))
    }

    /// Slot indices of every cached matrix.
    pub fn cached_slots(&self) -> Vec<usize> {
        self.csi_cache.iter().map(|c| c.slot).collect()
    }

    fn store_csi(&mut self, ch: &ChannelRealization) {
        let n = self.n;
        for k in 0..self.kd {
            self.csi_cache.push(CachedCsi {
                slot: ch.slot,
                kind: CsiKind::SatActive,
                k,
                m: ch.h_skr[k].columns(0, n).into_owned(),
            });
            self.csi_cache.push(CachedCsi {
                slot: ch.slot,
                kind: CsiKind::Direct,
                k,
                m: ch.h_ktkr[k][k].clone(),
            });
        }
    }

    fn expect_slot(&self, ch: &ChannelRealization, t: usize) -> Result<()> {
        if self.slot + 1 != t || ch.slot != t {
            return Err(Error::SessionOrder(format!(
                "expected slot {t} after slot {}, got channels of slot {}",
                self.slot, ch.slot
            )));
        }
        if ch.kd() != self.kd || ch.n() != self.n {
            return Err(Error::DimensionMismatch("session and channel sizes differ".into()));
        }
        Ok(())
    }

    /// `W_k[t]`: identity at `t = 2`, otherwise
    /// `H_kk[t]⁻¹·H_{s,k}[t]·H_{s,k}[t−1]⁻¹·H_kk[t−1]·W_k[t−1]`.
    fn chained_precoder(&self, ch: &ChannelRealization, k: usize, t: usize) -> Result<CMatrix> {
        let n = self.n;
        if t == 2 {
            return Ok(linalg::identity(n));
        }
        let prev_w = self
            .precoder_log
            .get(k)
            .and_then(|log| log.get(&(t - 1)))
            .ok_or_else(|| Error::SessionOrder(format!("no precoder for slot {}", t - 1)))?;
        let prev_s = self.cached(CsiKind::SatActive, k, t - 1, t)?;
        let prev_h = self.cached(CsiKind::Direct, k, t - 1, t)?;
        let cur_s = ch.h_skr[k].columns(0, n).into_owned();
        let inv_h = linalg::inverse(&ch.h_ktkr[k][k], "direct D2D channel")?;
        let inv_prev_s = linalg::inverse(prev_s, "delayed satellite block")?;
        Ok(inv_h * cur_s * inv_prev_s * prev_h * prev_w)
    }

    fn sat_active(ch: &ChannelRealization, r: usize, n: usize) -> CMatrix {
        ch.h_skr[r].columns(0, n).into_owned()
    }

    /// The satellite transmits `x_s[1]` on `(kd+1)·n` antennas while the
    /// D2D transmitters listen.
    pub fn phase1(&mut self, ch: &ChannelRealization, payload_s: &CVector) -> Result<()> {
        self.expect_slot(ch, 1)?;
        let lay = self.layout();
        let m = lay.m();
        if payload_s.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "phase 1 needs {m} satellite symbols (got {})",
                payload_s.len()
            )));
        }
        if ch.ms() < m {
            return Err(Error::NotApplicable(format!(
                "space-time scheme needs ms ≥ (kd+1)·n = {m} (got {})",
                ch.ms()
            )));
        }
        self.sat_symbols = payload_s.clone();
        let h_c = ch.h_sc.columns(0, m).into_owned();
        self.satuser_log.push(&h_c * payload_s);
        self.satuser_maps.push(lay.embed(&h_c, 0));
        self.satuser_rows.push(h_c);
        for r in 0..self.kd {
            let h = ch.h_skr[r].columns(0, m).into_owned();
            let y = &h * payload_s;
            self.rx_log[r].push(y.clone());
            self.rx_maps[r].push(lay.embed(&h, 0));
            self.feedback.push(y);
            self.csi_cache.push(CachedCsi {
                slot: 1,
                kind: CsiKind::SatFull,
                k: r,
                m: h,
            });
        }
        self.store_csi(ch);
        self.trace.push(TraceEvent::Slot {
            slot: 1,
            phase: 1,
            satellite: Role::Broadcast,
            transmitters: vec![Role::Silent; self.kd],
            constraints: 0,
            ris_max_residual: 0.0,
        });
        self.slot = 1;
        self.phase = 1;
        Ok(())
    }

    /// One retransmission slot `t ∈ 2..=kd+1`. `fresh[k]` is ignored for the
    /// retransmitter `t − 2` and required for everyone else.
    pub fn phase2_slot(&mut self, ch: &ChannelRealization, fresh: &[Option<CVector>]) -> Result<()> {
        let t = self.slot + 1;
        if !(2..=self.kd + 1).contains(&t) {
            return Err(Error::SessionOrder(format!("slot {t} is not in phase 2")));
        }
        self.expect_slot(ch, t)?;
        let (kd, n) = (self.kd, self.n);
        let lay = self.layout();
        let rt = retransmitter(t);
        if fresh.len() != kd {
            return Err(Error::DimensionMismatch("one fresh entry per transmitter".into()));
        }

        // satellite: sum of the other receivers' slot-1 observations
        let mut h_bar = CMatrix::zeros(n, lay.m());
        for k in (0..kd).filter(|&k| k != rt) {
            h_bar += self.cached(CsiKind::SatFull, k, 1, t)?;
        }
        let sat_tx = &h_bar * &self.sat_symbols;
        let sat_coeff = lay.embed(&h_bar, 0);

        // transmitters: signal and its map over the session symbols
        let mut signal = Vec::with_capacity(kd);
        let mut coeff = Vec::with_capacity(kd);
        let mut precoders = Vec::with_capacity(kd);
        for k in 0..kd {
            if k == rt {
                let w = linalg::identity(n);
                signal.push(self.feedback[k].clone());
                coeff.push(lay.embed(self.cached(CsiKind::SatFull, k, 1, t)?, 0));
                precoders.push(w);
            } else {
                let x = fresh[k]
                    .as_ref()
                    .filter(|x| x.len() == n)
                    .ok_or_else(|| Error::DimensionMismatch(format!("fresh payload of transmitter {k}")))?;
                let w = self.chained_precoder(ch, k, t)?;
                signal.push(&w * x);
                coeff.push(lay.embed(&w, lay.fresh_col(k, t)));
                self.sent_fresh[k].insert(t, x.clone());
                precoders.push(w);
            }
        }

        let decoders = (0..kd)
            .map(|r| linalg::inverse(&Self::sat_active(ch, r, n), "satellite block at receiver"))
            .collect::<Result<Vec<_>>>()?;

        let constraints = phase2_constraints(ch, rt, &precoders, &decoders);
        let design = ris::solve(&constraints)?;
        let merge = design
            .labels
            .iter()
            .zip(&design.residuals)
            .filter(|(l, _)| l.family == Family::Merge)
            .map(|(_, &r)| r)
            .fold(0.0, f64::max);
        self.merge_residual = self.merge_residual.max(merge);

        let mut roles = vec![Role::Fresh; kd];
        roles[rt] = Role::Retransmit;
        self.receive(ch, &design, Some((&sat_tx, &sat_coeff)), &signal, &coeff, t)?;
        for r in 0..kd {
            if r != rt {
                let eff = effective(ch, &design, r, r) * &precoders[r];
                self.rx_desired[r].insert(t, &decoders[r] * eff);
            }
            self.rx_decoders[r].insert(t, decoders[r].clone());
        }
        self.satuser_rows.push(ch.h_sc.columns(0, n) * &h_bar);
        for (k, w) in precoders.into_iter().enumerate() {
            self.precoder_log[k].insert(t, w);
        }
        self.trace.push(TraceEvent::Slot {
            slot: t,
            phase: 2,
            satellite: Role::Broadcast,
            transmitters: roles,
            constraints: constraints.iter().map(|c| c.scalar_count()).sum(),
            ris_max_residual: design.max_residual,
        });
        self.designs.push(design);
        self.store_csi(ch);
        self.slot = t;
        self.phase = 2;
        Ok(())
    }

    /// Slot `kd+2`: the satellite is silent and every transmitter repeats
    /// its last fresh vector through the chained precoder.
    pub fn phase3(&mut self, ch: &ChannelRealization) -> Result<()> {
        let t = self.kd + 2;
        if self.slot + 1 != t {
            return Err(Error::SessionOrder(format!(
                "phase 3 runs in slot {t}, after slot {}",
                self.slot
            )));
        }
        self.expect_slot(ch, t)?;
        let (kd, n) = (self.kd, self.n);
        let lay = self.layout();
        let mut signal = Vec::with_capacity(kd);
        let mut coeff = Vec::with_capacity(kd);
        let mut precoders = Vec::with_capacity(kd);
        for k in 0..kd {
            let last = last_fresh_slot(k, kd);
            let x = self.sent_fresh[k]
                .get(&last)
                .ok_or_else(|| Error::SessionOrder(format!("transmitter {k} has nothing to repeat")))?;
            let w = self.chained_precoder(ch, k, t)?;
            signal.push(&w * x);
            coeff.push(lay.embed(&w, lay.fresh_col(k, last)));
            precoders.push(w);
        }
        let decoders = (0..kd)
            .map(|r| linalg::inverse(&Self::sat_active(ch, r, n), "satellite block at receiver"))
            .collect::<Result<Vec<_>>>()?;
        let constraints = phase3_constraints(ch, &precoders, &decoders);
        let design = ris::solve(&constraints)?;
        self.receive(ch, &design, None, &signal, &coeff, t)?;
        for r in 0..kd {
            let eff = effective(ch, &design, r, r) * &precoders[r];
            self.rx_desired[r].insert(t, &decoders[r] * eff);
            self.rx_decoders[r].insert(t, decoders[r].clone());
        }
        for (k, w) in precoders.into_iter().enumerate() {
            self.precoder_log[k].insert(t, w);
        }
        self.trace.push(TraceEvent::Slot {
            slot: t,
            phase: 3,
            satellite: Role::Silent,
            transmitters: vec![Role::Repeat; kd],
            constraints: constraints.iter().map(|c| c.scalar_count()).sum(),
            ris_max_residual: design.max_residual,
        });
        self.designs.push(design);
        self.slot = t;
        self.phase = 3;
        Ok(())
    }

    /// Propagates one slot to every sink and logs the observations.
    fn receive(
        &mut self,
        ch: &ChannelRealization,
        design: &RisDesign,
        sat: Option<(&CVector, &CMatrix)>,
        signal: &[CVector],
        coeff: &[CMatrix],
        t: usize,
    ) -> Result<()> {
        let (kd, n) = (self.kd, self.n);
        let width = self.layout().width();
        let alpha = &design.alpha;
        for r in 0..kd {
            let mut y = CVector::zeros(n);
            let mut map = CMatrix::zeros(n, width);
            if let Some((x, c)) = sat {
                let s = Self::sat_active(ch, r, n);
                y += &s * x;
                map += &s * c;
            }
            for k in 0..kd {
                let h = effective(ch, design, k, r);
                y += &h * &signal[k];
                map += h * &coeff[k];
            }
            self.rx_log[r].push(y);
            self.rx_maps[r].push(map);
        }
        if t <= kd + 1 {
            let mut y = CVector::zeros(n);
            let mut map = CMatrix::zeros(n, width);
            if let Some((x, c)) = sat {
                let s = ch.h_sc.columns(0, n).into_owned();
                y += &s * x;
                map += &s * c;
            }
            for k in 0..kd {
                let h = &ch.h_ktc[k] + linalg::cascade(&ch.h_rc, alpha, &ch.h_ktr[k]);
                y += &h * &signal[k];
                map += h * &coeff[k];
            }
            self.satuser_log.push(y);
            self.satuser_maps.push(map);
        }
        Ok(())
    }

    /// The satellite user's `(kd+1)·n` square system over slots `1..=kd+1`.
    pub fn satuser_stack(&self) -> Result<CMatrix> {
        if self.satuser_rows.len() != self.kd + 1 {
            return Err(Error::SessionOrder("satellite user has not seen phase 2".into()));
        }
        linalg::vstack(&self.satuser_rows)
    }

    pub fn decode_satuser(&self) -> Result<CVector> {
        let a = self.satuser_stack()?;
        if linalg::rank(&a)? < a.ncols() {
            return Err(Error::DegenerateChannel(
                "satellite user's stacked system is rank deficient".into(),
            ));
        }
        let y = linalg::vstack(
            &self.satuser_log[..self.kd + 1]
                .iter()
                .map(|v| CMatrix::from_column_slice(v.len(), 1, v.as_slice()))
                .collect::<Vec<_>>(),
        )?;
        linalg::lstsq_min_norm(&a, &y.column(0).into_owned())
    }

    /// Decoder over the receiver's stacked observations of slots
    /// `2..=kd+2`: differences against its own retransmission slot, then
    /// the phase-3 repeat.
    fn d2d_combiner(&self, r: usize) -> Result<CMatrix> {
        let (kd, n) = (self.kd, self.n);
        let reference = r + 2;
        let block = |t: usize| (t - 2) * n;
        let dec = |t: usize| {
            self.rx_decoders[r]
                .get(&t)
                .ok_or_else(|| Error::SessionOrder(format!("receiver {r} has no decoder for slot {t}")))
        };
        let mut out = CMatrix::zeros(kd * n, (kd + 1) * n);
        for (row, &t) in fresh_slots(r, kd).iter().enumerate() {
            out.view_mut((row * n, block(t)), (n, n)).copy_from(dec(t)?);
            let neg = -dec(reference)?;
            out.view_mut((row * n, block(reference)), (n, n)).copy_from(&neg);
        }
        let last = kd + 2;
        out.view_mut(((kd - 1) * n, block(last)), (n, n))
            .copy_from(dec(last)?);
        Ok(out)
    }

    /// Block system for the receiver's `kd − 1` fresh vectors.
    fn d2d_system(&self, r: usize) -> Result<CMatrix> {
        let (kd, n) = (self.kd, self.n);
        let desired = |t: usize| {
            self.rx_desired[r]
                .get(&t)
                .ok_or_else(|| Error::SessionOrder(format!("receiver {r} has no desired block for slot {t}")))
        };
        let slots = fresh_slots(r, kd);
        let mut a = CMatrix::zeros(kd * n, (kd - 1) * n);
        for (idx, &t) in slots.iter().enumerate() {
            a.view_mut((idx * n, idx * n), (n, n)).copy_from(desired(t)?);
        }
        let last_idx = slots.len() - 1;
        a.view_mut(((kd - 1) * n, last_idx * n), (n, n))
            .copy_from(desired(kd + 2)?);
        Ok(a)
    }

    /// Recovers receiver `r`'s fresh vectors, in [`fresh_slots`] order.
    pub fn decode_d2d(&self, r: usize) -> Result<Vec<CVector>> {
        let (kd, n) = (self.kd, self.n);
        if self.phase != 3 || r >= kd {
            return Err(Error::SessionOrder("D2D decoding needs a complete session".into()));
        }
        let a = self.d2d_system(r)?;
        if linalg::rank(&a)? < a.ncols() {
            return Err(Error::DegenerateChannel(format!(
                "receiver {r}: block system is singular"
            )));
        }
        let stacked: Vec<CMatrix> = self.rx_log[r][1..]
            .iter()
            .map(|v| CMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            .collect();
        let y = linalg::vstack(&stacked)?.column(0).into_owned();
        let rhs = self.d2d_combiner(r)? * y;
        let x = linalg::lstsq_min_norm(&a, &rhs)?;
        Ok((0..kd - 1).map(|i| x.rows(i * n, n).into_owned()).collect())
    }

    /// Decoded-signal models of every sink over the whole session.
    pub fn sinks(&self) -> Result<Vec<SinkModel>> {
        let (kd, n) = (self.kd, self.n);
        let lay = self.layout();
        let slots = session_slots(kd);
        let sat_cols: Vec<usize> = (0..lay.m()).collect();
        let split = |map: &CMatrix, desired: &[usize], desired_power: PowerClass| {
            let others: Vec<usize> = (lay.m()..lay.width())
                .filter(|c| !desired.contains(c))
                .collect();
            let mut interference = Vec::new();
            if desired_power != PowerClass::Satellite {
                interference.push(Term {
                    map: map.select_columns(&sat_cols),
                    power: PowerClass::Satellite,
                });
            }
            if !others.is_empty() {
                interference.push(Term {
                    map: map.select_columns(&others),
                    power: PowerClass::D2d,
                });
            }
            let desired = vec![Term {
                map: map.select_columns(desired),
                power: desired_power,
            }];
            (desired, interference)
        };

        let mut out = Vec::with_capacity(kd + 1);
        let user = linalg::vstack(&self.satuser_maps[..kd + 1])?;
        let (desired, interference) = split(&user, &sat_cols, PowerClass::Satellite);
        out.push(SinkModel {
            sink: Rx::SatUser,
            desired,
            interference,
            noise_cov: linalg::identity(user.nrows()),
            slots,
            streams: lay.m(),
        });
        for r in 0..kd {
            let comb = self.d2d_combiner(r)?;
            let raw = linalg::vstack(&self.rx_maps[r][1..])?;
            let (desired, interference) = split(&(&comb * raw), &lay.fresh_cols(r), PowerClass::D2d);
            out.push(SinkModel {
                sink: Rx::D2d(r),
                desired,
                interference,
                noise_cov: &comb * comb.adjoint(),
                slots,
                streams: (kd - 1) * n,
            });
        }
        Ok(out)
    }

    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.trace {
            let _ = writeln!(out, "{}", serde_json::to_string(e)?);
        }
        Ok(out)
    }
}

/// `H_{k,r} + H_{r,r}^{ris}·Θ·H_{k}^{ris}` for transmitter `k`, receiver `r`.
fn effective(ch: &ChannelRealization, design: &RisDesign, k: usize, r: usize) -> CMatrix {
    &ch.h_ktkr[k][r] + linalg::cascade(&ch.h_rkr[r], &design.alpha, &ch.h_ktr[k])
}

fn label(tx: usize, rx: Rx, slot: usize, family: Family) -> Label {
    Label {
        tx: Tx::D2d(tx),
        rx,
        slot,
        family,
    }
}

fn satuser_constraints(ch: &ChannelRealization, precoders: &[CMatrix]) -> Vec<NullConstraint> {
    precoders
        .iter()
        .enumerate()
        .map(|(k, w)| NullConstraint {
            target: &ch.h_ktc[k] * w,
            g_bar: ch.h_rc.clone(),
            f_bar: &ch.h_ktr[k] * w,
            label: label(k, Rx::SatUser, ch.slot, Family::SatUser),
        })
        .collect()
}

fn cross_constraint(
    ch: &ChannelRealization,
    k: usize,
    r: usize,
    w: &CMatrix,
    v: &CMatrix,
) -> NullConstraint {
    NullConstraint {
        target: v * &ch.h_ktkr[k][r] * w,
        g_bar: v * &ch.h_rkr[r],
        f_bar: &ch.h_ktr[k] * w,
        label: label(k, Rx::D2d(r), ch.slot, Family::CrossD2d),
    }
}

/// Merge, cross-D2D and satellite-user families of a phase-2 slot.
pub fn phase2_constraints(
    ch: &ChannelRealization,
    retransmitter: usize,
    precoders: &[CMatrix],
    decoders: &[CMatrix],
) -> Vec<NullConstraint> {
    let kd = ch.kd();
    let eye = linalg::identity(ch.n());
    let mut out = Vec::with_capacity(kd * kd + 1);
    for (r, v) in decoders.iter().enumerate() {
        out.push(NullConstraint {
            target: v * &ch.h_ktkr[retransmitter][r] - &eye,
            g_bar: v * &ch.h_rkr[r],
            f_bar: ch.h_ktr[retransmitter].clone(),
            label: label(retransmitter, Rx::D2d(r), ch.slot, Family::Merge),
        });
    }
    for k in (0..kd).filter(|&k| k != retransmitter) {
        for r in (0..kd).filter(|&r| r != k) {
            out.push(cross_constraint(ch, k, r, &precoders[k], &decoders[r]));
        }
    }
    out.extend(satuser_constraints(ch, precoders));
    out
}

/// Cross-D2D and satellite-user families of the phase-3 slot.
pub fn phase3_constraints(
    ch: &ChannelRealization,
    precoders: &[CMatrix],
    decoders: &[CMatrix],
) -> Vec<NullConstraint> {
    let kd = ch.kd();
    let mut out = Vec::with_capacity(kd * kd);
    for k in 0..kd {
        for r in (0..kd).filter(|&r| r != k) {
            out.push(cross_constraint(ch, k, r, &precoders[k], &decoders[r]));
        }
    }
    out.extend(satuser_constraints(ch, precoders));
    out
}

/// A finished session together with its outcome.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: SessionState,
    pub outcome: SchemeOutcome,
}

/// Runs a full noiseless session over `kd + 2` slots of channels.
pub fn run(block: &[ChannelRealization], payloads: &DcsiPayloads) -> Result<Session> {
    let first = block
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty channel block".into()))?;
    let (kd, n) = (first.kd(), first.n());
    let mut state = SessionState::new(kd, n)?;
    payloads.check(kd, n)?;
    if block.len() != session_slots(kd) {
        return Err(Error::InvalidConfig(format!(
            "a session needs {} slots of channels (got {})",
            session_slots(kd),
            block.len()
        )));
    }
    state.phase1(&block[0], &payloads.sat)?;
    for t in 2..=kd + 1 {
        let rt = retransmitter(t);
        let fresh: Vec<Option<CVector>> = (0..kd)
            .map(|k| {
                if k == rt {
                    None
                } else {
                    let idx = fresh_slots(k, kd).iter().position(|&s| s == t).unwrap();
                    Some(payloads.fresh[k][idx].clone())
                }
            })
            .collect();
        state.phase2_slot(&block[t - 1], &fresh)?;
    }
    state.phase3(&block[kd + 1])?;

    let mut sent = vec![payloads.sat.clone()];
    let mut recovered = vec![state.decode_satuser()?];
    state.trace.push(TraceEvent::Decode {
        sink: Rx::SatUser,
        streams: (kd + 1) * n,
        recovery_err: recovery_error(&sent[..1], &recovered[..1]),
    });
    for r in 0..kd {
        let want = concat(&payloads.fresh[r]);
        let got = concat(&state.decode_d2d(r)?);
        state.trace.push(TraceEvent::Decode {
            sink: Rx::D2d(r),
            streams: (kd - 1) * n,
            recovery_err: recovery_error(std::slice::from_ref(&want), std::slice::from_ref(&got)),
        });
        sent.push(want);
        recovered.push(got);
    }

    let sinks = state.sinks()?;
    let mut interference: f64 = 0.0;
    let mut min_sv = f64::INFINITY;
    for s in &sinks {
        for term in &s.interference {
            interference = interference.max(term.map.norm());
        }
        for term in &s.desired {
            min_sv = min_sv.min(linalg::min_singular_value(&term.map)?);
        }
    }
    let streams: usize = recovered.iter().map(|x| x.len()).sum();
    let ris_residual = state
        .designs
        .iter()
        .map(|d| d.max_residual)
        .fold(0.0, f64::max);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(
        "satuser_stack_rank".into(),
        linalg::rank(&state.satuser_stack()?)? as f64,
    );
    diagnostics.insert("merge_residual".into(), state.merge_residual());
    diagnostics.insert(
        "constraints_per_slot".into(),
        constraints_per_slot(kd, n) as f64,
    );
    let outcome = SchemeOutcome {
        scheme: SchemeId::Dcsi,
        recovery_err: recovery_error(&sent, &recovered),
        sent,
        recovered,
        interference_residual: interference,
        ris_residual,
        min_desired_sv: min_sv,
        dof_counted: Ratio::new(streams as i64, session_slots(kd) as i64),
        slots: session_slots(kd),
        sinks,
        diagnostics,
    };
    Ok(Session { state, outcome })
}

fn concat(parts: &[CVector]) -> CVector {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = CVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_block, FadingModel};
    use crate::config::SystemConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(kd: usize, n: usize, seed: u64) -> Vec<ChannelRealization> {
        let l = constraints_per_slot(kd, n);
        let cfg = SystemConfig::with_dims(kd, n, (kd + 1) * n, l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_block(&cfg, &FadingModel::default(), &mut rng, kd + 2).unwrap()
    }

    #[test]
    fn slot_bookkeeping() {
        assert_eq!(fresh_slots(0, 2), vec![3]);
        assert_eq!(fresh_slots(1, 2), vec![2]);
        assert_eq!(fresh_slots(1, 4), vec![2, 4, 5]);
        assert_eq!(last_fresh_slot(3, 4), 4);
        assert_eq!(last_fresh_slot(0, 4), 5);
        for kd in 2..7 {
            for k in 0..kd {
                assert_eq!(*fresh_slots(k, kd).last().unwrap(), last_fresh_slot(k, kd));
            }
        }
        assert_eq!(session_slots(6), 8);
    }

    #[test]
    fn phase1_observations() {
        let b = block(2, 2, 1);
        let mut s = SessionState::new(2, 2).unwrap();
        let x = random_symbols(&mut ChaCha8Rng::seed_from_u64(2), 6);
        s.phase1(&b[0], &x).unwrap();
        assert_eq!(s.satuser_log[0].len(), 2);
        assert_eq!(linalg::rank(&b[0].h_sc).unwrap(), 2);
        let mut z = SessionState::new(2, 2).unwrap();
        z.phase1(&b[0], &CVector::zeros(6)).unwrap();
        assert!(z.rx_log.iter().all(|l| l[0].norm() == 0.0));
        assert!(SessionState::new(2, 2).unwrap().phase1(&b[0], &CVector::zeros(5)).is_err());
    }

    #[test]
    fn out_of_order_slots_rejected() {
        let b = block(2, 2, 3);
        let mut s = SessionState::new(2, 2).unwrap();
        assert!(s.phase3(&b[3]).is_err());
        assert!(s.phase1(&b[1], &CVector::zeros(6)).is_err());
        s.phase1(&b[0], &CVector::zeros(6)).unwrap();
        assert!(s.phase2_slot(&b[2], &[None, None]).is_err());
        assert!(s.cached(CsiKind::Direct, 0, 2, 2).is_err());
    }

    #[test]
    fn delay_discipline() {
        let b = block(3, 2, 4);
        let p = DcsiPayloads::random(&mut ChaCha8Rng::seed_from_u64(5), 3, 2);
        let mut s = SessionState::new(3, 2).unwrap();
        s.phase1(&b[0], &p.sat).unwrap();
        assert!(s.cached_slots().iter().all(|&t| t < 2));
        let fresh = |t: usize| -> Vec<Option<CVector>> {
            (0..3)
                .map(|k| {
                    fresh_slots(k, 3)
                        .iter()
                        .position(|&s| s == t)
                        .map(|i| p.fresh[k][i].clone())
                })
                .collect()
        };
        s.phase2_slot(&b[1], &fresh(2)).unwrap();
        assert!(s.cached_slots().iter().all(|&t| t < 3));
        s.phase2_slot(&b[2], &fresh(3)).unwrap();
        assert!(s.cached_slots().iter().all(|&t| t < 4));
    }

    #[test]
    fn constraint_count_matches() {
        for (kd, n) in [(2, 2), (3, 2), (4, 1)] {
            let b = block(kd, n, 6);
            let ch = &b[1];
            let eye = linalg::identity(n);
            let cs = phase2_constraints(ch, 0, &vec![eye.clone(); kd], &vec![eye.clone(); kd]);
            assert_eq!(
                cs.iter().map(|c| c.scalar_count()).sum::<usize>(),
                constraints_per_slot(kd, n)
            );
            let cs3 = phase3_constraints(ch, &vec![eye.clone(); kd], &vec![eye; kd]);
            assert_eq!(cs3.len(), kd * kd);
        }
    }

    #[test]
    fn full_session_kd2() {
        let b = block(2, 2, 7);
        let p = DcsiPayloads::random(&mut ChaCha8Rng::seed_from_u64(8), 2, 2);
        let s = run(&b, &p).unwrap();
        let o = &s.outcome;
        assert!(o.recovery_err <= 1e-6, "{}", o.recovery_err);
        assert_eq!(o.dof_counted, Ratio::new(5, 2));
        assert_eq!(o.diagnostics["satuser_stack_rank"], 6.0);
        assert!(o.diagnostics["merge_residual"] <= 1e-8);
        assert_eq!(s.state.trace_jsonl().unwrap().lines().count(), 4 + 3);
    }

    #[test]
    fn merged_signal_is_common_term() {
        let b = block(3, 2, 9);
        let p = DcsiPayloads::random(&mut ChaCha8Rng::seed_from_u64(10), 3, 2);
        let s = run(&b, &p).unwrap();
        let st = &s.state;
        // at its own retransmission slot a receiver sees only Σ_k H_{s,k}[1]·x_s
        let mut common = CMatrix::zeros(2, 8);
        for k in 0..3 {
            common += st.cached(CsiKind::SatFull, k, 1, 2).unwrap();
        }
        let want = &common * &p.sat;
        for r in 0..3 {
            let t = r + 2;
            let got = &st.rx_decoders[r][&t] * &st.rx_log[r][t - 1];
            assert!((got - &want).norm() <= 1e-8 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn maps_reproduce_observations() {
        let b = block(2, 2, 11);
        let p = DcsiPayloads::random(&mut ChaCha8Rng::seed_from_u64(12), 2, 2);
        let s = run(&b, &p).unwrap();
        let mut x = vec![p.sat.clone()];
        for f in &p.fresh {
            x.push(concat(f));
        }
        let x = concat(&x);
        for r in 0..2 {
            for (y, m) in s.state.rx_log[r].iter().zip(&s.state.rx_maps[r]) {
                assert!((m * &x - y).norm() <= 1e-9 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn zero_payloads() {
        let b = block(2, 2, 13);
        let s = run(&b, &DcsiPayloads::zeros(2, 2)).unwrap();
        assert_eq!(s.outcome.recovery_err, 0.0);
    }

    #[test]
    fn dof_kd6_n3() {
        let b = block(6, 3, 14);
        let s = run(&b, &DcsiPayloads::zeros(6, 3)).unwrap();
        assert_eq!(s.outcome.dof_counted, Ratio::new(111, 8));
    }
}

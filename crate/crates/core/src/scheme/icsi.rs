//! Interference management with instantaneous (or moderately delayed)
//! satellite CSI.
//!
//! The satellite beamforms into the null space of the stacked
//! satellite-to-D2D-receiver channel, so no D2D receiver hears it. Every
//! source sends `n` streams; the RIS nulls all cross D2D links and all D2D
//! leakage into the satellite user.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::channel::ChannelRealization;
use crate::dof;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, DEFAULT_RANK_TOL};
use crate::ris::{self, Family, Label, NullConstraint, Rx, Tx};
use crate::scheme::{svd_normalize, Payloads, SchemeId, SchemeOutcome, SchemePlan, Streams, SvdFactors};

/// Satellite null-space precoder.
#[derive(Debug, Clone)]
pub struct NullspacePlan {
    /// `ms × effective_streams`, orthonormal columns.
    pub w_sc: CMatrix,
    /// Silenced antennas per terrestrial receiver.
    pub silenced: usize,
    pub effective_streams: usize,
}

/// `kd·n × ms` stack of the satellite-to-D2D-receiver channels.
pub fn stacked_satellite_channel(ch: &ChannelRealization) -> Result<CMatrix> {
    linalg::vstack(&ch.h_skr)
}

pub fn nullspace_precoder(ch: &ChannelRealization) -> Result<NullspacePlan> {
    let (kd, n, ms) = (ch.kd(), ch.n(), ch.ms());
    if ms <= kd * n {
        return Err(Error::NotApplicable(format!(
            "null space of the {}×{ms} satellite stack is empty",
            kd * n
        )));
    }
    let ns = linalg::null_space(&stacked_satellite_channel(ch)?, DEFAULT_RANK_TOL)?;
    let width = n.min(ns.ncols());
    Ok(NullspacePlan {
        w_sc: ns.columns(0, width).into_owned(),
        silenced: 0,
        effective_streams: width,
    })
}

/// `max_k ‖H_{s,k}·w_sc‖_F / ‖H_{s,k}‖_F`.
pub fn nullspace_residual(ch: &ChannelRealization, plan: &NullspacePlan) -> f64 {
    ch.h_skr
        .iter()
        .map(|h| (h * &plan.w_sc).norm() / h.norm())
        .fold(0.0, f64::max)
}

/// `H_{s,c}·w_sc`.
pub fn effective_sat_channel(ch: &ChannelRealization, plan: &NullspacePlan) -> CMatrix {
    &ch.h_sc * &plan.w_sc
}

/// Cross-D2D and D2D-to-satellite-user constraints in normalized coordinates.
pub fn build_constraints(
    ch: &ChannelRealization,
    d2d: &[SvdFactors],
    v_c: &CMatrix,
) -> Vec<NullConstraint> {
    let kd = ch.kd();
    let mut out = Vec::with_capacity(kd * kd);
    for j in 0..kd {
        let g = &d2d[j].v * &ch.h_rkr[j];
        for i in (0..kd).filter(|&i| i != j) {
            out.push(NullConstraint {
                target: &d2d[j].v * &ch.h_ktkr[i][j] * &d2d[i].w_bar,
                g_bar: g.clone(),
                f_bar: &ch.h_ktr[i] * &d2d[i].w_bar,
                label: Label {
                    tx: Tx::D2d(i),
                    rx: Rx::D2d(j),
                    slot: ch.slot,
                    family: Family::CrossD2d,
                },
            });
        }
    }
    let g_c = v_c * &ch.h_rc;
    for i in 0..kd {
        out.push(NullConstraint {
            target: v_c * &ch.h_ktc[i] * &d2d[i].w_bar,
            g_bar: g_c.clone(),
            f_bar: &ch.h_ktr[i] * &d2d[i].w_bar,
            label: Label {
                tx: Tx::D2d(i),
                rx: Rx::SatUser,
                slot: ch.slot,
                family: Family::SatUser,
            },
        });
    }
    out
}

/// Null-space precoding, RIS solve and decoders for `ms ≥ (kd+1)·n`.
pub fn plan(ch: &ChannelRealization) -> Result<SchemePlan> {
    let (kd, n, ms) = (ch.kd(), ch.n(), ch.ms());
    if ms < (kd + 1) * n {
        return Err(Error::NotApplicable(format!(
            "full-antenna operation needs ms ≥ (kd+1)·n = {} (got {ms})",
            (kd + 1) * n
        )));
    }
    let ns = nullspace_precoder(ch)?;
    let eye = linalg::identity(n);
    let sat = svd_normalize(&ch.h_sc, &ns.w_sc)?;
    let d2d = (0..kd)
        .map(|j| svd_normalize(&ch.h_ktkr[j][j], &eye))
        .collect::<Result<Vec<_>>>()?;
    let constraints = build_constraints(ch, &d2d, &sat.v);
    let design = ris::solve(&constraints)?;
    let alpha = &design.alpha;

    let w_s = sat.w_bar.clone();
    let sat_desired = &sat.v * &ch.h_sc * &w_s;
    let v_c = linalg::inverse(&sat_desired, "satellite-user desired block")? * &sat.v;
    let w_kt: Vec<CMatrix> = d2d.iter().map(|f| f.w_bar.clone()).collect();
    let v_kr = (0..kd)
        .map(|j| {
            let eff = (&ch.h_ktkr[j][j] + linalg::cascade(&ch.h_rkr[j], alpha, &ch.h_ktr[j])) * &w_kt[j];
            let desired = &d2d[j].v * eff;
            Ok(linalg::inverse(&desired, "D2D desired block")? * &d2d[j].v)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("nullspace_residual".into(), nullspace_residual(ch, &ns));
    diagnostics.insert(
        "effective_sat_rank".into(),
        linalg::rank(&effective_sat_channel(ch, &ns))? as f64,
    );
    diagnostics.insert("constraint_count".into(), constraints.len() as f64);

    Ok(SchemePlan {
        scheme: SchemeId::Icsi,
        w_s,
        w_kt,
        v_kr,
        v_c,
        ris: design,
        streams: Streams { sat: n, d2d: n },
        slots: 1,
        diagnostics,
    })
}

/// One noiseless slot with `n` streams per source.
pub fn run(ch: &ChannelRealization, payloads: &Payloads) -> Result<SchemeOutcome> {
    plan(ch)?.execute(ch, payloads)
}

/// Antenna budget of the deficient regime `ψ < ms < (kd+1)·n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeficientPlan {
    /// Streams per sink, `⌈ms/(kd+1)⌉`.
    pub streams: usize,
    /// Silenced receive antennas per terrestrial receiver.
    pub silenced: usize,
    /// `streams·(kd+1)`.
    pub dof: usize,
}

pub fn deficient_plan(ms: usize, kd: usize, n: usize) -> Result<DeficientPlan> {
    let psi = dof::psi(kd, n);
    if kd == 0 || ms <= psi || ms >= (kd + 1) * n {
        return Err(Error::NotApplicable(format!(
            "ms = {ms} outside the deficient regime ({psi}, {})",
            (kd + 1) * n
        )));
    }
    let streams = ms.div_ceil(kd + 1);
    Ok(DeficientPlan {
        streams,
        silenced: n - streams,
        dof: streams * (kd + 1),
    })
}

/// Null-space width of the satellite stack once each receiver silences its
/// first `plan.silenced` antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeficientRankCheck {
    pub active_rows: usize,
    pub null_width: usize,
    pub required: usize,
}

impl DeficientRankCheck {
    pub fn holds(&self) -> bool {
        self.null_width >= self.required
    }
}

pub fn deficient_rank_check(
    ch: &ChannelRealization,
    plan: &DeficientPlan,
) -> Result<DeficientRankCheck> {
    let n = ch.n();
    let kept: Vec<CMatrix> = ch
        .h_skr
        .iter()
        .map(|h| h.rows(plan.silenced, n - plan.silenced).into_owned())
        .collect();
    let stack = linalg::vstack(&kept)?;
    let rank = linalg::rank(&stack)?;
    Ok(DeficientRankCheck {
        active_rows: stack.nrows(),
        null_width: ch.ms() - rank,
        required: plan.streams,
    })
}

//! Interference management without satellite CSI.
//!
//! The satellite sends `n/2` streams with identity precoding on its first
//! `n` antennas. Each D2D transmitter aligns its signal with the satellite's
//! at one neighbouring receiver (transmitter `i` at receiver `i − 1`,
//! cyclically), so every receiver sees a single `n/2`-dimensional
//! interference subspace and decodes in the complement. The RIS removes the
//! remaining cross links and all D2D leakage into the satellite user.

use std::collections::BTreeMap;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::ris::{self, Family, Label, NullConstraint, Rx, Tx};
use crate::scheme::{first_columns, svd_normalize, Payloads, SchemeId, SchemeOutcome, SchemePlan, Streams, SvdFactors};

/// Relative tolerance used when measuring the interference subspace.
const SUBSPACE_TOL: f64 = 1e-8;

/// Receiver at which transmitter `i` aligns with the satellite.
pub fn aligned_receiver(i: usize, kd: usize) -> usize {
    (i + kd - 1) % kd
}

/// Transmitter aligned with the satellite at receiver `j`.
pub fn aligned_transmitter(j: usize, kd: usize) -> usize {
    (j + 1) % kd
}

fn check_dims(ch: &ChannelRealization) -> Result<usize> {
    let (kd, n, ms) = (ch.kd(), ch.n(), ch.ms());
    if kd < 2 {
        return Err(Error::NotApplicable(
            "cyclic alignment needs at least two D2D pairs".into(),
        ));
    }
    if n % 2 != 0 {
        return Err(Error::NotApplicable(format!(
            "single-slot half-stream transmission needs even n (got {n})"
        )));
    }
    if ms < n {
        return Err(Error::NotApplicable(format!(
            "satellite needs at least n = {n} antennas (got {ms})"
        )));
    }
    Ok(n / 2)
}

/// Full `n`-column precoders: the satellite's `ms×n` antenna selector and
/// each transmitter's `W_i = H_{i,j(i)}⁻¹·H_{s,j(i)}·W_s`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub w_s: CMatrix,
    pub w: Vec<CMatrix>,
}

pub fn design_alignment(ch: &ChannelRealization) -> Result<Alignment> {
    check_dims(ch)?;
    let (kd, n, ms) = (ch.kd(), ch.n(), ch.ms());
    let w_s = CMatrix::identity(ms, n);
    let w = (0..kd)
        .map(|i| {
            let j = aligned_receiver(i, kd);
            let inv = linalg::inverse(&ch.h_ktkr[i][j], "alignment block")?;
            Ok(inv * (&ch.h_skr[j] * &w_s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Alignment { w_s, w })
}

/// `max_i ‖H_{s,j(i)}W_s − H_{i,j(i)}W_i‖_F / ‖H_{s,j(i)}W_s‖_F`.
pub fn alignment_residual(ch: &ChannelRealization, al: &Alignment) -> f64 {
    let kd = ch.kd();
    (0..kd)
        .map(|i| {
            let j = aligned_receiver(i, kd);
            let sat = &ch.h_skr[j] * &al.w_s;
            (&sat - &ch.h_ktkr[i][j] * &al.w[i]).norm() / sat.norm()
        })
        .fold(0.0, f64::max)
}

/// Desired-link SVD factors of every pair.
pub fn normalize(ch: &ChannelRealization, al: &Alignment) -> Result<Vec<SvdFactors>> {
    (0..ch.kd())
        .map(|j| svd_normalize(&ch.h_ktkr[j][j], &al.w[j]))
        .collect()
}

/// Zero-forcing decoder `(HᴴH)⁻¹Hᴴ` for a full-column-rank `h`.
pub fn satuser_zf(h: &CMatrix) -> Result<CMatrix> {
    if linalg::rank(h)? < h.ncols() {
        return Err(Error::DegenerateChannel(
            "satellite-user channel is column-rank deficient".into(),
        ));
    }
    linalg::pinv(h)
}

/// The three constraint families, in normalized coordinates.
///
/// `v_c` is the square satellite-user transform applied before nulling.
pub fn build_constraints(
    ch: &ChannelRealization,
    f: &[SvdFactors],
    v_c: &CMatrix,
) -> Vec<NullConstraint> {
    let kd = ch.kd();
    let n = ch.n();
    let mut out = Vec::with_capacity(kd * kd);
    let zero = CMatrix::zeros(n, n);
    for j in 0..kd {
        let g = &f[j].v * &ch.h_rkr[j];
        let a = aligned_transmitter(j, kd);
        for i in (0..kd).filter(|&i| i != j) {
            let f_bar = &ch.h_ktr[i] * &f[i].w_bar;
            let (target, family) = if i == a {
                (zero.clone(), Family::CascadeOnly)
            } else {
                (&f[j].v * &ch.h_ktkr[i][j] * &f[i].w_bar, Family::CrossD2d)
            };
            out.push(NullConstraint {
                target,
                g_bar: g.clone(),
                f_bar,
                label: Label {
                    tx: Tx::D2d(i),
                    rx: Rx::D2d(j),
                    slot: ch.slot,
                    family,
                },
            });
        }
    }
    let g_c = v_c * &ch.h_rc;
    for i in 0..kd {
        out.push(NullConstraint {
            target: v_c * &ch.h_ktc[i] * &f[i].w_bar,
            g_bar: g_c.clone(),
            f_bar: &ch.h_ktr[i] * &f[i].w_bar,
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

/// Aligns, solves the RIS and builds the decoders.
pub fn plan(ch: &ChannelRealization) -> Result<SchemePlan> {
    let d = check_dims(ch)?;
    let (kd, n) = (ch.kd(), ch.n());
    let al = design_alignment(ch)?;
    let factors = normalize(ch, &al)?;
    let sat_block = &ch.h_sc * &al.w_s;
    let v_c_full = linalg::inverse(&sat_block, "satellite-user channel")?;
    let constraints = build_constraints(ch, &factors, &v_c_full);
    let design = ris::solve(&constraints)?;
    let alpha = &design.alpha;

    let pick = first_columns(n, d);
    let w_s = &al.w_s * &pick;
    let w_kt: Vec<CMatrix> = al.w.iter().map(|w| w * &pick).collect();
    let v_c = v_c_full.rows(0, d).into_owned();

    let mut subspace_dim = 0usize;
    let mut v_kr = Vec::with_capacity(kd);
    for j in 0..kd {
        // the satellite streams span the aligned interference subspace
        let sat_streams = &ch.h_skr[j] * &w_s;
        let proj = linalg::left_null_space(&sat_streams, linalg::DEFAULT_RANK_TOL)?.adjoint();
        if proj.nrows() != d {
            return Err(Error::DegenerateChannel(format!(
                "receiver {j}: satellite streams span {} dimensions",
                n - proj.nrows()
            )));
        }
        let eff = (&ch.h_ktkr[j][j] + linalg::cascade(&ch.h_rkr[j], alpha, &ch.h_ktr[j])) * &w_kt[j];
        let desired = &proj * eff;
        v_kr.push(linalg::inverse(&desired, "projected desired block")? * proj);

        let mut interference = vec![sat_streams];
        for i in (0..kd).filter(|&i| i != j) {
            let h = &ch.h_ktkr[i][j] + linalg::cascade(&ch.h_rkr[j], alpha, &ch.h_ktr[i]);
            interference.push(h * &w_kt[i]);
        }
        let cols = linalg::hstack(&interference)?;
        subspace_dim = subspace_dim.max(linalg::rank_tol(&cols, SUBSPACE_TOL)?);
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("alignment_residual".into(), alignment_residual(ch, &al));
    diagnostics.insert("interference_subspace_dim".into(), subspace_dim as f64);
    diagnostics.insert("constraint_count".into(), constraints.len() as f64);

    Ok(SchemePlan {
        scheme: SchemeId::NoCsi,
        w_s,
        w_kt,
        v_kr,
        v_c,
        ris: design,
        streams: Streams { sat: d, d2d: d },
        slots: 1,
        diagnostics,
    })
}

/// One noiseless slot with `n/2` streams per source.
pub fn run(ch: &ChannelRealization, payloads: &Payloads) -> Result<SchemeOutcome> {
    plan(ch)?.execute(ch, payloads)
}

//! Active-RIS reflection design by minimum-norm least squares.
//!
//! Each constraint asks `target + Ḡ·diag(α)·F̄ = 0`. Vectorizing column-major
//! turns it into `(F̄ᵀ ⊗ Ḡ)·β·α = −vec(target)`, and the `(F̄ᵀ ⊗ Ḡ)·β` rows are
//! formed directly: the entry for element `l` at vec index `a + b·p` is
//! `Ḡ[a, l]·F̄[l, b]`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64, DEFAULT_RANK_TOL};

/// A signal source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Tx {
    Satellite,
    D2d(usize),
}

/// A signal sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rx {
    SatUser,
    D2d(usize),
}

impl fmt::Display for Tx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tx::Satellite => write!(f, "sat"),
            Tx::D2d(i) => write!(f, "tx{i}"),
        }
    }
}

impl fmt::Display for Rx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rx::SatUser => write!(f, "satuser"),
            Rx::D2d(j) => write!(f, "rx{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// D2D interference at another pair's receiver.
    CrossD2d,
    /// Cascade of an aligned transmitter kept off the RIS path.
    CascadeOnly,
    /// D2D leakage into the satellite user.
    SatUser,
    /// Retransmission made to look like the satellite's own signal.
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Label {
    pub tx: Tx,
    pub rx: Rx,
    pub slot: usize,
    pub family: Family,
}

/// `target + g_bar·Θ·f_bar = 0`.
#[derive(Debug, Clone)]
pub struct NullConstraint {
    pub target: CMatrix,
    pub g_bar: CMatrix,
    pub f_bar: CMatrix,
    pub label: Label,
}

impl NullConstraint {
    pub fn scalar_count(&self) -> usize {
        self.target.len()
    }

    /// `‖target + g_bar·diag(alpha)·f_bar‖_F`.
    pub fn residual(&self, alpha: &CVector) -> f64 {
        (&self.target + linalg::cascade(&self.g_bar, alpha, &self.f_bar)).norm()
    }

    fn check(&self, l: usize) -> Result<()> {
        let (p, q) = self.target.shape();
        if self.g_bar.shape() != (p, l) || self.f_bar.shape() != (l, q) {
            return Err(Error::DimensionMismatch(format!(
                "constraint {:?}: target {p}×{q}, g_bar {:?}, f_bar {:?}, L = {l}",
                self.label,
                self.g_bar.shape(),
                self.f_bar.shape()
            )));
        }
        linalg::ensure_finite(&self.target, "constraint target")?;
        linalg::ensure_finite(&self.g_bar, "constraint g_bar")?;
        linalg::ensure_finite(&self.f_bar, "constraint f_bar")
    }
}

/// Stacks all constraints into `A·α = b`.
pub fn assemble(constraints: &[NullConstraint]) -> Result<(CMatrix, CVector)> {
    let first = constraints
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no constraints to assemble".into()))?;
    let l = first.g_bar.ncols();
    for c in constraints {
        c.check(l)?;
    }
    let rows: usize = constraints.iter().map(NullConstraint::scalar_count).sum();
    let mut a = CMatrix::zeros(rows, l);
    let mut b = CVector::zeros(rows);
    let mut at = 0;
    for c in constraints {
        let (p, q) = c.target.shape();
        for col in 0..q {
            for row in 0..p {
                let r = at + row + col * p;
                b[r] = -c.target[(row, col)];
                for e in 0..l {
                    a[(r, e)] = c.g_bar[(row, e)] * c.f_bar[(e, col)];
                }
            }
        }
        at += p * q;
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Serialize)]
pub struct RisDesign {
    #[serde(serialize_with = "serialize_cvec")]
    pub alpha: CVector,
    pub residuals: Vec<f64>,
    pub labels: Vec<Label>,
    pub max_residual: f64,
    pub max_target: f64,
}

impl RisDesign {
    /// `diag(alpha)`.
    pub fn theta(&self) -> CMatrix {
        linalg::diag(&self.alpha)
    }

    /// Acceptance bound `1e-8·(1 + max‖target‖_F)`.
    pub fn is_feasible(&self) -> bool {
        self.max_residual <= 1e-8 * (1.0 + self.max_target)
    }

    /// An all-zero surface of `l` elements.
    pub fn passive_off(l: usize) -> Self {
        RisDesign {
            alpha: CVector::zeros(l),
            residuals: Vec::new(),
            labels: Vec::new(),
            max_residual: 0.0,
            max_target: 0.0,
        }
    }
}

pub(crate) fn serialize_cvec<S: serde::Serializer>(
    v: &CVector,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|z| [z.re, z.im]))
}

/// Minimum-norm least-squares `α` for the constraint set.
///
/// A Householder QR handles the well-conditioned full-rank case. Anything
/// else goes through the SVD pseudoinverse with the 1e-10 relative cutoff.
pub fn solve(constraints: &[NullConstraint]) -> Result<RisDesign> {
    let (a, b) = assemble(constraints)?;
    let alpha = if b.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        CVector::zeros(a.ncols())
    } else {
        match qr_solve(&a, &b) {
            Some(x) => x,
            None => linalg::lstsq_min_norm(&a, &b)?,
        }
    };
    Ok(design_from(constraints, alpha))
}

/// Same answer as [`solve`], always through the SVD.
pub fn solve_svd(constraints: &[NullConstraint]) -> Result<RisDesign> {
    let (a, b) = assemble(constraints)?;
    let alpha = linalg::lstsq_min_norm(&a, &b)?;
    Ok(design_from(constraints, alpha))
}

/// Rebuilds the residual report of an arbitrary `α`.
pub fn design_from(constraints: &[NullConstraint], alpha: CVector) -> RisDesign {
    let residuals: Vec<f64> = constraints.iter().map(|c| c.residual(&alpha)).collect();
    RisDesign {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        max_target: constraints
            .iter()
            .map(|c| c.target.norm())
            .fold(0.0, f64::max),
        residuals,
        labels: constraints.iter().map(|c| c.label).collect(),
        alpha,
    }
}

/// Ratio of the extreme `|R_ii|` accepted before falling back to the SVD.
const QR_DIAG_RATIO: f64 = 1e-8;

fn well_conditioned(r: &CMatrix) -> bool {
    let d: Vec<f64> = r.diagonal().iter().map(|z| z.norm()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min / max > QR_DIAG_RATIO
}

fn qr_solve(a: &CMatrix, b: &CVector) -> Option<CVector> {
    let (m, l) = a.shape();
    if m == 0 || l == 0 {
        return None;
    }
    if m <= l {
        // aᴴ = Q·R, a = Rᴴ·Qᴴ, minimum-norm x = Q·R⁻ᴴ·b
        let qr = a.adjoint().qr();
        let r = qr.r();
        if !well_conditioned(&r) {
            return None;
        }
        let y = r.adjoint().solve_lower_triangular(b)?;
        Some(qr.q() * y)
    } else {
        let qr = a.clone().qr();
        let r = qr.r();
        if !well_conditioned(&r) {
            return None;
        }
        let rhs = qr.q().adjoint() * b;
        r.solve_upper_triangular(&rhs)
    }
}

/// One physical link seen through a decoder and a precoder:
/// `decoder·(direct + g·Θ·f)·precoder`.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub tx: Tx,
    pub rx: Rx,
    pub desired: bool,
    pub decoder: CMatrix,
    pub direct: CMatrix,
    /// RIS path, `None` for links that never touch the surface.
    pub cascade: Option<(CMatrix, CMatrix)>,
    pub precoder: CMatrix,
}

impl LinkSpec {
    pub fn effective(&self, alpha: &CVector) -> CMatrix {
        let mut h = self.direct.clone();
        if let Some((g, f)) = &self.cascade {
            h += linalg::cascade(g, alpha, f);
        }
        &self.decoder * h * &self.precoder
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockNorm {
    pub tx: Tx,
    pub rx: Rx,
    pub value: f64,
}

/// Effective whole-system blocks after the RIS is applied.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ResidualReport {
    pub interference: Vec<BlockNorm>,
    pub desired_min_sv: Vec<BlockNorm>,
    pub max_interference: f64,
    pub min_desired_sv: f64,
}

/// Recomputes every effective block and reports interference norms and the
/// smallest singular value of each desired block.
pub fn verify(links: &[LinkSpec], alpha: &CVector) -> Result<ResidualReport> {
    let mut report = ResidualReport {
        min_desired_sv: f64::INFINITY,
        ..Default::default()
    };
    for link in links {
        let block = link.effective(alpha);
        if link.desired {
            let s = linalg::min_singular_value(&block)?;
            report.min_desired_sv = report.min_desired_sv.min(s);
            report.desired_min_sv.push(BlockNorm {
                tx: link.tx,
                rx: link.rx,
                value: s,
            });
        } else {
            let v = block.norm();
            report.max_interference = report.max_interference.max(v);
            report.interference.push(BlockNorm {
                tx: link.tx,
                rx: link.rx,
                value: v,
            });
        }
    }
    if report.desired_min_sv.is_empty() {
        report.min_desired_sv = 0.0;
    }
    Ok(report)
}

/// Numerical rank of the assembled system, useful for feasibility checks.
pub fn system_rank(constraints: &[NullConstraint]) -> Result<usize> {
    let (a, _) = assemble(constraints)?;
    linalg::rank_tol(&a, DEFAULT_RANK_TOL)
}

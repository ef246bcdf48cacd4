//! Dense complex linear algebra used by every scheme.
//!
//! Matrices are `nalgebra` dense column-major matrices of `Complex64`. The
//! vectorization convention is column-major throughout the crate, so that
//! `vec(A·X·B) = (Bᵀ ⊗ A)·vec(X)` holds with [`kron`] and [`vec`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative cutoff (against the largest singular value) used for rank and
/// pseudoinverse decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Ratio `σ_min / σ_max` below which a square block is treated as singular.
const SINGULAR_RCOND: f64 = 1e-13;

/// Full singular value decomposition `a = u·diag(s)·vᴴ`.
///
/// `u` is `rows×rows` and `v` is `cols×cols`, both unitary; `s` holds the
/// `min(rows, cols)` singular values in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    /// Rebuilds `u·diag(s)·vᴴ` with a rectangular diagonal.
    pub fn reconstruct(&self) -> CMatrix {
        let (r, c) = (self.u.nrows(), self.v.nrows());
        let mut sigma = CMatrix::zeros(r, c);
        for (i, &s) in self.s.iter().enumerate() {
            sigma[(i, i)] = C64::new(s, 0.0);
        }
        &self.u * sigma * self.v.adjoint()
    }
}

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn ensure_finite(a: &CMatrix, what: &'static str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn max_iterations(a: &CMatrix) -> usize {
    1000 * a.nrows().max(a.ncols()).max(1)
}

/// Thin SVD: `u` is `r×k`, `v` is `c×k` (not adjointed), `k = min(r, c)`.
pub(crate) fn thin_svd(a: &CMatrix) -> Result<(CMatrix, Vec<f64>, CMatrix)> {
    ensure_finite(a, "svd input")?;
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok((CMatrix::zeros(r, 0), Vec::new(), CMatrix::zeros(c, 0)));
    }
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, max_iterations(a))
        .ok_or(Error::Decomposition("svd"))?;
    let u = svd.u.ok_or(Error::Decomposition("svd: left vectors"))?;
    let v = svd
        .v_t
        .ok_or(Error::Decomposition("svd: right vectors"))?
        .adjoint();
    Ok((u, svd.singular_values.iter().copied().collect(), v))
}

/// Singular values only, nonincreasing.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    ensure_finite(a, "svd input")?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = a
        .clone()
        .try_svd(false, false, f64::EPSILON, max_iterations(a))
        .ok_or(Error::Decomposition("singular values"))?;
    Ok(svd.singular_values.iter().copied().collect())
}

/// Full SVD with square unitary factors.
pub fn svd(a: &CMatrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::DimensionMismatch("svd of an empty matrix".into()));
    }
    let (u, s, v) = thin_svd(a)?;
    let u = complete_basis(&u);
    let v = complete_basis(&v);
    Ok(Svd { u, s, v })
}

/// Extends an orthonormal column set `q` (`n×k`) to an `n×n` unitary matrix.
fn complete_basis(q: &CMatrix) -> CMatrix {
    let (n, k) = q.shape();
    if k == n {
        return q.clone();
    }
    let rest = complement(q);
    let mut out = CMatrix::zeros(n, n);
    out.columns_mut(0, k).copy_from(q);
    out.columns_mut(k, n - k).copy_from(&rest);
    out
}

/// Orthonormal basis of the orthogonal complement of `range(q)`, where `q`
/// has orthonormal columns. Returns an `n×(n−k)` matrix.
pub fn complement(q: &CMatrix) -> CMatrix {
    let (n, k) = q.shape();
    if k >= n {
        return CMatrix::zeros(n, 0);
    }
    let mut aug = CMatrix::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(q);
    aug.columns_mut(k, n).copy_from(&identity(n));
    let full_q = aug.qr().q();
    full_q.columns(k, n - k).into_owned()
}

fn numerical_rank(s: &[f64], tol: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tol * smax).count()
}

/// Number of singular values above `tol · σ_max`.
pub fn rank_tol(a: &CMatrix, tol: f64) -> Result<usize> {
    Ok(numerical_rank(&singular_values(a)?, tol))
}

pub fn rank(a: &CMatrix) -> Result<usize> {
    rank_tol(a, DEFAULT_RANK_TOL)
}

/// Orthonormal basis of `range(a)` at relative tolerance `tol`.
pub fn orth(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (u, s, _) = thin_svd(a)?;
    let r = numerical_rank(&s, tol);
    Ok(u.columns(0, r).into_owned())
}

/// Orthonormal basis (columns) of the right null space of `a`.
pub fn null_space(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (_, s, v) = thin_svd(a)?;
    let r = numerical_rank(&s, tol);
    Ok(complement(&v.columns(0, r).into_owned()))
}

/// Orthonormal basis (columns) of the orthogonal complement of `range(a)`.
pub fn left_null_space(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    Ok(complement(&orth(a, tol)?))
}

/// Moore–Penrose pseudoinverse with the default relative cutoff.
pub fn pinv(a: &CMatrix) -> Result<CMatrix> {
    pinv_tol(a, DEFAULT_RANK_TOL)
}

pub fn pinv_tol(a: &CMatrix, tol: f64) -> Result<CMatrix> {
    let (r, c) = a.shape();
    let (u, s, v) = thin_svd(a)?;
    let rank = numerical_rank(&s, tol);
    let mut out = CMatrix::zeros(c, r);
    for i in 0..rank {
        let inv = C64::new(1.0 / s[i], 0.0);
        out += v.column(i) * u.column(i).adjoint() * inv;
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `a·x ≈ b` via the thin SVD.
pub fn lstsq_min_norm(a: &CMatrix, b: &CVector) -> Result<CVector> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: {} rows vs rhs of length {}",
            a.nrows(),
            b.len()
        )));
    }
    ensure_finite(&CMatrix::from_column_slice(b.len(), 1, b.as_slice()), "lstsq rhs")?;
    let (u, s, v) = thin_svd(a)?;
    let rank = numerical_rank(&s, DEFAULT_RANK_TOL);
    let mut x = CVector::zeros(a.ncols());
    for i in 0..rank {
        let coeff = u.column(i).dotc(b) / s[i];
        x += v.column(i) * coeff;
    }
    Ok(x)
}

/// Inverse of a square block; rejects blocks that are numerically singular.
pub fn inverse(a: &CMatrix, what: &str) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: inverse of a {}×{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "inverse input")?;
    let s = singular_values(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin / smax < SINGULAR_RCOND {
        return Err(Error::DegenerateChannel(format!("{what} is singular")));
    }
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateChannel(format!("{what} is singular")))
}

/// Kronecker product with the standard block layout `[a_ij · b]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let rows = ra
        .checked_mul(rb)
        .ok_or_else(|| Error::DimensionOverflow(format!("kron rows {ra}·{rb}")))?;
    let cols = ca
        .checked_mul(cb)
        .ok_or_else(|| Error::DimensionOverflow(format!("kron cols {ca}·{cb}")))?;
    rows.checked_mul(cols)
        .ok_or_else(|| Error::DimensionOverflow(format!("kron size {rows}·{cols}")))?;
    let mut out = CMatrix::zeros(rows, cols);
    for j in 0..ca {
        for i in 0..ra {
            let aij = a[(i, j)];
            out.view_mut((i * rb, j * cb), (rb, cb)).copy_from(&(b * aij));
        }
    }
    Ok(out)
}

/// Column-major vectorization.
pub fn vec(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if rows * cols != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "unvec: {} entries into {rows}×{cols}",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// The `L²×L` 0/1 matrix mapping a reflection vector `α` to `vec(diag(α))`.
///
/// Column `p` (1-based) has its single one at row `q = p·L − L + p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selector {
    l: usize,
}

pub fn selector_beta(l: usize) -> Selector {
    Selector { l }
}

impl Selector {
    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    /// 1-based row of the one in 1-based column `p`.
    pub fn one_row(&self, p: usize) -> usize {
        p * self.l - self.l + p
    }

    pub fn to_dense(&self) -> CMatrix {
        let l = self.l;
        let mut out = CMatrix::zeros(l * l, l);
        for p in 1..=l {
            out[(self.one_row(p) - 1, p - 1)] = C64::new(1.0, 0.0);
        }
        out
    }

    /// `β·α` without forming `β`.
    pub fn lift(&self, alpha: &CVector) -> CVector {
        let l = self.l;
        let mut out = CVector::zeros(l * l);
        for p in 1..=l.min(alpha.len()) {
            out[self.one_row(p) - 1] = alpha[p - 1];
        }
        out
    }
}

pub fn diag(alpha: &CVector) -> CMatrix {
    CMatrix::from_diagonal(alpha)
}

/// `g · diag(alpha) · f` without forming the diagonal matrix.
pub fn cascade(g: &CMatrix, alpha: &CVector, f: &CMatrix) -> CMatrix {
    let mut scaled = g.clone();
    for (mut col, &a) in scaled.column_iter_mut().zip(alpha.iter()) {
        col *= a;
    }
    scaled * f
}

/// Stacks blocks vertically; all blocks must share a column count.
pub fn vstack(blocks: &[CMatrix]) -> Result<CMatrix> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::DimensionMismatch("vstack: column counts differ".into()));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    Ok(out)
}

/// Places blocks side by side; all blocks must share a row count.
pub fn hstack(blocks: &[CMatrix]) -> Result<CMatrix> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::DimensionMismatch("hstack: row counts differ".into()));
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

/// Smallest singular value (0 for empty input).
pub fn min_singular_value(a: &CMatrix) -> Result<f64> {
    Ok(singular_values(a)?.last().copied().unwrap_or(0.0))
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    fn is_unitary(q: &CMatrix, tol: f64) -> bool {
        (q.adjoint() * q - identity(q.ncols())).norm() <= tol
    }

    #[test]
    fn svd_of_identity() {
        let s = svd(&identity(3)).unwrap();
        assert_eq!(s.s.len(), 3);
        for v in s.s {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_reconstructs_random_square() {
        let mut r = rng(1);
        let a = random_matrix(&mut r, 4, 4);
        let d = svd(&a).unwrap();
        assert!(rel_err(&d.reconstruct(), &a) <= 1e-12);
        assert!(is_unitary(&d.u, 1e-10));
        assert!(is_unitary(&d.v, 1e-10));
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn svd_rectangular_factors_are_square() {
        let mut r = rng(2);
        for (rows, cols) in [(2, 5), (5, 2), (3, 3)] {
            let a = random_matrix(&mut r, rows, cols);
            let d = svd(&a).unwrap();
            assert_eq!(d.u.shape(), (rows, rows));
            assert_eq!(d.v.shape(), (cols, cols));
            assert!(is_unitary(&d.u, 1e-10) && is_unitary(&d.v, 1e-10));
            assert!(rel_err(&d.reconstruct(), &a) <= 1e-12);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let mut r = rng(3);
        let x = random_vector(&mut r, 5);
        let y = random_vector(&mut r, 4);
        let a = &x * y.adjoint();
        let s = svd(&a).unwrap().s;
        assert_eq!(s.iter().filter(|&&v| v > 1e-10).count(), 1);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = identity(2);
        a[(0, 1)] = c64(f64::NAN, 0.0);
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
        assert!(matches!(pinv(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pinv_is_right_inverse_for_full_row_rank() {
        let mut r = rng(4);
        let a = random_matrix(&mut r, 3, 7);
        let p = pinv(&a).unwrap();
        assert!((&a * &p - identity(3)).norm() <= 1e-10);
    }

    #[test]
    fn pinv_involution() {
        let mut r = rng(5);
        let a = random_matrix(&mut r, 6, 4);
        let back = pinv(&pinv(&a).unwrap()).unwrap();
        assert!(rel_err(&back, &a) <= 1e-9);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = CMatrix::zeros(3, 5);
        let p = pinv(&z).unwrap();
        assert_eq!(p.shape(), (5, 3));
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn kron_identity_is_block_diagonal() {
        let mut r = rng(6);
        let b = random_matrix(&mut r, 2, 3);
        let k = kron(&identity(2), &b).unwrap();
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k.view((0, 0), (2, 3)), b);
        assert_eq!(k.view((2, 3), (2, 3)), b);
        assert_eq!(k.view((0, 3), (2, 3)).norm(), 0.0);
        assert_eq!(k.view((2, 0), (2, 3)).norm(), 0.0);
    }

    #[test]
    fn kron_dimensions() {
        let a = CMatrix::zeros(2, 3);
        let b = CMatrix::zeros(4, 5);
        assert_eq!(kron(&a, &b).unwrap().shape(), (8, 15));
    }

    #[test]
    fn vec_kron_identity() {
        let mut r = rng(7);
        let a = random_matrix(&mut r, 3, 3);
        let x = random_matrix(&mut r, 3, 3);
        let b = random_matrix(&mut r, 3, 3);
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a).unwrap() * vec(&x);
        assert!((lhs - rhs).norm() <= 1e-12);
    }

    #[test]
    fn vec_is_column_major() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(3.0, 0.0), c64(2.0, 0.0), c64(4.0, 0.0)],
        );
        let v: Vec<f64> = vec(&a).iter().map(|z| z.re).collect();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec(&vec(&a), 2, 2).unwrap(), a);
        assert!(unvec(&vec(&a), 3, 2).is_err());
    }

    #[test]
    fn vec_is_linear() {
        let mut r = rng(8);
        let a = random_matrix(&mut r, 3, 2);
        let b = random_matrix(&mut r, 3, 2);
        assert_eq!(vec(&(&a + &b)), vec(&a) + vec(&b));
    }

    #[test]
    fn selector_index_formula() {
        let b2 = selector_beta(2).to_dense();
        let ones: Vec<(usize, usize)> = (0..4)
            .flat_map(|q| (0..2).map(move |p| (q, p)))
            .filter(|&(q, p)| b2[(q, p)].re == 1.0)
            .map(|(q, p)| (q + 1, p + 1))
            .collect();
        assert_eq!(ones, vec![(1, 1), (4, 2)]);

        let s3 = selector_beta(3);
        assert_eq!((1..=3).map(|p| s3.one_row(p)).collect::<Vec<_>>(), vec![1, 5, 9]);
        let d3 = s3.to_dense();
        for p in 0..3 {
            assert_eq!(d3.column(p).iter().filter(|z| z.re == 1.0).count(), 1);
        }
    }

    #[test]
    fn selector_lifts_to_diagonal() {
        let mut r = rng(9);
        let alpha = random_vector(&mut r, 5);
        let sel = selector_beta(5);
        let lifted = sel.to_dense() * &alpha;
        assert_eq!(lifted, sel.lift(&alpha));
        assert_eq!(unvec(&lifted, 5, 5).unwrap(), diag(&alpha));
    }

    #[test]
    fn rank_examples() {
        let mut r = rng(10);
        assert_eq!(rank(&identity(4)).unwrap(), 4);
        let a = random_matrix(&mut r, 2, 5);
        let stacked = vstack(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(rank(&stacked).unwrap(), rank(&a).unwrap());
        for (n, m) in [(3, 7), (7, 3), (5, 5)] {
            assert_eq!(rank(&random_matrix(&mut r, n, m)).unwrap(), n.min(m));
        }
    }

    #[test]
    fn null_space_and_complement() {
        let mut r = rng(11);
        let a = random_matrix(&mut r, 4, 9);
        let ns = null_space(&a, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ns.shape(), (9, 5));
        assert!((&a * &ns).norm() <= 1e-12);
        assert!(is_unitary(&ns, 1e-12));

        let tall = random_matrix(&mut r, 6, 2);
        let perp = left_null_space(&tall, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(perp.shape(), (6, 4));
        assert!((perp.adjoint() * &tall).norm() <= 1e-12);
    }

    #[test]
    fn cascade_matches_dense_product() {
        let mut r = rng(12);
        let g = random_matrix(&mut r, 3, 6);
        let f = random_matrix(&mut r, 6, 2);
        let alpha = random_vector(&mut r, 6);
        let direct = &g * diag(&alpha) * &f;
        assert!((cascade(&g, &alpha, &f) - direct).norm() <= 1e-13);
    }

    #[test]
    fn inverse_rejects_singular() {
        let mut r = rng(13);
        let a = random_matrix(&mut r, 3, 1);
        let sing = &a * a.adjoint();
        assert!(matches!(inverse(&sing, "test"), Err(Error::DegenerateChannel(_))));
        let b = random_matrix(&mut r, 3, 3);
        let bi = inverse(&b, "test").unwrap();
        assert!((&b * bi - identity(3)).norm() <= 1e-10);
    }

    #[test]
    fn lstsq_min_norm_matches_pinv() {
        let mut r = rng(14);
        let a = random_matrix(&mut r, 4, 10);
        let b = random_vector(&mut r, 4);
        let x = lstsq_min_norm(&a, &b).unwrap();
        let y = pinv(&a).unwrap() * &b;
        assert!((x - y).norm() <= 1e-12);
    }

    fn dims() -> impl Strategy<Value = (usize, usize, u64)> {
        (1usize..=32, 1usize..=32, any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_svd_reconstruction((rows, cols, seed) in dims()) {
            let mut r = rng(seed);
            let a = random_matrix(&mut r, rows, cols);
            let d = svd(&a).unwrap();
            prop_assert!(rel_err(&d.reconstruct(), &a) <= 1e-12);
            prop_assert!(is_unitary(&d.u, 1e-10));
            prop_assert!(is_unitary(&d.v, 1e-10));
        }

        #[test]
        fn prop_penrose_identities((rows, cols, seed) in dims()) {
            let mut r = rng(seed);
            let a = random_matrix(&mut r, rows, cols);
            let p = pinv(&a).unwrap();
            let scale_a = a.norm();
            let scale_p = p.norm();
            prop_assert!((&a * &p * &a - &a).norm() <= 1e-9 * scale_a);
            prop_assert!((&p * &a * &p - &p).norm() <= 1e-9 * scale_p);
            let ap = &a * &p;
            let pa = &p * &a;
            prop_assert!((&ap - ap.adjoint()).norm() <= 1e-9 * ap.norm().max(1.0));
            prop_assert!((&pa - pa.adjoint()).norm() <= 1e-9 * pa.norm().max(1.0));
        }

        #[test]
        fn prop_vec_kron(n in 1usize..=6, m in 1usize..=6, k in 1usize..=6, seed in any::<u64>()) {
            let mut r = rng(seed);
            let a = random_matrix(&mut r, n, m);
            let x = random_matrix(&mut r, m, k);
            let b = random_matrix(&mut r, k, n);
            let lhs = vec(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a).unwrap() * vec(&x);
            prop_assert!((&lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }
    }
}

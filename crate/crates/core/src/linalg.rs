//! Dense complex linear algebra used throughout the simulator.
//!
//! [`CMatrix`] is a thin newtype over a `nalgebra` dynamic matrix. The
//! decompositions (null space, rank, minimum-norm and zero-forcing solves)
//! all go through one SVD path so that rank decisions are made with a single,
//! consistent cutoff: a singular value counts as zero when it is at most
//! `rel_eps * sigma_max * max(rows, cols)`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Magnitude below which an entry of a unit-norm basis vector is ignored when
/// choosing the canonical phase.
const PHASE_PIVOT_EPS: f64 = 1e-8;

/// Dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        CMatrix(DMatrix::identity(n, n))
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(CMatrix(DMatrix::from_row_slice(rows, cols, entries)))
    }

    /// Builds a matrix from a list of equally long rows.
    ///
    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        CMatrix(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    /// Column vector.
    pub fn column(entries: &[C64]) -> Self {
        CMatrix(DMatrix::from_column_slice(entries.len(), 1, entries))
    }

    /// Row vector.
    pub fn row(entries: &[C64]) -> Self {
        CMatrix(DMatrix::from_row_slice(1, entries.len(), entries))
    }

    pub fn diag(entries: &[C64]) -> Self {
        let n = entries.len();
        CMatrix(DMatrix::from_fn(n, n, |i, j| if i == j { entries[i] } else { C64::new(0.0, 0.0) }))
    }

    pub fn from_inner(m: DMatrix<C64>) -> Self {
        CMatrix(m)
    }

    pub fn as_inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.0[(i, j)] = value;
    }

    /// Column `j` as a column vector.
    pub fn col(&self, j: usize) -> CMatrix {
        CMatrix(DMatrix::from_column_slice(self.0.nrows(), 1, self.0.column(j).as_slice()))
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<C64> {
        let (r, c) = self.shape();
        (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| self.0[(i, j)]).collect()
    }

    /// Entries of a vector (either orientation) in order.
    pub fn to_vec(&self) -> Vec<C64> {
        self.0.iter().copied().collect()
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix(self.0.transpose())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        CMatrix(self.0.adjoint())
    }

    pub fn scale(&self, factor: C64) -> CMatrix {
        CMatrix(self.0.map(|x| x * factor))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&CMatrix]) -> CMatrix {
        let cols = parts.first().map_or(0, |p| p.cols());
        assert!(parts.iter().all(|p| p.cols() == cols), "vstack column mismatch");
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            out.view_mut((r0, 0), (p.rows(), cols)).copy_from(&p.0);
            r0 += p.rows();
        }
        CMatrix(out)
    }

    /// Places matrices with equal row counts side by side.
    pub fn hstack(parts: &[&CMatrix]) -> CMatrix {
        let rows = parts.first().map_or(0, |p| p.rows());
        assert!(parts.iter().all(|p| p.rows() == rows), "hstack row mismatch");
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            out.view_mut((0, c0), (rows, p.cols())).copy_from(&p.0);
            c0 += p.cols();
        }
        CMatrix(out)
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> CMatrix {
        CMatrix(self.0.rows(start, len).into_owned())
    }

    /// Scalar value of a 1x1 matrix.
    pub fn scalar(&self) -> C64 {
        assert_eq!(self.shape(), (1, 1), "scalar() on a non-1x1 matrix");
        self.0[(0, 0)]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CMatrix{:?}[", self.shape())?;
        for i in 0..self.rows() {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let z = self.0[(i, j)];
                write!(f, "{:.4}{:+.4}i", z.re, z.im)?;
            }
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.0[idx]
    }
}

impl Mul<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols(), rhs.rows(), "matrix product dimension mismatch");
        CMatrix(&self.0 * &rhs.0)
    }
}

impl Add<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum dimension mismatch");
        CMatrix(&self.0 + &rhs.0)
    }
}

impl Sub<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix difference dimension mismatch");
        CMatrix(&self.0 - &rhs.0)
    }
}

/// Cutoffs used for rank decisions and residual acceptance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Relative singular-value cutoff.
    pub rel_eps: f64,
    /// Absolute residual cutoff.
    pub abs_eps: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel_eps: 1e-10, abs_eps: 1e-9 }
    }
}

impl Tolerance {
    pub fn new(rel_eps: f64, abs_eps: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(rel_eps) || !ok(abs_eps) {
            return Err(Error::InvalidConfig(format!(
                "tolerances must be finite and positive (rel_eps={rel_eps}, abs_eps={abs_eps})"
            )));
        }
        Ok(Tolerance { rel_eps, abs_eps })
    }

    fn sv_cutoff(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        self.rel_eps * sigma_max * rows.max(cols) as f64
    }
}

/// Kronecker product: entry `(i*rb + p, j*cb + q)` is `a[i,j] * b[p,q]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMatrix(DMatrix::from_fn(ra * rb, ca * cb, |r, c| a.0[(r / rb, c / cb)] * b.0[(r % rb, c % cb)]))
}

/// Stacks the columns of `m` into one column vector.
pub fn vectorize(m: &CMatrix) -> CMatrix {
    // nalgebra storage is column-major already.
    CMatrix::column(m.0.as_slice())
}

/// Inverse of [`vectorize`]: refolds a length `rows*cols` vector column by column.
pub fn unvectorize(v: &CMatrix, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.0.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot fold {} entries into {rows}x{cols}",
            v.0.len()
        )));
    }
    Ok(CMatrix(DMatrix::from_column_slice(rows, cols, v.0.as_slice())))
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.0.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Numerical rank under the relative singular-value cutoff.
pub fn rank(a: &CMatrix, tol: &Tolerance) -> usize {
    let s = singular_values(a);
    let Some(&smax) = s.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    let cutoff = tol.sv_cutoff(smax, a.rows(), a.cols());
    s.iter().filter(|&&x| x > cutoff).count()
}

/// Orthonormal basis of the right null space of `a`, one vector per column.
///
/// Columns are ordered by ascending singular value (ties by position in the
/// decomposition) and each is rotated so that its first entry of non-negligible
/// magnitude is real and positive. A trivial null space yields a
/// `cols(a) x 0` matrix.
pub fn null_space(a: &CMatrix, tol: &Tolerance) -> CMatrix {
    let (r, c) = a.shape();
    if c == 0 {
        return CMatrix::zeros(0, 0);
    }
    // A wide matrix is padded with zero rows so the SVD returns a full V.
    let square = if r < c {
        CMatrix::vstack(&[a, &CMatrix::zeros(c - r, c)])
    } else {
        a.clone()
    };
    let svd = SVD::new(square.0, false, true);
    let v_t = svd.v_t.expect("SVD computed with V");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cutoff = tol.sv_cutoff(smax, r, c);

    let mut idx: Vec<usize> = (0..s.len()).filter(|&j| s[j] <= cutoff).collect();
    idx.sort_by(|&x, &y| s[x].total_cmp(&s[y]).then(x.cmp(&y)));

    let mut basis = DMatrix::zeros(c, idx.len());
    for (out_col, &j) in idx.iter().enumerate() {
        let mut v: Vec<C64> = v_t.row(j).iter().map(|z| z.conj()).collect();
        canonical_phase(&mut v);
        for (i, z) in v.into_iter().enumerate() {
            basis[(i, out_col)] = z;
        }
    }
    CMatrix(basis)
}

fn canonical_phase(v: &mut [C64]) {
    if let Some(pivot) = v.iter().copied().find(|z| z.norm() > PHASE_PIVOT_EPS) {
        let rot = pivot.conj() / pivot.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Applies the truncated pseudo-inverse of `a` to `b`.
fn pinv_apply(a: &CMatrix, b: &CMatrix, tol: &Tolerance) -> CMatrix {
    let (r, c) = a.shape();
    let mut x = DMatrix::zeros(c, b.cols());
    if r == 0 || c == 0 {
        return CMatrix(x);
    }
    let svd = SVD::new(a.0.clone(), true, true);
    let u = svd.u.expect("SVD computed with U");
    let v_t = svd.v_t.expect("SVD computed with V");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return CMatrix(x);
    }
    let cutoff = tol.sv_cutoff(smax, r, c);
    for j in 0..s.len() {
        if s[j] <= cutoff {
            continue;
        }
        // coefficient row: (u_j^H b) / s_j
        let coef = (u.column(j).adjoint() * &b.0) / C64::new(s[j], 0.0);
        let v_j = v_t.row(j).adjoint();
        x += v_j * coef;
    }
    CMatrix(x)
}

/// Minimum-norm solution of `a x = b`.
///
/// Fails with [`Error::InconsistentSystem`] when the least-squares residual
/// exceeds `abs_eps * (1 + ||b||)`.
pub fn solve_least_norm(a: &CMatrix, b: &CMatrix, tol: &Tolerance) -> Result<CMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "system matrix has {} rows, right-hand side {}",
            a.rows(),
            b.rows()
        )));
    }
    let x = pinv_apply(a, b, tol);
    let residual = (&(a * &x) - b).frobenius_norm();
    let threshold = tol.abs_eps * (1.0 + b.frobenius_norm());
    if residual > threshold {
        return Err(Error::InconsistentSystem { residual, threshold });
    }
    Ok(x)
}

/// Zero-forcing (least-squares) solve of `h s = y` for a full-column-rank `h`.
pub fn zf_solve(h: &CMatrix, y: &CMatrix, tol: &Tolerance) -> Result<CMatrix> {
    if h.rows() != y.rows() {
        return Err(Error::DimensionMismatch(format!(
            "channel matrix has {} rows, observation {}",
            h.rows(),
            y.rows()
        )));
    }
    let r = rank(h, tol);
    if r != h.cols() {
        return Err(Error::RankDeficient { rank: r, expected: h.cols() });
    }
    Ok(pinv_apply(h, y, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        let entries: Vec<C64> =
            (0..rows * cols).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        CMatrix::from_row_major(rows, cols, &entries).unwrap()
    }

    #[test]
    fn kron_identity_and_scalar() {
        assert_eq!(kron(&CMatrix::identity(2), &CMatrix::identity(2)), CMatrix::identity(4));
        let two = CMatrix::from_rows(&[vec![c(2.0, 0.0)]]);
        assert_eq!(kron(&two, &CMatrix::identity(2)), CMatrix::diag(&[c(2.0, 0.0), c(2.0, 0.0)]));
    }

    #[test]
    fn kron_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 2, 2);
        let b = random(&mut rng, 2, 2);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 2 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn vectorize_stacks_columns() {
        let m = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(3.0, 0.0), c(4.0, 0.0)]]);
        let v = vectorize(&m);
        assert_eq!(v.to_vec(), vec![c(1.0, 0.0), c(3.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert_eq!(unvectorize(&v, 2, 2).unwrap(), m);
        let col = CMatrix::column(&[c(1.0, 1.0), c(0.0, 2.0)]);
        assert_eq!(vectorize(&col), col);
    }

    #[test]
    fn vec_of_triple_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, x, b) = (random(&mut rng, 2, 2), random(&mut rng, 2, 2), random(&mut rng, 2, 2));
        let lhs = vectorize(&(&(&a * &x) * &b));
        let rhs = &kron(&b.transpose(), &a) * &vectorize(&x);
        assert!((&lhs - &rhs).max_abs() < 1e-12);
    }

    #[test]
    fn null_space_axis_and_full_rank() {
        let n = null_space(&CMatrix::row(&[c(1.0, 0.0), c(0.0, 0.0)]), &Tolerance::default());
        assert_eq!(n.shape(), (2, 1));
        assert!((n[(0, 0)]).norm() < 1e-14);
        assert!((n[(1, 0)] - c(1.0, 0.0)).norm() < 1e-14);

        let n = null_space(&CMatrix::identity(3), &Tolerance::default());
        assert_eq!(n.shape(), (3, 0));
    }

    #[test]
    fn null_space_random_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 2, 4);
        let n = null_space(&a, &Tolerance::default());
        assert_eq!(n.cols(), 2);
        assert!((&a * &n).max_abs() < 1e-10);
        for j in 0..n.cols() {
            let first = n.col(j).to_vec().into_iter().find(|z| z.norm() > 1e-8).unwrap();
            assert!(first.im.abs() < 1e-14 && first.re > 0.0);
        }
    }

    #[test]
    fn rank_examples() {
        let tol = Tolerance::default();
        assert_eq!(rank(&CMatrix::identity(2), &tol), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random(&mut rng, 3, 1);
        let v = random(&mut rng, 1, 4);
        assert_eq!(rank(&(&u * &v), &tol), 1);
        assert_eq!(rank(&CMatrix::zeros(2, 3), &tol), 0);
    }

    #[test]
    fn least_norm_examples() {
        let tol = Tolerance::default();
        let b = CMatrix::column(&[c(1.0, 0.0), c(2.0, 0.0)]);
        let x = solve_least_norm(&CMatrix::identity(2), &b, &tol).unwrap();
        assert!((&x - &b).max_abs() < 1e-14);

        let a = CMatrix::row(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let x = solve_least_norm(&a, &CMatrix::column(&[c(3.0, 0.0)]), &tol).unwrap();
        assert!((&x - &CMatrix::column(&[c(3.0, 0.0), c(0.0, 0.0)])).max_abs() < 1e-14);
    }

    #[test]
    fn least_norm_beats_sampled_alternatives() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 2, 4);
        let b = random(&mut rng, 2, 1);
        let x = solve_least_norm(&a, &b, &tol).unwrap();
        assert!((&(&a * &x) - &b).frobenius_norm() < 1e-10);
        let n = null_space(&a, &tol);
        for _ in 0..200 {
            let w = random(&mut rng, n.cols(), 1);
            let alt = &x + &(&n * &w);
            assert!((&(&a * &alt) - &b).frobenius_norm() < 1e-10);
            assert!(x.frobenius_norm() <= alt.frobenius_norm() + 1e-12);
        }
    }

    #[test]
    fn least_norm_rejects_inconsistent_system() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 4, 2);
        let b = random(&mut rng, 4, 1);
        assert!(matches!(solve_least_norm(&a, &b, &tol), Err(Error::InconsistentSystem { .. })));
    }

    #[test]
    fn zf_examples() {
        let tol = Tolerance::default();
        let s = CMatrix::column(&[c(0.3, -1.0), c(2.0, 0.5)]);
        assert!((&zf_solve(&CMatrix::identity(2), &s, &tol).unwrap() - &s).max_abs() < 1e-14);

        let h = CMatrix::diag(&[c(2.0, 0.0), c(0.0, 4.0)]);
        let y = CMatrix::column(&[c(2.0, 0.0), c(0.0, 4.0)]);
        let x = zf_solve(&h, &y, &tol).unwrap();
        assert!((&x - &CMatrix::column(&[c(1.0, 0.0), c(1.0, 0.0)])).max_abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random(&mut rng, 4, 4);
        let s = random(&mut rng, 4, 1);
        let x = zf_solve(&h, &(&h * &s), &tol).unwrap();
        assert!((&x - &s).max_abs() < 1e-9);
    }

    #[test]
    fn zf_rejects_rank_deficient() {
        let h = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(4.0, 0.0)]]);
        let y = CMatrix::column(&[c(1.0, 0.0), c(2.0, 0.0)]);
        assert_eq!(
            zf_solve(&h, &y, &Tolerance::default()),
            Err(Error::RankDeficient { rank: 1, expected: 2 })
        );
    }

    #[test]
    fn tolerance_must_be_positive() {
        assert!(Tolerance::new(0.0, 1e-9).is_err());
        assert!(Tolerance::new(1e-10, f64::NAN).is_err());
        assert!(Tolerance::new(1e-10, 1e-9).is_ok());
    }
}

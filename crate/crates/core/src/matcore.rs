//! Dense column-major matrices and the handful of linear-algebra kernels the
//! solvers need: norms, a compact SVD, the Moore–Penrose pseudo-inverse and
//! orthogonal projections onto column and row spaces.
//!
//! Columns are contiguous. For a data matrix built from a hyperspectral cube
//! every column is one voxel, so per-voxel work never strides.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are dropped from the
/// compact SVD.
pub const SVD_TRUNCATION: f64 = 1e-12;

/// Tolerance used when checking that a basis is orthonormal.
const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:>12.5e} ", self.get(i, j))?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Matrix norms. Column norms are Euclidean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Largest singular value.
    Spectral,
    /// Sum of singular values.
    Nuclear,
    Frobenius,
    /// Sum of absolute entries.
    L1,
    /// Sum of column l2 norms.
    L12,
    /// Largest absolute entry.
    Inf,
    /// Largest column l2 norm.
    Inf2,
    /// Largest row l1 norm.
    InfInf,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, &v) in values.iter().enumerate() {
            data[i * n + i] = v;
        }
        Mat::from_col_major(n, n, data)
    }

    /// Builds a matrix from column-major data, rejecting NaN and infinities.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| {
            Error::Dimension(format!("{rows}x{cols} overflows the address space"))
        })?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: p % rows.max(1), col: p / rows.max(1) });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from a slice of rows. Convenient for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("ragged row literal".into()));
        }
        let mut data = vec![0.0; n * m];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        Mat::from_col_major(n, m, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Mat::from_col_major(rows, cols, data)
    }

    /// Assembles a matrix from equal-length columns.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Dimension(format!("every column must have {rows} entries")));
        }
        let data = columns.iter().flat_map(|c| c.iter().copied()).collect();
        Mat::from_col_major(rows, columns.len(), data)
    }

    /// Internal constructor for results of arithmetic on finite inputs. Overflow
    /// can still produce infinities; the solver checks for them explicitly.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    /// Column-major backing storage.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub(crate) fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry as (row, col).
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p % self.rows.max(1), p / self.rows.max(1)))
    }

    pub fn transpose(&self) -> Mat {
        let mut out = vec![0.0; self.data.len()];
        for j in 0..self.cols {
            for i in 0..self.rows {
                out[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        Mat::from_raw(self.cols, self.rows, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    fn check_same_shape(&self, other: &Mat, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub(crate) fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Mat::from_raw(self.rows, self.cols, data)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for j in 0..m {
            let dst = &mut out[j * n..(j + 1) * n];
            for p in 0..k {
                let b = other.data[j * k + p];
                if b == 0.0 {
                    continue;
                }
                let src = &self.data[p * n..(p + 1) * n];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Mat::from_raw(n, m, out))
    }

    /// `selfᵀ * other` without forming the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "t_matmul: ({}x{})ᵀ * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for j in 0..m {
            let b = other.col(j);
            for i in 0..n {
                out[j * n + i] = dot(self.col(i), b);
            }
        }
        Ok(Mat::from_raw(n, m, out))
    }

    /// `self * otherᵀ` without forming the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_t: {}x{} * ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let a = self.col(p);
            let b = other.col(p);
            for (j, &bj) in b.iter().enumerate() {
                if bj == 0.0 {
                    continue;
                }
                let dst = &mut out[j * n..(j + 1) * n];
                for (d, &ai) in dst.iter_mut().zip(a) {
                    *d += ai * bj;
                }
            }
        }
        Ok(Mat::from_raw(n, m, out))
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols).map(|j| l2(self.col(j))).collect()
    }

    /// Copy of the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.rows);
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Mat::from_raw(self.rows, idx.len(), data)
    }

    /// Leading `k` columns.
    pub fn leading_columns(&self, k: usize) -> Mat {
        Mat::from_raw(self.rows, k, self.data[..k * self.rows].to_vec())
    }

    /// Leading `k` rows.
    pub fn leading_rows(&self, k: usize) -> Mat {
        let mut data = Vec::with_capacity(k * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.col(j)[..k]);
        }
        Mat::from_raw(k, self.cols, data)
    }

    /// Number of entries with magnitude strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.data.iter().filter(|v| v.abs() > threshold).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Mat {
        Mat::from_raw(m.nrows(), m.ncols(), m.as_slice().to_vec())
    }
}

impl serde::Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("Mat", 3)?;
        st.serialize_field("rows", &self.rows())?;
        st.serialize_field("cols", &self.cols())?;
        st.serialize_field("data", self.as_slice())?;
        st.end()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Compact SVD `a = u · diag(sigma) · vt` with `sigma` descending.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub vt: Mat,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `u · diag(weights) · vt`.
    pub fn recompose_with(&self, weights: &[f64]) -> Mat {
        let k = weights.len().min(self.sigma.len());
        let (rows, cols) = (self.u.rows, self.vt.cols);
        let mut out = vec![0.0; rows * cols];
        for p in 0..k {
            let w = weights[p];
            if w == 0.0 {
                continue;
            }
            let ucol = self.u.col(p);
            for j in 0..cols {
                let c = w * self.vt.get(p, j);
                if c == 0.0 {
                    continue;
                }
                let dst = &mut out[j * rows..(j + 1) * rows];
                for (d, &ui) in dst.iter_mut().zip(ucol) {
                    *d += ui * c;
                }
            }
        }
        Mat::from_raw(rows, cols, out)
    }

    pub fn reconstruct(&self) -> Mat {
        self.recompose_with(&self.sigma)
    }

    /// Right singular vectors as columns.
    pub fn v(&self) -> Mat {
        self.vt.transpose()
    }
}

const SVD_CHECK: f64 = 1e-10;

fn to_faer(a: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.rows, a.cols, |i, j| a.get(i, j))
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_raw(m.nrows(), m.ncols(), (0..m.ncols()).flat_map(|j| (0..m.nrows()).map(move |i| m[(i, j)])).collect())
}

// Every decomposition is verified against the input and retried on the
// transpose before giving up.
fn checked_svd(a: &Mat, factors: bool) -> Option<(Vec<f64>, Option<(Mat, Mat)>)> {
    let fa = to_faer(a);
    let norm2 = fa.squared_norm_l2();
    for transposed in [false, true] {
        let input = if transposed { fa.transpose().to_owned() } else { fa.clone() };
        if !factors {
            let Ok(sigma) = input.singular_values() else { continue };
            let sum: f64 = sigma.iter().map(|s| s * s).sum();
            if sigma.iter().all(|s| s.is_finite()) && (sum - norm2).abs() <= SVD_CHECK * norm2 {
                return Some((sigma, None));
            }
            continue;
        }
        let Ok(svd) = input.thin_svd() else { continue };
        let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
        if sigma.iter().any(|s| !s.is_finite()) {
            continue;
        }
        let rec = svd.U() * svd.S() * svd.V().transpose();
        if (rec - &input).squared_norm_l2() > SVD_CHECK * SVD_CHECK * norm2 {
            continue;
        }
        // aᵀ = U S Vᵀ gives a = V S Uᵀ
        let (u, v) = if transposed { (svd.V(), svd.U()) } else { (svd.U(), svd.V()) };
        return Some((sigma, Some((from_faer(u), from_faer(v.transpose())))));
    }
    None
}

fn full_svd(a: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    match checked_svd(a, true) {
        Some((sigma, Some((u, vt)))) => Ok((u, sigma, vt)),
        _ => Err(Error::SvdFailure { rows: a.rows, cols: a.cols }),
    }
}

/// Compact SVD. Singular values below `SVD_TRUNCATION · sigma[0]` are dropped,
/// so the number of retained triplets is the numerical rank.
pub fn svd(a: &Mat) -> Result<SvdFactors> {
    if a.is_empty() {
        return Err(Error::Precondition("svd of an empty matrix".into()));
    }
    let (u, sigma, vt) = full_svd(a)?;
    let cutoff = SVD_TRUNCATION * sigma.first().copied().unwrap_or(0.0);
    let k = sigma.iter().take_while(|&&s| s > cutoff && s > 0.0).count();
    Ok(SvdFactors {
        u: u.leading_columns(k),
        sigma: sigma[..k].to_vec(),
        vt: vt.leading_rows(k),
    })
}

/// All `min(rows, cols)` singular values, descending, including zeros.
pub fn singular_values(a: &Mat) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    checked_svd(a, false)
        .map(|(sigma, _)| sigma)
        .ok_or(Error::SvdFailure { rows: a.rows, cols: a.cols })
}

/// Moore–Penrose pseudo-inverse of a full-rank matrix. Thin inputs need full
/// column rank, fat inputs full row rank.
pub fn pseudo_inverse(d: &Mat) -> Result<Mat> {
    if d.is_empty() {
        return Err(Error::Precondition("pseudo-inverse of an empty matrix".into()));
    }
    let (u, sigma, vt) = full_svd(d)?;
    let smax = sigma[0];
    let smin = *sigma.last().unwrap();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio <= SVD_TRUNCATION {
        return Err(Error::Singular { ratio });
    }
    // D† = V Σ⁻¹ Uᵀ over the min(rows, cols) retained triplets.
    let k = sigma.len();
    let uk = u.leading_columns(k);
    let mut vs = vt.leading_rows(k).transpose();
    for p in 0..k {
        let inv = 1.0 / sigma[p];
        for x in vs.col_mut(p) {
            *x *= inv;
        }
    }
    vs.matmul_t(&uk)
}

pub fn norm(a: &Mat, kind: NormKind) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Precondition("norm of an empty matrix".into()));
    }
    let v = match kind {
        NormKind::Spectral => singular_values(a)?.first().copied().unwrap_or(0.0),
        NormKind::Nuclear => singular_values(a)?.iter().sum(),
        NormKind::Frobenius => l2(&a.data),
        NormKind::L1 => a.data.iter().map(|v| v.abs()).sum(),
        NormKind::L12 => a.column_norms().iter().sum(),
        NormKind::Inf => a.max_abs(),
        NormKind::Inf2 => a.column_norms().into_iter().fold(0.0, f64::max),
        NormKind::InfInf => (0..a.rows)
            .map(|i| (0..a.cols).map(|j| a.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max),
    };
    Ok(v)
}

/// Frobenius norm; never fails, zero for empty matrices.
pub fn frobenius(a: &Mat) -> f64 {
    l2(&a.data)
}

fn check_orthonormal(u: &Mat) -> Result<()> {
    let g = u.t_matmul(u)?;
    let dev = g.sub(&Mat::identity(u.cols))?.max_abs();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::Precondition(format!(
            "basis columns are not orthonormal (max |UᵀU - I| = {dev:e})"
        )));
    }
    Ok(())
}

/// `U Uᵀ x`: projection of every column of `x` onto `col(u)`.
pub fn project_colspace(u: &Mat, x: &Mat) -> Result<Mat> {
    check_orthonormal(u)?;
    u.matmul(&u.t_matmul(x)?)
}

/// `(I − U Uᵀ) x`.
pub fn project_colspace_complement(u: &Mat, x: &Mat) -> Result<Mat> {
    let p = project_colspace(u, x)?;
    x.sub(&p)
}

/// `x V Vᵀ`: projection of every row of `x` onto `col(v)`.
pub fn project_rowspace(v: &Mat, x: &Mat) -> Result<Mat> {
    check_orthonormal(v)?;
    x.matmul(v)?.matmul_t(v)
}

/// Orthonormal basis of `col(a)` from the compact SVD.
pub fn orthonormal_basis(a: &Mat) -> Result<Mat> {
    Ok(svd(a)?.u)
}

/// Largest principal angle (radians) between the column spaces of two
/// orthonormal bases of equal dimension.
pub fn max_principal_angle(qa: &Mat, qb: &Mat) -> Result<f64> {
    if qa.cols != qb.cols {
        return Err(Error::Dimension(format!(
            "subspace dimensions differ: {} vs {}",
            qa.cols, qb.cols
        )));
    }
    if qa.cols == 0 {
        return Ok(0.0);
    }
    let cosines = singular_values(&qa.t_matmul(qb)?)?;
    let smallest = cosines.last().copied().unwrap_or(0.0).clamp(0.0, 1.0);
    // acos is badly conditioned near 1; recover the sine from the residual instead.
    let resid = qb.sub(&project_colspace(qa, qb)?)?;
    let sine = singular_values(&resid)?.first().copied().unwrap_or(0.0).clamp(0.0, 1.0);
    Ok(if smallest > 0.7 { sine.asin() } else { smallest.acos() })
}

//! Dense linear algebra and fixed-step integration kernel.
//!
//! Everything here is small and dense: the largest matrices handled by the
//! rest of the crate are `K·N·M` square with desk-scale networks, so a
//! row-major `Vec<f64>` and cyclic Jacobi rotations are all that is needed.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Numerical tolerances shared by operations and tests.
pub mod tol {
    /// Jacobi stops once the off-diagonal Frobenius norm drops below this
    /// fraction of the matrix Frobenius norm.
    pub const EIGEN_OFF_DIAGONAL: f64 = 1e-12;
    /// Maximum number of full Jacobi sweeps.
    pub const EIGEN_MAX_SWEEPS: usize = 100;
    /// Second-smallest Laplacian eigenvalue above which a graph is connected.
    pub const CONNECTIVITY: f64 = 1e-8;
    /// Accepted deviation of a bearing from unit norm.
    pub const UNIT_NORM: f64 = 1e-9;
    /// Accepted asymmetry of an adjacency matrix.
    pub const ADJACENCY_SYMMETRY: f64 = 1e-12;
    /// Absolute magnitude of any simulated state component that counts as divergence.
    pub const DIVERGENCE: f64 = 1e9;
    /// Absolute slack allowed on the Lyapunov envelope check.
    pub const LYAPUNOV_SLACK: f64 = 1e-9;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Jacobi eigensolver did not converge for a {n}x{n} matrix after {sweeps} sweeps")]
    NoConvergence { n: usize, sweeps: usize },
    #[error("bearing must have unit norm, got norm {norm}")]
    NotUnit { norm: f64 },
    #[error("non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Vec3 = [f64; 3];

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::Dimension(format!(
                "vector of length {} for {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NumericsError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumericsError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Copy `block` into this matrix with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut b = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                b[(r, c)] = self[(r0 + r, c0 + c)];
            }
        }
        b
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Square symmetric matrix. Construction symmetrizes by averaging, so
/// `a[(i, j)] == a[(j, i)]` holds exactly afterwards.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.0)
    }
}

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self, NumericsError> {
        if m.rows != m.cols {
            return Err(NumericsError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        if m.data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let mut m = m;
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self(Matrix::from_diag(diag))
    }

    /// Block-diagonal stacking of symmetric blocks.
    pub fn block_diag(blocks: &[SymMatrix]) -> Self {
        let n: usize = blocks.iter().map(SymMatrix::dim).sum();
        let mut m = Matrix::zeros(n, n);
        let mut off = 0;
        for b in blocks {
            m.set_block(off, off, b.as_matrix());
            off += b.dim();
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, NumericsError> {
        Ok(Self(self.0.add(&other.0)?))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, NumericsError> {
        Ok(Self(self.0.sub(&other.0)?))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self(self.0.scale(s))
    }

    pub fn shift(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows {
            m[(i, i)] += s;
        }
        Self(m)
    }

    pub fn eigen(&self) -> Result<Spectrum, NumericsError> {
        sym_eigen(self)
    }

    pub fn min_eigenvalue(&self) -> Result<f64, NumericsError> {
        Ok(self.eigen()?.eigenvalues[0])
    }

    /// Spectral norm, i.e. the largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64, NumericsError> {
        let s = self.eigen()?;
        Ok(s.eigenvalues.iter().fold(0.0, |m, l| m.max(l.abs())))
    }

    /// Lower Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<Matrix, NumericsError> {
        let n = self.dim();
        let a = &self.0;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(NumericsError::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }

    /// Solve `A x = b` for SPD `A`.
    pub fn spd_solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let n = self.dim();
        if b.len() != n {
            return Err(NumericsError::Dimension(format!(
                "rhs of length {} for n = {n}",
                b.len()
            )));
        }
        let l = self.cholesky()?;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
            y[i] = (b[i] - s) / l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
            x[i] = (y[i] - s) / l[(i, i)];
        }
        Ok(x)
    }

    pub fn spd_inverse(&self) -> Result<SymMatrix, NumericsError> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = self.spd_solve(&e)?;
            for (r, v) in col.into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        SymMatrix::new(inv)
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues, with
/// column `i` of `eigenvectors` paired to `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q diag(λ) Qᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let q = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| q[(i, k)] * self.eigenvalues[k] * q[(j, k)]).sum();
            }
        }
        out
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Eigenvalues come back ascending. Each eigenvector is signed so that its
/// first non-negligible component is positive, which keeps downstream
/// reports reproducible.
pub fn sym_eigen(a: &SymMatrix) -> Result<Spectrum, NumericsError> {
    let n = a.dim();
    if n == 0 {
        return Err(NumericsError::Dimension("empty matrix".into()));
    }
    let mut m = a.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    let threshold = tol::EIGEN_OFF_DIAGONAL * scale;

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += 2.0 * m[(p, q)] * m[(p, q)];
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0 || n == 1;
    let mut sweeps = 0;
    while !converged {
        if off_norm(&m) <= threshold {
            converged = true;
            break;
        }
        if sweeps == tol::EIGEN_MAX_SWEEPS {
            break;
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence { n, sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let sign = col.iter().find(|x| x.abs() > 1e-10).map_or(1.0, |x| x.signum());
        for (r, x) in col.iter().enumerate() {
            eigenvectors[(r, dst)] = sign * x;
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Strict positive-definiteness test: `λ_min(a) > margin`.
pub fn is_pd(a: &SymMatrix, margin: f64) -> Result<bool, NumericsError> {
    Ok(a.min_eigenvalue()? > margin)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for r in 0..b.rows {
                for c in 0..b.cols {
                    out[(i * b.rows + r, j * b.cols + c)] = s * b[(r, c)];
                }
            }
        }
    }
    out
}

/// Orthogonal projector `I₃ − b bᵀ` onto the plane orthogonal to the unit vector `b`.
pub fn projection_matrix(b: &Vec3) -> Result<SymMatrix, NumericsError> {
    let n = norm3(b);
    if !n.is_finite() || (n - 1.0).abs() > tol::UNIT_NORM {
        return Err(NumericsError::NotUnit { norm: n });
    }
    let mut m = Matrix::identity(3);
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] -= b[i] * b[j];
        }
    }
    SymMatrix::new(m)
}

/// One classical fourth-order Runge-Kutta step for a fallible derivative.
pub fn try_rk4_step<F, E>(mut f: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: From<NumericsError>,
{
    let n = state.len();
    let mut eval = |tt: f64, x: &[f64]| -> Result<Vec<f64>, E> {
        let d = f(tt, x)?;
        if d.len() != n {
            return Err(
                NumericsError::Dimension(format!("derivative of length {} for state of length {n}", d.len())).into(),
            );
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteDerivative { t: tt }.into());
        }
        Ok(d)
    };
    let axpy = |a: f64, d: &[f64]| -> Vec<f64> { state.iter().zip(d).map(|(x, k)| x + a * k).collect() };

    let k1 = eval(t, state)?;
    let k2 = eval(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = eval(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = eval(t + h, &axpy(h, &k3))?;
    Ok((0..n)
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(mut f: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    try_rk4_step(|tt, x| Ok::<_, NumericsError>(f(tt, x)), t, state, h)
}

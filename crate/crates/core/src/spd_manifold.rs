//! Geometry of the manifold of symmetric positive-definite matrices under the
//! affine-invariant metric `g_Y(A, B) = tr(Y⁻¹ A Y⁻¹ B)`.
//!
//! Every matrix function goes through a symmetric eigendecomposition. Inputs
//! are symmetrized as `(M + Mᵀ)/2` first so rounding drift never reaches the
//! eigensolver.

use crate::error::{domain, Error, Result};
use alloc::format;
use nalgebra::{DMatrix, DVector};

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Matrices with `λ_min <= SPD_REL_FLOOR * λ_max` are rejected as not SPD.
pub const SPD_REL_FLOOR: f64 = 1e-12;

/// A real symmetric matrix (tangent vectors, Euclidean gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// A symmetric positive-definite matrix (points of the manifold).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(SymMatrix);

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(domain(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite(format!("entry ({i},{j})")));
            }
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(1.0) {
                return Err(domain(format!("not symmetric at ({i},{j}): {a} vs {b}")));
            }
        }
        if !m[(i, i)].is_finite() {
            return Err(Error::NonFinite(format!("entry ({i},{i})")));
        }
    }
    Ok(())
}

impl SymMatrix {
    /// Validates symmetry, then stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        Ok(Self(symmetrize(&m)))
    }

    /// Stores `(M + Mᵀ)/2` without checking how asymmetric `M` was.
    pub fn from_symmetrized(m: &DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::DimMismatch { expected: d * d, got: data.len() });
        }
        Self::new(DMatrix::from_row_slice(d, d, data))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        same_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 + &other.0))
    }

    /// Frobenius inner product `tr(A B)`.
    pub fn frobenius_dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `Q M Qᵀ`.
    pub fn congruence(&self, q: &DMatrix<f64>) -> Self {
        Self::from_symmetrized(&(q * &self.0 * q.transpose()))
    }
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::new(m)?)
    }

    pub fn from_sym(s: SymMatrix) -> Result<Self> {
        let eig = sym_eig(&s)?;
        check_spd_spectrum(eig.values.as_slice())?;
        Ok(Self(s))
    }

    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_row_slice(d, data)?)
    }

    pub fn identity(d: usize) -> Self {
        Self(SymMatrix::identity(d))
    }

    pub fn scaled_identity(d: usize, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(domain(format!("scale must be positive, got {s}")));
        }
        Ok(Self(SymMatrix::identity(d).scale(s)))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.0.as_matrix()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0.into_matrix()
    }

    pub fn congruence(&self, q: &DMatrix<f64>) -> Result<Self> {
        Self::from_sym(self.0.congruence(q))
    }

    pub fn eigen(&self) -> Result<SymEigen> {
        sym_eig(&self.0)
    }

    /// `det(M)^{1/d}`, the geometric mean of the eigenvalues.
    pub fn det_root(&self) -> Result<f64> {
        Ok(self.eigen()?.geometric_mean())
    }

    pub fn lambda_min(&self) -> Result<f64> {
        Ok(self.eigen()?.values[0])
    }
}

fn check_spd_spectrum(values: &[f64]) -> Result<()> {
    let min = values.first().copied().unwrap_or(1.0);
    let max = values.last().copied().unwrap_or(1.0);
    if !(min > 0.0) || min <= SPD_REL_FLOOR * max {
        return Err(domain(format!("matrix is not positive definite (λ_min={min:e}, λ_max={max:e})")));
    }
    Ok(())
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Symmetric eigendecomposition `M = V diag(λ) Vᵀ`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).scale_mut(fl);
        }
        SymMatrix::from_symmetrized(&(scaled * self.vectors.transpose()))
    }

    pub fn geometric_mean(&self) -> f64 {
        let d = self.values.len() as f64;
        libm::exp(self.values.iter().map(|&l| libm::log(l)).sum::<f64>() / d)
    }

    /// Whether the smallest eigenvalue is repeated within `tol` (relative).
    pub fn min_is_degenerate(&self, tol: f64) -> bool {
        self.values.len() > 1 && (self.values[1] - self.values[0]) <= tol * self.values[0].abs().max(1.0)
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEigen> {
    let d = m.dim();
    let a = symmetrize(m.as_matrix());
    let eig = a.try_symmetric_eigen(f64::EPSILON, 0).ok_or(Error::NonConvergence)?;
    let mut order: alloc::vec::Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence);
    }
    Ok(SymEigen { values, vectors })
}

/// Scalar functions that can be lifted to symmetric matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatFn {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
}

impl MatFn {
    fn needs_positive(self) -> bool {
        !matches!(self, MatFn::Exp)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            MatFn::Exp => libm::exp(x),
            MatFn::Log => libm::log(x),
            MatFn::Sqrt => libm::sqrt(x),
            MatFn::InvSqrt => 1.0 / libm::sqrt(x),
        }
    }
}

/// `V diag(f(λ)) Vᵀ` for the spectral decomposition of `m`.
pub fn mat_fn(m: &SymMatrix, f: MatFn) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if f.needs_positive() && !(eig.values[0] > 0.0) {
        return Err(domain(format!("{f:?} needs a positive definite argument (λ_min={})", eig.values[0])));
    }
    Ok(eig.map(|l| f.apply(l)))
}

/// Affine-invariant inner product `tr(Y⁻¹ A Y⁻¹ B)` on the tangent space at `y`.
pub fn metric(y: &SpdMatrix, a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    same_dim(y.dim(), a.dim())?;
    same_dim(y.dim(), b.dim())?;
    let chol = y
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| domain("metric base point is not positive definite"))?;
    let ya = chol.solve(a.as_matrix());
    let yb = chol.solve(b.as_matrix());
    // tr(X W) = Σ_ij X_ij W_ji
    Ok(ya.dot(&yb.transpose()))
}

/// Affine-invariant geodesic distance `‖log(Y^{-1/2} Z Y^{-1/2})‖_F`.
pub fn geodesic_distance(y: &SpdMatrix, z: &SpdMatrix) -> Result<f64> {
    same_dim(y.dim(), z.dim())?;
    let inv_sqrt = y.eigen()?.map(|l| 1.0 / libm::sqrt(l));
    let inner = SymMatrix::from_symmetrized(&(inv_sqrt.as_matrix() * z.as_matrix() * inv_sqrt.as_matrix()));
    let eig = sym_eig(&inner)?;
    check_spd_spectrum(eig.values.as_slice())?;
    Ok(libm::sqrt(eig.values.iter().map(|&l| libm::log(l).powi(2)).sum()))
}

/// Exponential map `Y^{1/2} exp(Y^{-1/2} Δ Y^{-1/2}) Y^{1/2}`.
pub fn exp_map(y: &SpdMatrix, delta: &SymMatrix) -> Result<SpdMatrix> {
    same_dim(y.dim(), delta.dim())?;
    let eig = y.eigen()?;
    let sqrt = eig.map(libm::sqrt);
    let inv_sqrt = eig.map(|l| 1.0 / libm::sqrt(l));
    let inner = SymMatrix::from_symmetrized(&(inv_sqrt.as_matrix() * delta.as_matrix() * inv_sqrt.as_matrix()));
    let expd = mat_fn(&inner, MatFn::Exp)?;
    let out = SymMatrix::from_symmetrized(&(sqrt.as_matrix() * expd.as_matrix() * sqrt.as_matrix()));
    if out.as_matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("exponential map overflowed".into()));
    }
    SpdMatrix::from_sym(out)
}

/// Converts a Euclidean gradient into the Riemannian gradient `C E C`.
pub fn riemannian_grad(c: &SpdMatrix, euclid_grad: &SymMatrix) -> Result<SymMatrix> {
    same_dim(c.dim(), euclid_grad.dim())?;
    let m = c.as_matrix();
    Ok(SymMatrix::from_symmetrized(&(m * euclid_grad.as_matrix() * m)))
}

/// Clamps every eigenvalue of `c` from below at `floor`.
pub fn project_eigen_floor(c: &SpdMatrix, floor: f64) -> Result<SpdMatrix> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(domain(format!("eigenvalue floor must be positive, got {floor}")));
    }
    let eig = c.eigen()?;
    if eig.values[0] >= floor {
        return Ok(c.clone());
    }
    SpdMatrix::from_sym(eig.map(|l| l.max(floor)))
}

//! Dense complex linear algebra over a fixed orthonormal basis.
//!
//! Everything here is immutable once built. Units have ħ = 1, so the
//! propagator generated by an operator `A` over a time `t` is `exp(-i A t)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{check_dim, contract, Error, Result};

pub type C64 = Complex64;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const IDEMPOTENT_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-10;

const I: C64 = C64::new(0.0, 1.0);

/// Amplitudes of a state in the working basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(contract("state vector must have dim >= 1"));
        }
        Ok(Self { amps: DVector::from_vec(amps) })
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_dvector(amps: DVector<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(contract("state vector must have dim >= 1"));
        }
        Ok(Self { amps })
    }

    /// The `k`-th basis state of a `dim`-dimensional space.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(contract(format!("basis index {k} out of range for dim {dim}")));
        }
        let mut amps = DVector::zeros(dim);
        amps[k] = C64::new(1.0, 0.0);
        Ok(Self { amps })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_dvector(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn into_inner(self) -> DVector<C64> {
        self.amps
    }

    pub fn get(&self, k: usize) -> C64 {
        self.amps[k]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() < NORM_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numeric("cannot normalize a null or non-finite vector".into()));
        }
        Ok(Self { amps: &self.amps / C64::new(n, 0.0) })
    }

    /// `<self|other>`, antilinear in `self`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { amps: &self.amps * c }
    }

    pub fn add(&self, other: &StateVector) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { amps: &self.amps + &other.amps })
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }
}

/// A square matrix acting on states, optionally asserted Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<C64>,
    hermitian: bool,
}

impl Operator {
    /// A general (not necessarily Hermitian) operator.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(contract("operator matrix must be square and non-empty"));
        }
        Ok(Self { matrix, hermitian: false })
    }

    /// An operator asserted Hermitian; rejected if `max|A - A†| >= 1e-12`.
    pub fn hermitian(matrix: DMatrix<C64>) -> Result<Self> {
        let mut op = Self::new(matrix)?;
        let dev = hermitian_deviation(&op.matrix);
        if dev >= HERMITIAN_TOL {
            return Err(contract(format!("operator is not Hermitian (deviation {dev:e})")));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn from_real_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: rows.len() });
        }
        let m = DMatrix::from_row_iterator(dim, dim, rows.iter().map(|&x| C64::new(x, 0.0)));
        Self::hermitian(m.clone()).or_else(|_| Self::new(m))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::hermitian(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::hermitian(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(entries.len(), entries.iter().map(|&x| C64::new(x, 0.0)));
        Self::hermitian(DMatrix::from_diagonal(&d))
    }

    pub fn sigma_x() -> Self {
        Self::from_real_rows(2, &[0.0, 1.0, 1.0, 0.0]).expect("static matrix")
    }

    pub fn sigma_z() -> Self {
        Self::diagonal(&[1.0, -1.0]).expect("static matrix")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { matrix: &self.matrix * C64::new(c, 0.0), hermitian: self.hermitian }
    }

    pub fn plus(&self, other: &Operator) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        let matrix = &self.matrix + &other.matrix;
        Ok(Self { matrix, hermitian: self.hermitian && other.hermitian })
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), v.dim())?;
        Ok(StateVector { amps: &self.matrix * &v.amps })
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Eigendecomposition of a Hermitian operator.
    pub fn spectrum(&self) -> Result<HermitianSpectrum> {
        if !self.hermitian {
            return Err(contract("spectral decomposition requires a Hermitian operator"));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("operator has non-finite entries".into()));
        }
        Ok(HermitianSpectrum::new(&self.matrix))
    }
}

/// An orthogonal projector `Π = Π† = Π²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: DMatrix<C64>,
}

impl Projector {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(contract("projector matrix must be square and non-empty"));
        }
        let herm = hermitian_deviation(&matrix);
        if herm >= HERMITIAN_TOL {
            return Err(contract(format!("projector is not Hermitian (deviation {herm:e})")));
        }
        let sq = &matrix * &matrix;
        let idem = max_abs(&(sq - &matrix));
        if idem >= IDEMPOTENT_TOL {
            return Err(contract(format!("projector is not idempotent (deviation {idem:e})")));
        }
        Ok(Self { matrix })
    }

    /// Projector onto the span of the orthonormal columns of `basis`.
    pub fn from_orthonormal_columns(basis: &DMatrix<C64>) -> Result<Self> {
        Self::new(basis * basis.adjoint())
    }

    /// Diagonal projector selecting the basis states where `mask` is true.
    pub fn diagonal(mask: &[bool]) -> Result<Self> {
        let d = DVector::from_iterator(
            mask.len(),
            mask.iter().map(|&b| if b { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }),
        );
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn complement(&self) -> Self {
        let n = self.dim();
        Self { matrix: DMatrix::identity(n, n) - &self.matrix }
    }

    pub fn rank(&self) -> usize {
        self.matrix.trace().re.round() as usize
    }
}

/// `Πv`.
pub fn project(p: &Projector, v: &StateVector) -> Result<StateVector> {
    check_dim(p.dim(), v.dim())?;
    Ok(StateVector { amps: &p.matrix * &v.amps })
}

/// Cached eigendecomposition `A = V diag(λ) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

impl HermitianSpectrum {
    fn new(matrix: &DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(matrix.clone());
        Self { values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn coefficients(&self, v: &StateVector) -> Result<DVector<C64>> {
        check_dim(self.dim(), v.dim())?;
        Ok(self.vectors.adjoint() * &v.amps)
    }

    /// `exp(-iAt) v` given the eigenbasis coordinates of `v`.
    pub fn propagate_coefficients(&self, coeffs: &DVector<C64>, t: f64) -> StateVector {
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(self.values.iter()).map(|(c, &l)| c * (-I * l * t).exp()),
        );
        StateVector { amps: &self.vectors * phased }
    }

    pub fn propagate(&self, v: &StateVector, t: f64) -> Result<StateVector> {
        let c = self.coefficients(v)?;
        Ok(self.propagate_coefficients(&c, t))
    }

    /// Dense `exp(-iAt)`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let ph = (-I * l * t).exp();
            for x in scaled.column_mut(j).iter_mut() {
                *x *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// `exp(M)` for a general square matrix, by scaling and squaring of a Taylor series.
pub fn expm(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if !m.is_square() {
        return Err(contract("expm requires a square matrix"));
    }
    if m.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
        return Err(Error::Numeric("expm of a matrix with non-finite entries".into()));
    }
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().map(|a| a.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m * C64::new(0.5f64.powi(squarings), 0.0);

    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled * C64::new(1.0 / k as f64, 0.0);
        result += &term;
        if max_abs(&term) < 1e-18 * max_abs(&result).max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// `exp(-iAt) v`, by eigendecomposition when `A` is flagged Hermitian and by
/// scaling and squaring otherwise.
pub fn matrix_exponential_apply(a: &Operator, t: f64, v: &StateVector) -> Result<StateVector> {
    check_dim(a.dim(), v.dim())?;
    if !t.is_finite() || !a.is_finite() || !v.is_finite() {
        return Err(Error::Numeric("non-finite input to matrix exponential".into()));
    }
    if a.hermitian {
        a.spectrum()?.propagate(v, t)
    } else {
        let u = expm(&(a.matrix() * (-I * t)))?;
        Ok(StateVector { amps: u * &v.amps })
    }
}

/// Kronecker product with the index of pair `(i, j)` at `i * dim_b + j`.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Self;
}

impl Tensor for StateVector {
    fn tensor(&self, other: &Self) -> Self {
        Self { amps: self.amps.kronecker(&other.amps) }
    }
}

impl Tensor for Operator {
    fn tensor(&self, other: &Self) -> Self {
        Self {
            matrix: self.matrix.kronecker(&other.matrix),
            hermitian: self.hermitian && other.hermitian,
        }
    }
}

impl Tensor for Projector {
    fn tensor(&self, other: &Self) -> Self {
        Self { matrix: self.matrix.kronecker(&other.matrix) }
    }
}

pub fn tensor<T: Tensor>(a: &T, b: &T) -> T {
    a.tensor(b)
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|a| a.norm()).fold(0.0, f64::max)
}

pub(crate) fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    max_abs(&(m - m.adjoint()))
}

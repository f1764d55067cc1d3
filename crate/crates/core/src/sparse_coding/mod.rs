//! Nonnegative sparse coding of load profiles.
//!
//! A batch `y` of `t` readings is approximated as `B a`, where the dictionary
//! `B` is a `t x n` nonnegative matrix with unit-norm columns and the
//! activation `a` is a nonnegative, mostly-zero vector of length `n`. The fit
//! minimizes `||y - B a||_2^2 + lambda * ||a||_1`.

mod io;
pub(crate) mod solver;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;
use thiserror::Error;

pub use solver::{infer_activation, infer_activation_from, kkt_residual, SolverStats};
pub use train::{
    init_dictionary, random_dictionary, renormalize_columns, train_dictionary, InitMode,
    TrainingConfig, TrainingOutcome,
};

/// Entries at or below this magnitude count as zero in [`sparsity`].
pub const ZERO_TOL: f64 = 1e-10;

/// Slack allowed on unit column norms after floating-point rescaling.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SparseCodingError {
    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dictionary column {0} is zero")]
    ZeroColumn(usize),
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("invalid activation: {0}")]
    InvalidActivation(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged at outer iteration {iteration}: non-finite {what}")]
    Diverged {
        iteration: usize,
        what: &'static str,
    },
    #[error("dictionary file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SparseCodingError> = std::result::Result<T, E>;

/// `t x n` nonnegative basis with columns of Euclidean norm in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    basis: Array2<f64>,
}

impl Dictionary {
    pub fn new(basis: Array2<f64>) -> Result<Self> {
        let (t, n) = basis.dim();
        if t == 0 || n == 0 {
            return Err(SparseCodingError::InvalidDictionary(format!(
                "shape {t}x{n} has no entries"
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(SparseCodingError::NonFinite("dictionary"));
        }
        if basis.iter().any(|&v| v < 0.0) {
            return Err(SparseCodingError::InvalidDictionary(
                "entries must be non-negative".into(),
            ));
        }
        for (j, col) in basis.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm == 0.0 {
                return Err(SparseCodingError::ZeroColumn(j));
            }
            if norm > 1.0 + NORM_SLACK {
                return Err(SparseCodingError::InvalidDictionary(format!(
                    "column {j} has norm {norm} > 1"
                )));
            }
        }
        Ok(Self { basis })
    }

    /// Builds a dictionary after scaling every column to unit norm.
    pub fn normalized(mut basis: Array2<f64>) -> Result<Self> {
        for (j, mut col) in basis.columns_mut().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if !norm.is_finite() {
                return Err(SparseCodingError::NonFinite("dictionary"));
            }
            if norm == 0.0 {
                return Err(SparseCodingError::ZeroColumn(j));
            }
            col.mapv_inplace(|v| v / norm);
        }
        Self::new(basis)
    }

    /// Rows: time slots.
    pub fn t(&self) -> usize {
        self.basis.nrows()
    }

    /// Columns: basis functions.
    pub fn n(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.basis.column(j)
    }

    pub fn is_overcomplete(&self) -> bool {
        self.n() > self.t()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.basis
    }

    /// `B a`, with rounding-level negatives in `[-1e-9, 0)` clamped to zero.
    pub fn reconstruct(&self, a: &Activation) -> Result<Array1<f64>> {
        if a.len() != self.n() {
            return Err(SparseCodingError::DimensionMismatch {
                what: "activation length vs dictionary columns",
                expected: self.n(),
                found: a.len(),
            });
        }
        Ok(self.basis.dot(&a.coeffs).mapv(|v| {
            if (-1e-9..0.0).contains(&v) {
                0.0
            } else {
                v
            }
        }))
    }

    pub(crate) fn check_signal(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.t() {
            return Err(SparseCodingError::DimensionMismatch {
                what: "batch length vs dictionary rows",
                expected: self.t(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SparseCodingError::NonFinite("batch values"));
        }
        Ok(())
    }
}

/// Nonnegative coefficient vector over the dictionary columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Activation {
    coeffs: Array1<f64>,
}

impl Activation {
    pub fn new(coeffs: Array1<f64>) -> Result<Self> {
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(SparseCodingError::NonFinite("activation"));
        }
        if coeffs.iter().any(|&v| v < 0.0) {
            return Err(SparseCodingError::InvalidActivation(
                "coefficients must be non-negative".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: Array1::zeros(n),
        }
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(coeffs))
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coeffs
            .as_slice()
            .expect("activation storage is contiguous")
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.coeffs
    }
}

/// How the sparsity weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Lambda {
    Fixed(f64),
    /// Multiple of `max_i |(B^T y)_i|`.
    Relative(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Relative(0.01)
    }
}

impl Lambda {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            Lambda::Fixed(v) | Lambda::Relative(v) => *v,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(SparseCodingError::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {v}"
            )));
        }
        Ok(())
    }

    /// Absolute weight given `max_i |(B^T y)_i|`.
    pub fn resolve(&self, max_correlation: f64) -> f64 {
        match *self {
            Lambda::Fixed(v) => v,
            Lambda::Relative(k) => k * max_correlation,
        }
    }

    /// Absolute weight for a single batch against `dict`.
    pub fn resolve_for(&self, y: &[f64], dict: &Dictionary) -> Result<f64> {
        self.validate()?;
        match self {
            Lambda::Fixed(v) => Ok(*v),
            Lambda::Relative(_) => {
                dict.check_signal(y)?;
                Ok(self.resolve(max_correlation(dict, y)))
            }
        }
    }
}

/// `max_i |(B^T y)_i|`.
pub fn max_correlation(dict: &Dictionary, y: &[f64]) -> f64 {
    dict.basis()
        .t()
        .dot(&ArrayView1::from(y))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `||y - B a||_2^2 + lambda * ||a||_1`.
pub fn objective(y: &[f64], dict: &Dictionary, a: &Activation, lambda: f64) -> Result<f64> {
    dict.check_signal(y)?;
    let residual = residual_norm(y, dict, a)?;
    Ok(residual * residual + lambda * a.l1_norm())
}

/// `||y - B a||_2`.
pub fn residual_norm(y: &[f64], dict: &Dictionary, a: &Activation) -> Result<f64> {
    dict.check_signal(y)?;
    if a.len() != dict.n() {
        return Err(SparseCodingError::DimensionMismatch {
            what: "activation length vs dictionary columns",
            expected: dict.n(),
            found: a.len(),
        });
    }
    let fit = dict.basis().dot(a.coeffs());
    Ok(y.iter()
        .zip(fit.iter())
        .map(|(yv, fv)| (yv - fv) * (yv - fv))
        .sum::<f64>()
        .sqrt())
}

/// Fraction of entries with magnitude at most [`ZERO_TOL`]. An empty vector
/// has no nonzero entries and reports 1.
pub fn sparsity(a: &Activation) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let zeros = a.coeffs().iter().filter(|v| v.abs() <= ZERO_TOL).count();
    zeros as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn eye(n: usize) -> Dictionary {
        Dictionary::new(Array2::eye(n)).unwrap()
    }

    #[test]
    fn objective_zero_activation_is_signal_energy() {
        let y = [1.0, 2.0, 2.0];
        let v = objective(&y, &eye(3), &Activation::zeros(3), 0.7).unwrap();
        assert_eq!(v, 9.0);
    }

    #[test]
    fn objective_exact_fit_is_zero() {
        let a = Activation::from_vec(vec![3.0, 1.0, 4.0]).unwrap();
        assert_eq!(objective(&[3.0, 1.0, 4.0], &eye(3), &a, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn objective_hand_example() {
        let a = Activation::from_vec(vec![1.0, 1.0]).unwrap();
        let v = objective(&[1.0, 2.0], &eye(2), &a, 0.5).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let a = Activation::zeros(2);
        assert!(matches!(
            objective(&[1.0, 2.0, 3.0], &eye(2), &a, 0.0),
            Err(SparseCodingError::DimensionMismatch { .. })
        ));
        assert!(objective(&[1.0, 2.0], &eye(2), &Activation::zeros(3), 0.0).is_err());
    }

    #[test]
    fn sparsity_counts_zeros() {
        assert_eq!(sparsity(&Activation::zeros(4)), 1.0);
        let a = Activation::from_vec(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sparsity(&a), 0.75);
        let a = Activation::from_vec(vec![1e-11, 2e-10, 0.0, 5.0]).unwrap();
        assert_eq!(sparsity(&a), 0.5);
    }

    #[test]
    fn dictionary_invariants() {
        assert!(Dictionary::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(Dictionary::new(array![[2.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(Dictionary::new(array![[-0.1, 0.0], [1.0, 1.0]]).is_err());
        assert!(Dictionary::new(array![[f64::NAN, 0.0], [1.0, 1.0]]).is_err());
        assert!(Dictionary::new(array![[0.5, 0.0], [0.5, 1.0]]).is_ok());
        let d = Dictionary::normalized(array![[3.0, 0.0], [4.0, 2.0]]).unwrap();
        assert!((d.column(0)[0] - 0.6).abs() < 1e-15);
        assert_eq!(d.column(1)[1], 1.0);
    }

    #[test]
    fn activation_rejects_negative() {
        assert!(Activation::from_vec(vec![1.0, -1e-3]).is_err());
        assert!(Activation::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn lambda_resolution() {
        let d = Dictionary::normalized(array![[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let y = [3.0, 4.0];
        // B^T y = (3, 7/sqrt 2)
        let expect = 0.01 * 7.0 / 2f64.sqrt();
        let got = Lambda::default().resolve_for(&y, &d).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert_eq!(Lambda::Fixed(0.3).resolve_for(&y, &d).unwrap(), 0.3);
        assert!(Lambda::Fixed(-1.0).validate().is_err());
    }
}

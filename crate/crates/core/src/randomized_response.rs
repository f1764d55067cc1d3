//! Randomized response over activation vectors, plus privacy accounting.
//!
//! Each coordinate of an activation is kept with probability `1 - f` and
//! otherwise replaced by an entry drawn uniformly from all `n` coordinates
//! (itself included). Two budgets are reported for this mechanism: the
//! closed-form figure `ln((1 - f) / (delta0 * f))` and the tight per-coordinate
//! bound read off the mechanism's transition matrix.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sparse_coding::Activation;

/// Lower clamp applied when a measured sparsity stands in for `delta0`.
pub const MIN_DELTA0: f64 = 1e-3;

/// Row sums of a transition matrix must be within this of one.
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),
    #[error("privacy budget is unbounded: {0}")]
    Unbounded(String),
    #[error("candidate value {0} appears more than once")]
    DuplicateValue(f64),
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

pub type Result<T, E = PrivacyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyParams {
    f: f64,
    delta0: Option<f64>,
    seed: u64,
}

impl PrivacyParams {
    /// `0 < f < 1`; `delta0`, when given, must lie in `(0, 1]`. Without it
    /// the measured sparsity of each activation is used.
    pub fn new(f: f64, delta0: Option<f64>, seed: u64) -> Result<Self> {
        if !(f > 0.0 && f < 1.0) {
            return Err(PrivacyError::InvalidParams(format!(
                "f must lie in (0, 1), got {f}"
            )));
        }
        if let Some(d) = delta0 {
            check_delta0(d)?;
        }
        Ok(Self { f, delta0, seed })
    }

    /// `f = 0`: activations pass through unchanged. Offers no privacy and is
    /// meant for testing the rest of the pipeline.
    pub fn identity(seed: u64) -> Self {
        Self {
            f: 0.0,
            delta0: None,
            seed,
        }
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn delta0(&self) -> Option<f64> {
        self.delta0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_identity(&self) -> bool {
        self.f == 0.0
    }

    /// `delta0` if set, else the clamped measured sparsity.
    pub fn delta0_for(&self, measured_sparsity: f64) -> f64 {
        self.delta0
            .unwrap_or_else(|| delta0_from_sparsity(measured_sparsity))
    }
}

fn check_delta0(d: f64) -> Result<()> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(PrivacyError::InvalidParams(format!(
            "delta0 must lie in (0, 1], got {d}"
        )));
    }
    Ok(())
}

/// Measured zero-fraction clamped into `[MIN_DELTA0, 1]`.
pub fn delta0_from_sparsity(sparsity: f64) -> f64 {
    sparsity.clamp(MIN_DELTA0, 1.0)
}

/// Independent generator for batch `index` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_f(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(PrivacyError::InvalidParams(format!(
            "f must lie in [0, 1], got {f}"
        )));
    }
    Ok(())
}

/// Applies randomized response to every coordinate of `a`. The replacement
/// draws read the unperturbed input, so the output is a selection with
/// repetition of input values.
pub fn perturb_activation<R: Rng + ?Sized>(a: &Activation, f: f64, rng: &mut R) -> Result<Activation> {
    check_f(f)?;
    if a.is_empty() {
        return Err(PrivacyError::Empty("activation"));
    }
    let values = a.as_slice();
    let n = values.len();
    let out: Vec<f64> = values
        .iter()
        .map(|&keep| {
            if rng.random_bool(f) {
                values[rng.random_range(0..n)]
            } else {
                keep
            }
        })
        .collect();
    Ok(Activation::from_vec(out).expect("entries are copied from a valid activation"))
}

/// `probs[[r, c]] = P(output = values[c] | input = values[r])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    candidate_values: Vec<f64>,
    probs: Array2<f64>,
}

impl TransitionMatrix {
    pub fn new(candidate_values: Vec<f64>, probs: Array2<f64>) -> Result<Self> {
        let i = candidate_values.len();
        if i == 0 {
            return Err(PrivacyError::Empty("candidate values"));
        }
        check_distinct(&candidate_values)?;
        if probs.dim() != (i, i) {
            return Err(PrivacyError::InvalidParams(format!(
                "expected a {i}x{i} matrix, got {:?}",
                probs.dim()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(PrivacyError::InvalidParams(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        for (r, row) in probs.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(PrivacyError::InvalidParams(format!(
                    "row {r} sums to {s}"
                )));
            }
        }
        Ok(Self {
            candidate_values,
            probs,
        })
    }

    pub fn candidate_values(&self) -> &[f64] {
        &self.candidate_values
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn size(&self) -> usize {
        self.candidate_values.len()
    }
}

fn check_distinct(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(PrivacyError::InvalidParams(format!(
            "candidate value {v} is not a number"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    match sorted.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(PrivacyError::DuplicateValue(w[0])),
        None => Ok(()),
    }
}

/// Transition matrix of the mechanism over `values` treated as the whole
/// candidate set: `f / i` off the diagonal, `1 - f + f / i` on it.
pub fn build_transition_matrix(values: &[f64], f: f64) -> Result<TransitionMatrix> {
    check_f(f)?;
    let i = values.len();
    if i == 0 {
        return Err(PrivacyError::Empty("candidate values"));
    }
    check_distinct(values)?;
    let off = f / i as f64;
    let probs = Array2::from_shape_fn((i, i), |(r, c)| if r == c { off + (1.0 - f) } else { off });
    TransitionMatrix::new(values.to_vec(), probs)
}

/// Tightest `epsilon` such that every column ratio `probs[r1][c] / probs[r2][c]`
/// is at most `exp(epsilon)`.
pub fn epsilon_empirical(tm: &TransitionMatrix) -> Result<f64> {
    let mut eps = 0.0f64;
    for (c, column) in tm.probs.columns().into_iter().enumerate() {
        let hi = column.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(p));
        let lo = column.iter().fold(f64::INFINITY, |m, &p| m.min(p));
        if hi == 0.0 {
            continue;
        }
        if lo == 0.0 {
            return Err(PrivacyError::Unbounded(format!(
                "output {} is impossible from some inputs and possible from others",
                tm.candidate_values[c]
            )));
        }
        eps = eps.max((hi / lo).ln());
    }
    Ok(eps)
}

/// Tight budget of the mechanism on an activation of length `n`, from its
/// transition matrix over `n` distinct labels.
pub fn mechanism_epsilon(n: usize, f: f64) -> Result<f64> {
    let labels: Vec<f64> = (0..n).map(|k| k as f64).collect();
    epsilon_empirical(&build_transition_matrix(&labels, f)?)
}

/// Closed-form budget from the flip probability and the zero fraction
/// `delta0` of the activation: `ln((1 - f) / (delta0 * f))`. Unlike
/// [`mechanism_epsilon`] it is not a tight bound on the mechanism itself.
pub fn sparsity_epsilon(f: f64, delta0: f64) -> Result<f64> {
    if f == 0.0 {
        return Err(PrivacyError::Unbounded(
            "f = 0 reports every value unchanged".into(),
        ));
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(PrivacyError::InvalidParams(format!(
            "f must lie in (0, 1), got {f}"
        )));
    }
    check_delta0(delta0)?;
    let ratio = (1.0 - f) / (delta0 * f);
    if ratio < 1.0 {
        return Err(PrivacyError::InvalidParams(format!(
            "(1 - f) / (delta0 * f) = {ratio} < 1 gives a negative epsilon (f = {f}, delta0 = {delta0})"
        )));
    }
    Ok(ratio.ln())
}

/// Basic one-bit randomized response: 1 with probability `f / 2`, 0 with
/// probability `f / 2`, otherwise `x`.
///
/// Panics if `f` is outside `[0, 1]`.
pub fn rappor_bit<R: Rng + ?Sized>(x: bool, f: f64, rng: &mut R) -> bool {
    assert!((0.0..=1.0).contains(&f), "f must lie in [0, 1], got {f}");
    let u: f64 = rng.random();
    if u < f / 2.0 {
        true
    } else if u < f {
        false
    } else {
        x
    }
}

/// Budget of mechanisms run on disjoint datasets: the largest one.
pub fn compose_parallel(epsilons: &[f64]) -> Result<f64> {
    if epsilons.is_empty() {
        return Err(PrivacyError::Empty("epsilon sequence"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0)) {
        return Err(PrivacyError::InvalidParams(format!(
            "epsilon {e} is not a non-negative number"
        )));
    }
    Ok(epsilons.iter().copied().fold(0.0, f64::max))
}

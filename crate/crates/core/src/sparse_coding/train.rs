//! Alternating dictionary training.
//!
//! Each outer iteration takes projected-gradient steps on `B` with the
//! activations fixed (nonnegativity and `||b_j|| <= 1` enforced by
//! projection, every step accepted only if the reconstruction error does not
//! grow), rescales the columns back to unit norm while scaling the matching
//! activation rows down by the same factor, and then re-solves every
//! activation warm-started from the previous one. None of the three stages
//! can increase the summed objective.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::solver::SparseCoder;
use super::{objective, residual_norm, Activation, Dictionary, Lambda, Result, SparseCodingError};

/// Redraws allowed for an all-zero data window before falling back to a
/// random column.
const SEGMENT_REDRAWS: usize = 32;
const POWER_ITERATIONS: usize = 30;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Random windows cut from the concatenated training readings.
    DataSegments,
    /// I.i.d. uniform entries in `[0, 1)`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingConfig {
    pub n: usize,
    pub lambda: Lambda,
    pub max_outer_iters: usize,
    /// Stop once the summed objective drops by less than this fraction.
    pub tol: f64,
    /// Reconstruction bound checked after training; violations are reported,
    /// not enforced.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub init_mode: InitMode,
    /// Projected-gradient steps on the dictionary per outer iteration.
    pub dictionary_steps: usize,
}

impl TrainingConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            lambda: Lambda::default(),
            max_outer_iters: 500,
            tol: 1e-6,
            sigma: None,
            seed: 0,
            init_mode: InitMode::DataSegments,
            dictionary_steps: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        if self.n == 0 {
            return Err(SparseCodingError::InvalidConfig("n must be positive".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(SparseCodingError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(SparseCodingError::InvalidConfig(format!(
                    "sigma must be finite and >= 0, got {s}"
                )));
            }
        }
        if self.dictionary_steps == 0 {
            return Err(SparseCodingError::InvalidConfig(
                "dictionary_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub dictionary: Dictionary,
    /// Final activation of every training batch against `dictionary`.
    pub activations: Vec<Activation>,
    /// Absolute sparsity weight used throughout.
    pub lambda: f64,
    /// Summed objective before the first outer iteration and after each one.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Indices of training batches whose residual exceeds `sigma`.
    pub sigma_violations: Vec<usize>,
}

impl TrainingOutcome {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history holds the initial objective")
    }
}

fn uniform_length<S: AsRef<[f64]>>(batches: &[S]) -> Result<usize> {
    let t = batches
        .first()
        .ok_or(SparseCodingError::EmptyTrainingSet)?
        .as_ref()
        .len();
    for b in batches {
        let b = b.as_ref();
        if b.len() != t {
            return Err(SparseCodingError::DimensionMismatch {
                what: "training batch length",
                expected: t,
                found: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SparseCodingError::NonFinite("training batch"));
        }
    }
    if t == 0 {
        return Err(SparseCodingError::EmptyTrainingSet);
    }
    Ok(t)
}

fn random_column(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    loop {
        let col: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        if col.iter().any(|&v| v > 0.0) {
            return col;
        }
    }
}

/// Unit-column `t x n` dictionary with i.i.d. uniform entries.
pub fn random_dictionary(t: usize, n: usize, seed: u64) -> Result<Dictionary> {
    if t == 0 || n == 0 {
        return Err(SparseCodingError::InvalidConfig(format!(
            "dictionary shape {t}x{n} is empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Array2::zeros((t, n));
    for j in 0..n {
        let col = random_column(&mut rng, t);
        basis.column_mut(j).assign(&Array1::from(col));
    }
    Dictionary::normalized(basis)
}

/// Starting dictionary for [`train_dictionary`].
///
/// In `DataSegments` mode column `j` is the window of `t` consecutive
/// readings starting at the `j`-th offset drawn uniformly from the
/// concatenated training series (wrapping around its end), scaled to unit
/// norm. All-zero windows are redrawn.
pub fn init_dictionary<S: AsRef<[f64]>>(batches: &[S], config: &TrainingConfig) -> Result<Dictionary> {
    config.validate()?;
    let t = uniform_length(batches)?;
    match config.init_mode {
        InitMode::Random => random_dictionary(t, config.n, config.seed),
        InitMode::DataSegments => {
            let series: Vec<f64> = batches.iter().flat_map(|b| b.as_ref().iter().copied()).collect();
            let total = series.len();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut basis = Array2::zeros((t, config.n));
            for j in 0..config.n {
                let mut column = None;
                for _ in 0..SEGMENT_REDRAWS {
                    let start = rng.random_range(0..total);
                    let window: Vec<f64> = (0..t).map(|k| series[(start + k) % total]).collect();
                    if window.iter().any(|&v| v > 0.0) {
                        column = Some(window);
                        break;
                    }
                }
                let column = column.unwrap_or_else(|| random_column(&mut rng, t));
                basis.column_mut(j).assign(&Array1::from(column));
            }
            Dictionary::normalized(basis)
        }
    }
}

/// Scales column `j` of `basis` to unit norm and multiplies row `j` of
/// `activations` (`n x m`, one column per batch) by the old norm, leaving
/// `basis * activations` unchanged. Zero columns are replaced by
/// `fallback` columns with their activation rows zeroed.
pub fn renormalize_columns(
    basis: &mut Array2<f64>,
    activations: &mut Array2<f64>,
    fallback: &Array2<f64>,
) {
    for j in 0..basis.ncols() {
        let norm = basis.column(j).dot(&basis.column(j)).sqrt();
        if norm > 0.0 {
            basis.column_mut(j).mapv_inplace(|v| v / norm);
            activations.row_mut(j).mapv_inplace(|v| v * norm);
        } else {
            basis.column_mut(j).assign(&fallback.column(j));
            activations.row_mut(j).fill(0.0);
        }
    }
}

fn reconstruction_error(y: &Array2<f64>, basis: &Array2<f64>, acts: &Array2<f64>) -> f64 {
    let fit = basis.dot(acts);
    y.iter()
        .zip(fit.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Clamp to the nonnegative orthant, then shrink columns longer than 1.
fn project(basis: &mut Array2<f64>) {
    basis.mapv_inplace(|v| v.max(0.0));
    for mut col in basis.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 1.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

fn spectral_norm_estimate(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        v = w / norm;
    }
    estimate
}

/// Projected-gradient descent on `||Y - B A||_F^2` over `B` with `A` fixed.
fn update_dictionary(y: &Array2<f64>, basis: &mut Array2<f64>, acts: &Array2<f64>, steps: usize) {
    let gram = acts.dot(&acts.t());
    let target = y.dot(&acts.t());
    let lipschitz = 2.0 * spectral_norm_estimate(&gram);
    if !(lipschitz > 0.0) {
        return;
    }
    let mut current = reconstruction_error(y, basis, acts);
    let mut step = 1.0 / lipschitz;
    for _ in 0..steps {
        let grad = (basis.dot(&gram) - &target) * 2.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate = &*basis - &(&grad * step);
            project(&mut candidate);
            let err = reconstruction_error(y, &candidate, acts);
            if err <= current {
                *basis = candidate;
                current = err;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// Learns a nonnegative unit-column dictionary by alternating minimization.
pub fn train_dictionary<S>(batches: &[S], config: &TrainingConfig) -> Result<TrainingOutcome>
where
    S: AsRef<[f64]> + Sync,
{
    config.validate()?;
    let t = uniform_length(batches)?;
    if config.n <= t {
        return Err(SparseCodingError::InvalidConfig(format!(
            "training needs an over-complete dictionary: n = {} must exceed t = {t}",
            config.n
        )));
    }
    let m = batches.len();
    let mut y = Array2::zeros((t, m));
    for (k, b) in batches.iter().enumerate() {
        y.column_mut(k).assign(&Array1::from(b.as_ref().to_vec()));
    }

    let mut dictionary = init_dictionary(batches, config)?;
    let lambda = match config.lambda {
        Lambda::Fixed(v) => v,
        Lambda::Relative(_) => {
            let corr = dictionary.basis().t().dot(&y);
            config.lambda.resolve(corr.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        }
    };

    let mut activations: Vec<Activation> = {
        let coder = SparseCoder::new(&dictionary);
        batches
            .par_iter()
            .map(|b| coder.infer(b.as_ref(), lambda).map(|(a, _)| a))
            .collect::<Result<_>>()?
    };
    let mut objectives = per_batch_objectives(batches, &dictionary, &activations, lambda)?;
    let mut history = vec![objectives.iter().sum::<f64>()];
    if !history[0].is_finite() {
        return Err(SparseCodingError::Diverged {
            iteration: 0,
            what: "objective",
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_outer_iters {
        iterations += 1;

        // Dictionary step.
        let mut acts = Array2::zeros((config.n, m));
        for (k, a) in activations.iter().enumerate() {
            acts.column_mut(k).assign(a.coeffs());
        }
        let previous = dictionary.basis().clone();
        let mut basis = previous.clone();
        update_dictionary(&y, &mut basis, &acts, config.dictionary_steps);
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(SparseCodingError::Diverged {
                iteration: iterations,
                what: "dictionary",
            });
        }
        renormalize_columns(&mut basis, &mut acts, &previous);
        dictionary = Dictionary::new(basis)?;
        let rescaled: Vec<Activation> = acts
            .axis_iter(Axis(1))
            .map(|col| Activation::new(col.mapv(|v| v.max(0.0))))
            .collect::<Result<_>>()?;

        // Activation step, keeping the previous activation whenever the
        // fresh solve is not at least as good.
        let coder = SparseCoder::new(&dictionary);
        let solved: Vec<(Activation, f64)> = batches
            .par_iter()
            .zip(rescaled.into_par_iter())
            .map(|(b, warm)| -> Result<(Activation, f64)> {
                let y = b.as_ref();
                let f_warm = objective(y, &dictionary, &warm, lambda)?;
                let (a, _) = coder.infer_from(y, lambda, &warm)?;
                let f_new = objective(y, &dictionary, &a, lambda)?;
                Ok(if f_new <= f_warm { (a, f_new) } else { (warm, f_warm) })
            })
            .collect::<Result<_>>()?;
        let (acts_next, objs): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        activations = acts_next;
        objectives = objs;

        let total: f64 = objectives.iter().sum();
        if !total.is_finite() {
            return Err(SparseCodingError::Diverged {
                iteration: iterations,
                what: "objective",
            });
        }
        let prev = *history.last().expect("history is never empty");
        history.push(total);
        let decrease = (prev - total) / prev.abs().max(f64::MIN_POSITIVE);
        if decrease < config.tol {
            converged = true;
            break;
        }
    }

    let sigma_violations = match config.sigma {
        Some(sigma) => batches
            .iter()
            .zip(&activations)
            .enumerate()
            .filter_map(|(k, (b, a))| match residual_norm(b.as_ref(), &dictionary, a) {
                Ok(r) if r > sigma => Some(Ok(k)),
                Ok(_) => None,
                Err(e) => Some(Err(e)),
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    Ok(TrainingOutcome {
        dictionary,
        activations,
        lambda,
        objective_history: history,
        iterations,
        converged,
        sigma_violations,
    })
}

fn per_batch_objectives<S: AsRef<[f64]>>(
    batches: &[S],
    dict: &Dictionary,
    acts: &[Activation],
    lambda: f64,
) -> Result<Vec<f64>> {
    batches
        .iter()
        .zip(acts)
        .map(|(b, a)| objective(b.as_ref(), dict, a, lambda))
        .collect()
}

//! Per-batch obfuscation: sparse-code the batch against a trained dictionary,
//! perturb the activation, and re-aggregate `Y' = B A'`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::SecondsFormat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meterdata::{MeterDataError, ReadingBatch};
use crate::randomized_response::{
    batch_rng, compose_parallel, sparsity_epsilon, mechanism_epsilon, perturb_activation, PrivacyError,
    PrivacyParams,
};
use crate::sparse_coding::solver::SparseCoder;
use crate::sparse_coding::{residual_norm, sparsity, Activation, Dictionary, Lambda, SparseCodingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dictionary has t={dictionary_t} rows but batch {batch_index} has t={data_t} readings")]
    LengthMismatch {
        batch_index: usize,
        dictionary_t: usize,
        data_t: usize,
    },
    #[error("batch {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    SparseCoding(#[from] SparseCodingError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    MeterData(#[from] MeterDataError),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ObfuscationResult {
    pub batch_index: usize,
    pub original: ReadingBatch,
    pub obfuscated: ReadingBatch,
    pub activation: Activation,
    pub perturbed_activation: Activation,
    pub lambda: f64,
    /// `||Y - B A||_2`
    pub reconstruction_error: f64,
    pub sparsity: f64,
    pub delta0: f64,
    /// `None` when the closed-form budget does not apply (see `warnings`).
    pub epsilon_paper: Option<f64>,
    /// `None` when the mechanism's budget is unbounded (`f = 0`).
    pub epsilon_mechanism: Option<f64>,
    pub warnings: Vec<String>,
}

impl ObfuscationResult {
    /// Mean absolute difference between obfuscated and original readings.
    pub fn mean_abs_distortion(&self) -> f64 {
        let a = self.original.values();
        let b = self.obfuscated.values();
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    pub fn summary(&self) -> BatchSummary {
        BatchSummary {
            batch_index: self.batch_index,
            meter_id: self.original.meter_id().to_string(),
            start_time: self
                .original
                .start_time()
                .to_rfc3339_opts(SecondsFormat::Secs, true),
            t: self.original.len(),
            lambda: self.lambda,
            reconstruction_error: self.reconstruction_error,
            sparsity: self.sparsity,
            delta0: self.delta0,
            epsilon_paper: self.epsilon_paper,
            epsilon_mechanism: self.epsilon_mechanism,
            mean_abs_distortion: self.mean_abs_distortion(),
            warnings: self.warnings.clone(),
        }
    }
}

/// One entry of the JSON sidecar written next to the obfuscated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_index: usize,
    pub meter_id: String,
    pub start_time: String,
    pub t: usize,
    pub lambda: f64,
    pub reconstruction_error: f64,
    pub sparsity: f64,
    pub delta0: f64,
    pub epsilon_paper: Option<f64>,
    pub epsilon_mechanism: Option<f64>,
    pub mean_abs_distortion: f64,
    pub warnings: Vec<String>,
}

pub fn write_sidecar_to<W: Write>(results: &[ObfuscationResult], writer: W) -> Result<()> {
    let summaries: Vec<BatchSummary> = results.iter().map(ObfuscationResult::summary).collect();
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, &summaries)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_sidecar(results: &[ObfuscationResult], path: impl AsRef<Path>) -> Result<()> {
    write_sidecar_to(results, File::create(path)?)
}

pub fn read_sidecar<R: Read>(reader: R) -> Result<Vec<BatchSummary>> {
    Ok(serde_json::from_reader(reader)?)
}

/// Budgets across batches, combined as the maximum.
///
/// Batches of one consumer are not disjoint datasets, so the maximum is only
/// a per-batch statement; longitudinal composition is not accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComposedBudget {
    pub epsilon_paper: Option<f64>,
    pub epsilon_mechanism: Option<f64>,
}

pub fn composed_budget<'a>(summaries: impl IntoIterator<Item = &'a BatchSummary>) -> ComposedBudget {
    let mut closed = Vec::new();
    let mut mech = Vec::new();
    let mut closed_missing = false;
    let mut mech_missing = false;
    for s in summaries {
        match s.epsilon_paper {
            Some(e) => closed.push(e),
            None => closed_missing = true,
        }
        match s.epsilon_mechanism {
            Some(e) => mech.push(e),
            None => mech_missing = true,
        }
    }
    let combine = |v: &[f64], missing: bool| {
        if missing {
            None
        } else {
            compose_parallel(v).ok()
        }
    };
    ComposedBudget {
        epsilon_paper: combine(&closed, closed_missing),
        epsilon_mechanism: combine(&mech, mech_missing),
    }
}

/// `B a`, with rounding-level negatives clamped to zero.
pub fn reaggregate(dict: &Dictionary, a: &Activation) -> Result<Vec<f64>> {
    Ok(dict.reconstruct(a)?.to_vec())
}

/// Shared state for obfuscating many batches against one dictionary.
#[derive(Debug)]
pub struct Obfuscator<'d> {
    dict: &'d Dictionary,
    coder: SparseCoder<'d>,
    params: PrivacyParams,
    lambda: Lambda,
    sigma: Option<f64>,
    epsilon_mechanism: Option<f64>,
}

impl<'d> Obfuscator<'d> {
    pub fn new(dict: &'d Dictionary, params: PrivacyParams, lambda: Lambda) -> Result<Self> {
        lambda.validate()?;
        let epsilon_mechanism = match mechanism_epsilon(dict.n(), params.f()) {
            Ok(e) => Some(e),
            Err(PrivacyError::Unbounded(_)) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            dict,
            coder: SparseCoder::new(dict),
            params,
            lambda,
            sigma: None,
            epsilon_mechanism,
        })
    }

    /// Records a warning on every batch whose residual exceeds `sigma`.
    pub fn with_sigma(mut self, sigma: Option<f64>) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn params(&self) -> &PrivacyParams {
        &self.params
    }

    /// Obfuscates one batch using the random stream reserved for `batch_index`.
    pub fn obfuscate_batch(&self, y: &ReadingBatch, batch_index: usize) -> Result<ObfuscationResult> {
        if y.len() != self.dict.t() {
            return Err(PipelineError::LengthMismatch {
                batch_index,
                dictionary_t: self.dict.t(),
                data_t: y.len(),
            });
        }
        let values = y.values();
        let lambda = self.lambda.resolve_for(values, self.dict)?;
        let (activation, _) = self.coder.infer(values, lambda)?;
        let mut rng = batch_rng(self.params.seed(), batch_index as u64);
        let perturbed = perturb_activation(&activation, self.params.f(), &mut rng)?;
        let obfuscated = y.with_values(reaggregate(self.dict, &perturbed)?)?;
        let reconstruction_error = residual_norm(values, self.dict, &activation)?;

        let mut warnings = Vec::new();
        let measured = sparsity(&activation);
        let delta0 = self.params.delta0_for(measured);
        let epsilon_paper = if self.params.is_identity() {
            warnings.push("f = 0: readings pass through without privacy".to_string());
            None
        } else {
            match sparsity_epsilon(self.params.f(), delta0) {
                Ok(e) => Some(e),
                Err(e) => {
                    warnings.push(format!("epsilon_paper not reported: {e}"));
                    None
                }
            }
        };
        if let Some(sigma) = self.sigma {
            if reconstruction_error > sigma {
                warnings.push(format!(
                    "reconstruction error {reconstruction_error} exceeds sigma {sigma}"
                ));
            }
        }

        Ok(ObfuscationResult {
            batch_index,
            original: y.clone(),
            obfuscated,
            activation,
            perturbed_activation: perturbed,
            lambda,
            reconstruction_error,
            sparsity: measured,
            delta0,
            epsilon_paper,
            epsilon_mechanism: self.epsilon_mechanism,
            warnings,
        })
    }

    /// Obfuscates every batch; results come back in input order whatever the
    /// scheduling.
    pub fn process_stream(&self, batches: &[ReadingBatch]) -> Result<Vec<ObfuscationResult>> {
        batches
            .par_iter()
            .enumerate()
            .map(|(index, b)| {
                self.obfuscate_batch(b, index).map_err(|e| match e {
                    e @ PipelineError::LengthMismatch { .. } => e,
                    e => PipelineError::Batch {
                        index,
                        source: Box::new(e),
                    },
                })
            })
            .collect()
    }
}

pub fn obfuscate_batch(
    y: &ReadingBatch,
    dict: &Dictionary,
    params: PrivacyParams,
    lambda: Lambda,
) -> Result<ObfuscationResult> {
    Obfuscator::new(dict, params, lambda)?.obfuscate_batch(y, 0)
}

pub fn process_stream(
    batches: &[ReadingBatch],
    dict: &Dictionary,
    params: PrivacyParams,
    lambda: Lambda,
) -> Result<Vec<ObfuscationResult>> {
    Obfuscator::new(dict, params, lambda)?.process_stream(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meterdata::synthetic_epoch;
    use crate::sparse_coding::random_dictionary;
    use ndarray::Array2;

    fn batch(values: Vec<f64>) -> ReadingBatch {
        ReadingBatch::new("m", synthetic_epoch(), 900, values).unwrap()
    }

    #[test]
    fn reaggregate_examples() {
        let eye = Dictionary::new(Array2::eye(3)).unwrap();
        assert_eq!(reaggregate(&eye, &Activation::zeros(3)).unwrap(), vec![0.0; 3]);
        let a = Activation::from_vec(vec![3.0, 1.0, 4.0]).unwrap();
        assert_eq!(reaggregate(&eye, &a).unwrap(), vec![3.0, 1.0, 4.0]);

        let d = random_dictionary(3, 5, 8).unwrap();
        let e2 = Activation::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(reaggregate(&d, &e2).unwrap(), d.column(2).to_vec());
        assert!(reaggregate(&d, &Activation::zeros(4)).is_err());
    }

    #[test]
    fn identity_mode_reproduces_fit() {
        let d = random_dictionary(6, 12, 2).unwrap();
        let y = batch(vec![5.0, 1.0, 0.0, 3.0, 2.0, 8.0]);
        let r = obfuscate_batch(&y, &d, PrivacyParams::identity(1), Lambda::Fixed(0.1)).unwrap();
        assert_eq!(r.perturbed_activation, r.activation);
        assert_eq!(r.obfuscated.values(), reaggregate(&d, &r.activation).unwrap().as_slice());
        assert_eq!(r.epsilon_paper, None);
        assert_eq!(r.epsilon_mechanism, None);
    }

    #[test]
    fn same_seed_same_result() {
        let d = random_dictionary(6, 12, 2).unwrap();
        let y = batch(vec![5.0, 1.0, 0.0, 3.0, 2.0, 8.0]);
        let p = PrivacyParams::new(0.5, None, 77).unwrap();
        let a = obfuscate_batch(&y, &d, p, Lambda::default()).unwrap();
        let b = obfuscate_batch(&y, &d, p, Lambda::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.epsilon_mechanism.is_some());
    }

    #[test]
    fn length_mismatch_names_both_sizes() {
        let d = random_dictionary(6, 12, 2).unwrap();
        let y = batch(vec![1.0; 4]);
        let err = obfuscate_batch(&y, &d, PrivacyParams::identity(0), Lambda::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t=6") && msg.contains("t=4"), "{msg}");
    }

    #[test]
    fn sigma_violation_is_a_warning() {
        let d = random_dictionary(4, 6, 2).unwrap();
        let y = batch(vec![5.0, 0.0, 0.0, 5.0]);
        let ob = Obfuscator::new(&d, PrivacyParams::identity(0), Lambda::Fixed(50.0))
            .unwrap()
            .with_sigma(Some(0.0));
        let r = ob.obfuscate_batch(&y, 0).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("sigma")));
    }

    #[test]
    fn negative_closed_form_epsilon_is_reported_not_fatal() {
        let d = random_dictionary(4, 6, 2).unwrap();
        let y = batch(vec![5.0, 0.0, 0.0, 5.0]);
        let p = PrivacyParams::new(0.9, Some(0.5), 0).unwrap();
        let r = obfuscate_batch(&y, &d, p, Lambda::default()).unwrap();
        assert_eq!(r.epsilon_paper, None);
        assert!(r.warnings.iter().any(|w| w.contains("negative epsilon")));
    }

    #[test]
    fn empty_stream() {
        let d = random_dictionary(4, 6, 2).unwrap();
        assert!(process_stream(&[], &d, PrivacyParams::identity(0), Lambda::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn identical_batches_identity_mode() {
        let d = random_dictionary(4, 6, 2).unwrap();
        let batches = vec![batch(vec![2.0, 1.0, 0.0, 3.0]); 10];
        let out = process_stream(&batches, &d, PrivacyParams::identity(0), Lambda::default()).unwrap();
        assert_eq!(out.len(), 10);
        for r in &out {
            assert_eq!(r.obfuscated, out[0].obfuscated);
            assert_eq!(r.activation, out[0].activation);
        }
    }

    #[test]
    fn composed_budget_is_max_or_none() {
        let mk = |p: Option<f64>, m: Option<f64>| BatchSummary {
            batch_index: 0,
            meter_id: "m".into(),
            start_time: String::new(),
            t: 2,
            lambda: 0.0,
            reconstruction_error: 0.0,
            sparsity: 0.0,
            delta0: 0.0,
            epsilon_paper: p,
            epsilon_mechanism: m,
            mean_abs_distortion: 0.0,
            warnings: vec![],
        };
        let s = [mk(Some(1.0), Some(2.0)), mk(Some(3.0), Some(2.0))];
        assert_eq!(
            composed_budget(&s),
            ComposedBudget {
                epsilon_paper: Some(3.0),
                epsilon_mechanism: Some(2.0)
            }
        );
        let s = [mk(None, Some(2.0))];
        assert_eq!(composed_budget(&s).epsilon_paper, None);
    }
}

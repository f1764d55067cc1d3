//! Privacy and utility evaluation.
//!
//! Privacy is measured by attacking load profiles with a greedy threshold
//! disaggregator and scoring the recovered ON/OFF sequences against ground
//! truth. Utility is measured by how well totals survive obfuscation.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meterdata::{ApplianceProfile, GroundTruthStates, ReadingBatch};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Largest number of lower-powered appliances enumerated when deriving a
/// default threshold; beyond it the threshold falls back to half the rating.
const MAX_SUBSET_ENUMERATION: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("ground truth mismatch: {0}")]
    TruthMismatch(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Per-appliance detection thresholds in profile order; `None` derives
    /// them with [`default_thresholds`].
    pub thresholds: Option<Vec<f64>>,
    /// Minimum length of an ON or OFF run; shorter runs are absorbed into the
    /// preceding state. 1 disables smoothing.
    pub hysteresis_slots: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            thresholds: None,
            hysteresis_slots: 1,
        }
    }
}

impl AttackConfig {
    pub fn thresholds_for(&self, profiles: &[ApplianceProfile]) -> Result<Vec<f64>> {
        if self.hysteresis_slots == 0 {
            return Err(EvalError::InvalidConfig("hysteresis must be at least 1 slot".into()));
        }
        match &self.thresholds {
            None => Ok(default_thresholds(profiles)),
            Some(th) => {
                if th.len() != profiles.len() {
                    return Err(EvalError::LengthMismatch {
                        what: "thresholds vs appliances",
                        left: th.len(),
                        right: profiles.len(),
                    });
                }
                if let Some(v) = th.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(EvalError::InvalidConfig(format!(
                        "threshold {v} must be positive"
                    )));
                }
                Ok(th.clone())
            }
        }
    }
}

/// Indices of `profiles` by descending rated power (stable on ties).
fn descending_order(profiles: &[ApplianceProfile]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| {
        profiles[b]
            .rated_power_watts
            .total_cmp(&profiles[a].rated_power_watts)
    });
    order
}

/// Threshold for each appliance, in profile order: midway between its rating
/// and the largest combined rating of lower-ranked appliances that stays
/// below it. Clean aggregate levels then decode exactly whenever they are
/// unambiguous.
pub fn default_thresholds(profiles: &[ApplianceProfile]) -> Vec<f64> {
    let order = descending_order(profiles);
    let mut thresholds = vec![0.0; profiles.len()];
    for (rank, &j) in order.iter().enumerate() {
        let rated = profiles[j].rated_power_watts;
        let lower: Vec<f64> = order[rank + 1..]
            .iter()
            .map(|&k| profiles[k].rated_power_watts)
            .collect();
        thresholds[j] = if lower.len() > MAX_SUBSET_ENUMERATION {
            0.5 * rated
        } else {
            let mut best = 0.0f64;
            for mask in 0u32..(1u32 << lower.len()) {
                let sum: f64 = lower
                    .iter()
                    .enumerate()
                    .filter(|(bit, _)| mask & (1 << bit) != 0)
                    .map(|(_, p)| p)
                    .sum();
                if sum < rated && sum > best {
                    best = sum;
                }
            }
            0.5 * (rated + best)
        };
    }
    thresholds
}

/// Greedy disaggregation: per slot, walk the appliances from the highest
/// rating down, declaring each ON when the remaining power reaches its
/// threshold and then subtracting its rating. Returns one state sequence per
/// profile, in profile order.
pub fn nilm_attack(
    values: &[f64],
    profiles: &[ApplianceProfile],
    config: &AttackConfig,
) -> Result<Vec<Vec<bool>>> {
    let thresholds = config.thresholds_for(profiles)?;
    let order = descending_order(profiles);
    let mut states = vec![Vec::with_capacity(values.len()); profiles.len()];
    for &v in values {
        let mut residual = v;
        let mut on = vec![false; profiles.len()];
        for &j in &order {
            if residual >= thresholds[j] {
                on[j] = true;
                residual -= profiles[j].rated_power_watts;
            }
        }
        for (seq, s) in states.iter_mut().zip(on) {
            seq.push(s);
        }
    }
    if config.hysteresis_slots > 1 {
        for seq in &mut states {
            absorb_short_runs(seq, config.hysteresis_slots);
        }
    }
    Ok(states)
}

fn absorb_short_runs(seq: &mut [bool], min_run: usize) {
    let mut k = 1;
    while k < seq.len() {
        if seq[k] != seq[k - 1] {
            let start = k;
            let mut end = k;
            while end < seq.len() && seq[end] == seq[start] {
                end += 1;
            }
            if end - start < min_run {
                let prev = seq[start - 1];
                seq[start..end].iter_mut().for_each(|s| *s = prev);
            }
            k = end;
        } else {
            k += 1;
        }
    }
}

/// ON-slot confusion counts; these pool across batches by addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl Confusion {
    pub fn from_states(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(EvalError::LengthMismatch {
                what: "predicted vs true states",
                left: predicted.len(),
                right: truth.len(),
            });
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            true_positive: self.true_positive + other.true_positive,
            false_positive: self.false_positive + other.false_positive,
            false_negative: self.false_negative + other.false_negative,
        }
    }

    pub fn scores(&self) -> Scores {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.true_positive, self.true_positive + self.false_positive);
        let recall = ratio(self.true_positive, self.true_positive + self.false_negative);
        Scores {
            precision,
            recall,
            f1: f1_from(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / den
    }
}

pub fn f1_score(predicted: &[bool], truth: &[bool]) -> Result<Scores> {
    Ok(Confusion::from_states(predicted, truth)?.scores())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityMetrics {
    pub mae_watts: f64,
    /// `|sum Y' - sum Y| / sum Y`; `None` when `sum Y = 0` but `sum Y' != 0`.
    pub total_energy_relative_error: Option<f64>,
    /// Worst slot of the same ratio applied to the sum over consumers; `None`
    /// without multi-consumer input or when some slot is undefined.
    pub instant_aggregate_relative_error: Option<f64>,
}

fn relative_total_error(original: f64, obfuscated: f64) -> Option<f64> {
    if original == 0.0 {
        (obfuscated == 0.0).then_some(0.0)
    } else {
        Some((obfuscated - original).abs() / original.abs())
    }
}

/// Readings of several consumers over the same slots, original and obfuscated.
#[derive(Debug, Clone, Copy)]
pub struct ConsumerGroup<'a> {
    pub original: &'a [Vec<f64>],
    pub obfuscated: &'a [Vec<f64>],
}

pub fn utility_metrics(
    y: &[f64],
    y_prime: &[f64],
    consumers: Option<ConsumerGroup<'_>>,
) -> Result<UtilityMetrics> {
    if y.len() != y_prime.len() {
        return Err(EvalError::LengthMismatch {
            what: "original vs obfuscated readings",
            left: y.len(),
            right: y_prime.len(),
        });
    }
    if y.is_empty() {
        return Err(EvalError::Empty("readings"));
    }
    let mae_watts = y.iter().zip(y_prime).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    let total_energy_relative_error = relative_total_error(y.iter().sum(), y_prime.iter().sum());
    let instant_aggregate_relative_error = match consumers {
        None => None,
        Some(group) => instant_aggregate_error(group)?,
    };
    Ok(UtilityMetrics {
        mae_watts,
        total_energy_relative_error,
        instant_aggregate_relative_error,
    })
}

fn instant_aggregate_error(group: ConsumerGroup<'_>) -> Result<Option<f64>> {
    if group.original.len() != group.obfuscated.len() {
        return Err(EvalError::LengthMismatch {
            what: "original vs obfuscated consumers",
            left: group.original.len(),
            right: group.obfuscated.len(),
        });
    }
    let Some(first) = group.original.first() else {
        return Err(EvalError::Empty("consumer group"));
    };
    let slots = first.len();
    for (o, p) in group.original.iter().zip(group.obfuscated) {
        if o.len() != slots || p.len() != slots {
            return Err(EvalError::LengthMismatch {
                what: "consumer series length",
                left: slots,
                right: if o.len() != slots { o.len() } else { p.len() },
            });
        }
    }
    let mut worst = 0.0f64;
    for s in 0..slots {
        let orig: f64 = group.original.iter().map(|c| c[s]).sum();
        let obf: f64 = group.obfuscated.iter().map(|c| c[s]).sum();
        match relative_total_error(orig, obf) {
            Some(e) => worst = worst.max(e),
            None => return Ok(None),
        }
    }
    Ok(Some(worst))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub epsilon_paper: Option<f64>,
    pub epsilon_mechanism: Option<f64>,
    pub f: f64,
    pub delta0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceRow {
    pub name: String,
    pub rated_power_watts: f64,
    pub threshold_watts: f64,
    pub original: Scores,
    pub obfuscated: Scores,
    pub original_counts: Confusion,
    pub obfuscated_counts: Confusion,
    /// Slot for externally obtained F1 figures of other schemes, keyed by
    /// scheme name. Never filled in by this crate.
    pub baselines: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub schema_version: u32,
    pub attack: String,
    pub averaging: String,
    pub hysteresis_slots: usize,
    pub batches: usize,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub appliances: Vec<ApplianceRow>,
    pub utility: UtilityMetrics,
    pub privacy: PrivacySummary,
    pub config: ReportConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn truth_for<'a>(
    truth: &'a [GroundTruthStates],
    name: &str,
    len: usize,
    batch: usize,
) -> Result<&'a [bool]> {
    let g = truth
        .iter()
        .find(|g| g.appliance_name == name)
        .ok_or_else(|| EvalError::TruthMismatch(format!("batch {batch} has no states for {name:?}")))?;
    if g.states.len() != len {
        return Err(EvalError::TruthMismatch(format!(
            "batch {batch}: {} states for {name:?} but {len} readings",
            g.states.len()
        )));
    }
    Ok(&g.states)
}

/// Attacks original and obfuscated batches, pooling confusion counts over
/// batches (micro-averaging), and adds utility and privacy blocks.
pub fn compare_report(
    original: &[ReadingBatch],
    truth: &[Vec<GroundTruthStates>],
    obfuscated: &[ReadingBatch],
    profiles: &[ApplianceProfile],
    privacy: PrivacySummary,
    attack: &AttackConfig,
) -> Result<EvalReport> {
    if original.is_empty() {
        return Err(EvalError::Empty("batch list"));
    }
    if profiles.is_empty() {
        return Err(EvalError::Empty("appliance list"));
    }
    if original.len() != obfuscated.len() {
        return Err(EvalError::LengthMismatch {
            what: "original vs obfuscated batches",
            left: original.len(),
            right: obfuscated.len(),
        });
    }
    if original.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            what: "batches vs ground truth",
            left: original.len(),
            right: truth.len(),
        });
    }
    let thresholds = attack.thresholds_for(profiles)?;

    let mut orig_counts = vec![Confusion::default(); profiles.len()];
    let mut obf_counts = vec![Confusion::default(); profiles.len()];
    let mut all_orig = Vec::new();
    let mut all_obf = Vec::new();
    for (b, ((o, p), states)) in original.iter().zip(obfuscated).zip(truth).enumerate() {
        if o.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                what: "original vs obfuscated batch length",
                left: o.len(),
                right: p.len(),
            });
        }
        let pred_o = nilm_attack(o.values(), profiles, attack)?;
        let pred_p = nilm_attack(p.values(), profiles, attack)?;
        for (j, profile) in profiles.iter().enumerate() {
            let t = truth_for(states, &profile.name, o.len(), b)?;
            orig_counts[j] = orig_counts[j].merge(Confusion::from_states(&pred_o[j], t)?);
            obf_counts[j] = obf_counts[j].merge(Confusion::from_states(&pred_p[j], t)?);
        }
        all_orig.extend_from_slice(o.values());
        all_obf.extend_from_slice(p.values());
    }

    let mut utility = utility_metrics(&all_orig, &all_obf, None)?;
    utility.instant_aggregate_relative_error = aligned_instant_error(original, obfuscated);

    let appliances = profiles
        .iter()
        .enumerate()
        .map(|(j, p)| ApplianceRow {
            name: p.name.clone(),
            rated_power_watts: p.rated_power_watts,
            threshold_watts: thresholds[j],
            original: orig_counts[j].scores(),
            obfuscated: obf_counts[j].scores(),
            original_counts: orig_counts[j],
            obfuscated_counts: obf_counts[j],
            baselines: BTreeMap::new(),
        })
        .collect();

    Ok(EvalReport {
        appliances,
        utility,
        privacy,
        config: ReportConfig {
            schema_version: REPORT_SCHEMA_VERSION,
            attack: "greedy-threshold".into(),
            averaging: "micro".into(),
            hysteresis_slots: attack.hysteresis_slots,
            batches: original.len(),
            slots: all_orig.len(),
        },
    })
}

/// Instant-aggregate error over timestamps shared by at least two meters.
fn aligned_instant_error(original: &[ReadingBatch], obfuscated: &[ReadingBatch]) -> Option<f64> {
    let meters: HashSet<&str> = original.iter().map(ReadingBatch::meter_id).collect();
    if meters.len() < 2 {
        return None;
    }
    let mut slots: BTreeMap<DateTime<Utc>, (f64, f64, usize)> = BTreeMap::new();
    for (o, p) in original.iter().zip(obfuscated) {
        for (k, (a, b)) in o.values().iter().zip(p.values()).enumerate() {
            let e = slots.entry(o.timestamp(k)).or_insert((0.0, 0.0, 0));
            e.0 += a;
            e.1 += b;
            e.2 += 1;
        }
    }
    let mut worst = None::<f64>;
    for (orig, obf, count) in slots.into_values() {
        if count < 2 {
            continue;
        }
        let e = relative_total_error(orig, obf)?;
        worst = Some(worst.map_or(e, |w| w.max(e)));
    }
    worst
}

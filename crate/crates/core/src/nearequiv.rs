//! Near-equivalent Q-learning: epsilon-admissible action sets at the final
//! stage, propagated backward as `m` parallel chains of Q-functions.
//!
//! The single final-stage model is fit as in classical Q-learning. For every
//! patient reaching stage `T`, the actions whose predicted value is within the
//! epsilon band of the best are kept, ordered best first. Rows are padded to
//! a common width `m` with the rank-1 value. Column `j` of that matrix feeds
//! the stage `T-1` targets of chain `j`; each chain then recurses backward on
//! its own with ordinary max-backups. Selection happens once only.
//!
//! Columns are per-patient ranks, not fixed actions: column 1 is each
//! patient's best value, so chain 1 coincides with classical Q-learning.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{history_features, OfflineDataset};
use crate::error::{Error, Result};
use crate::qlearn::{argmax, fit_final_stage, fit_stage, pseudo_outcome_vector, Policy};
use crate::regression::{DesignSpec, FittedQ};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmissibilityMode {
    /// `Q >= max - eps * |max|`
    Relative,
    /// `Q >= max - eps`; for two actions this is the blip band `|blip| <= eps`.
    Absolute,
}

impl fmt::Display for AdmissibilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relative => "relative",
            Self::Absolute => "absolute",
        })
    }
}

impl FromStr for AdmissibilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(Self::Relative),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::Config(format!(
                "unknown admissibility mode {other:?} (expected relative or absolute)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonConfig {
    epsilon: f64,
    mode: AdmissibilityMode,
}

impl EpsilonConfig {
    /// Rejects `epsilon` outside `[0, 1)`.
    pub fn new(epsilon: f64, mode: AdmissibilityMode) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Epsilon(epsilon));
        }
        Ok(Self { epsilon, mode })
    }

    pub fn relative(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, AdmissibilityMode::Relative)
    }

    pub fn absolute(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, AdmissibilityMode::Absolute)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> AdmissibilityMode {
        self.mode
    }

    /// Smallest admissible value given the best one.
    pub fn threshold(&self, max_q: f64) -> f64 {
        match self.mode {
            AdmissibilityMode::Relative => max_q - self.epsilon * max_q.abs(),
            AdmissibilityMode::Absolute => max_q - self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleAction {
    pub action: usize,
    pub q_value: f64,
}

/// Admissible actions ordered by value (descending), ties by index.
pub fn admissible_actions(q_values: &[f64], cfg: &EpsilonConfig) -> Result<Vec<AdmissibleAction>> {
    if q_values.is_empty() {
        return Err(Error::Dataset("admissibility needs at least one action".into()));
    }
    if let Some(k) = q_values.iter().position(|q| !q.is_finite()) {
        return Err(Error::NonFinite(k));
    }
    let best = q_values[argmax(q_values)];
    let floor = cfg.threshold(best);
    let mut kept: Vec<AdmissibleAction> = q_values
        .iter()
        .enumerate()
        .filter(|(_, &q)| q >= floor)
        .map(|(action, &q_value)| AdmissibleAction { action, q_value })
        .collect();
    kept.sort_by(|a, b| b.q_value.total_cmp(&a.q_value).then(a.action.cmp(&b.action)));
    Ok(kept)
}

/// Final-stage selection for a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Per patient; `None` when the trajectory ended before the final stage.
    pub sets: Vec<Option<Vec<AdmissibleAction>>>,
    pub m: usize,
    /// `N x m`: admissible values followed by copies of the rank-1 value.
    /// Patients absent at the final stage get a row of zeros.
    pub padded: Vec<Vec<f64>>,
    /// Number of padded entries per patient.
    pub padding: Vec<usize>,
}

impl Selection {
    pub fn set_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.as_ref().map_or(1, Vec::len)).collect()
    }
}

pub fn select_and_pad(final_model: &FittedQ, dataset: &OfflineDataset, cfg: &EpsilonConfig) -> Result<Selection> {
    let horizon = dataset.horizon();
    let sets = dataset
        .patients()
        .iter()
        .map(|p| match p.stage(horizon) {
            Some(rec) => {
                let q = final_model.predict_all_actions(&rec.covariates)?;
                admissible_actions(&q, cfg).map(Some)
            }
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pad(sets))
}

pub(crate) fn pad(sets: Vec<Option<Vec<AdmissibleAction>>>) -> Selection {
    let m = sets.iter().map(|s| s.as_ref().map_or(1, Vec::len)).max().unwrap_or(1);
    let mut padded = Vec::with_capacity(sets.len());
    let mut padding = Vec::with_capacity(sets.len());
    for set in &sets {
        let row: Vec<f64> = match set {
            Some(s) => {
                let mut row: Vec<f64> = s.iter().map(|a| a.q_value).collect();
                row.resize(m, s[0].q_value);
                row
            }
            None => vec![0.0; m],
        };
        padding.push(m - set.as_ref().map_or(1, Vec::len));
        padded.push(row);
    }
    Selection {
        sets,
        m,
        padded,
        padding,
    }
}

/// Source of future values for a pseudo-outcome matrix.
#[derive(Clone, Copy, Debug)]
pub enum FutureValues<'a> {
    /// Padded final-stage matrix; valid for stage `T-1` only.
    Padded(&'a [Vec<f64>]),
    /// One stage-`t+1` model per column.
    Columns(&'a [FittedQ]),
}

/// `N x m` targets for stage `t < T`; `None` rows for patients not observed
/// at `t`. A trajectory ending at `t` gets `Y_t` in every column.
pub fn pseudo_outcome_matrix(
    dataset: &OfflineDataset,
    t: usize,
    future: FutureValues<'_>,
) -> Result<Vec<Option<Vec<f64>>>> {
    let horizon = dataset.horizon();
    if t >= horizon {
        return Err(Error::NoFutureStage(t));
    }
    match future {
        FutureValues::Padded(rows) => {
            if t + 1 != horizon {
                return Err(Error::Dataset(format!(
                    "padded final-stage values apply to stage {} only, not {t}",
                    horizon - 1
                )));
            }
            if rows.len() != dataset.len() {
                return Err(Error::Dimension {
                    expected: dataset.len(),
                    got: rows.len(),
                });
            }
            let m = rows.first().map_or(0, Vec::len);
            if let Some(bad) = rows.iter().find(|r| r.len() != m) {
                return Err(Error::Dimension {
                    expected: m,
                    got: bad.len(),
                });
            }
            Ok(dataset
                .patients()
                .iter()
                .zip(rows)
                .map(|(p, row)| {
                    p.stage(t).map(|rec| {
                        if p.ended_at(t, horizon) {
                            vec![rec.reward; m]
                        } else {
                            row.iter().map(|v| rec.reward + v).collect()
                        }
                    })
                })
                .collect())
        }
        FutureValues::Columns(models) => {
            let columns = models
                .iter()
                .map(|m| pseudo_outcome_vector(dataset, t, m))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..dataset.len())
                .map(|i| columns.iter().map(|c| c[i]).collect::<Option<Vec<f64>>>())
                .collect())
        }
    }
}

fn column(matrix: &[Option<Vec<f64>>], j: usize) -> Vec<Option<f64>> {
    matrix.iter().map(|r| r.as_ref().map(|r| r[j])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearEquivQStack {
    horizon: usize,
    epsilon: EpsilonConfig,
    final_model: FittedQ,
    /// `column_models[j][t]` for `t < T`.
    column_models: Vec<Vec<FittedQ>>,
    patient_ids: Vec<u64>,
    selection: Selection,
}

pub fn backward_fit_near_equiv(
    dataset: &OfflineDataset,
    spec: &DesignSpec,
    cfg: &EpsilonConfig,
) -> Result<NearEquivQStack> {
    let horizon = dataset.horizon();
    let final_model = fit_final_stage(dataset, spec).map_err(|e| e.at_stage(horizon, None))?;
    let selection = select_and_pad(&final_model, dataset, cfg).map_err(|e| e.at_stage(horizon, None))?;

    let column_models = if horizon == 0 {
        Vec::new()
    } else {
        let penultimate = pseudo_outcome_matrix(dataset, horizon - 1, FutureValues::Padded(&selection.padded))?;
        (0..selection.m)
            .into_par_iter()
            .map(|j| {
                let mut chain = Vec::with_capacity(horizon);
                let targets = column(&penultimate, j);
                chain.push(
                    fit_stage(dataset, horizon - 1, spec, &targets)
                        .map_err(|e| e.at_stage(horizon - 1, Some(j + 1)))?,
                );
                for t in (0..horizon - 1).rev() {
                    let next = chain.last().expect("chain is non-empty");
                    let targets = pseudo_outcome_vector(dataset, t, next).map_err(|e| e.at_stage(t, Some(j + 1)))?;
                    chain.push(fit_stage(dataset, t, spec, &targets).map_err(|e| e.at_stage(t, Some(j + 1)))?);
                }
                chain.reverse();
                Ok(chain)
            })
            .collect::<Result<Vec<_>>>()?
    };

    Ok(NearEquivQStack {
        horizon,
        epsilon: *cfg,
        final_model,
        column_models,
        patient_ids: dataset.patients().iter().map(|p| p.id()).collect(),
        selection,
    })
}

impl NearEquivQStack {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m(&self) -> usize {
        self.selection.m
    }

    pub fn epsilon(&self) -> &EpsilonConfig {
        &self.epsilon
    }

    pub fn final_model(&self) -> &FittedQ {
        &self.final_model
    }

    /// Chain `j` (0-based), models for stages `0..T`. Empty for a
    /// single-stage stack or `j >= m`.
    pub fn column_models(&self, j: usize) -> &[FittedQ] {
        self.column_models.get(j).map_or(&[], Vec::as_slice)
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    /// Final-stage admissible set of the training patient at position `i`.
    pub fn admissible_set(&self, i: usize) -> Option<&[AdmissibleAction]> {
        self.selection.sets[i].as_deref()
    }

    /// Admissible final-stage actions for a new history.
    pub fn admissible_at(&self, features: &[f64]) -> Result<Vec<AdmissibleAction>> {
        admissible_actions(&self.final_model.predict_all_actions(features)?, &self.epsilon)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stack: Self = serde_json::from_str(text)?;
        if stack.column_models.iter().any(|c| c.len() != stack.horizon) {
            return Err(Error::Format("column chain length does not match horizon".into()));
        }
        Ok(stack)
    }

    /// Audit table `patient_id,rank,action_index,q_value` (rank is 1-based).
    pub fn write_admissible_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "rank", "action_index", "q_value"])?;
        for (id, set) in self.patient_ids.iter().zip(&self.selection.sets) {
            for (r, a) in set.iter().flatten().enumerate() {
                w.write_record([
                    id.to_string(),
                    (r + 1).to_string(),
                    a.action.to_string(),
                    a.q_value.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Greedy policy over chain `j`; the final stage uses the shared model.
#[derive(Clone, Copy, Debug)]
pub struct ColumnPolicy<'a> {
    stack: &'a NearEquivQStack,
    column: usize,
}

impl ColumnPolicy<'_> {
    /// 0-based chain index.
    pub fn column(&self) -> usize {
        self.column
    }
}

impl Policy for ColumnPolicy<'_> {
    fn decide(&self, stage: usize, features: &[f64]) -> Result<usize> {
        let model = if stage == self.stack.horizon {
            &self.stack.final_model
        } else if stage < self.stack.horizon {
            &self.stack.column_models[self.column][stage]
        } else {
            return Err(Error::StageOutOfRange {
                stage,
                terminal: self.stack.horizon,
            });
        };
        Ok(argmax(&model.predict_all_actions(features)?))
    }
}

/// The `m` near-equivalent strategies, best chain first.
#[derive(Clone, Debug)]
pub struct PolicySet<'a> {
    pub policies: Vec<ColumnPolicy<'a>>,
}

impl PolicySet<'_> {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

pub fn policy_set(stack: &NearEquivQStack) -> PolicySet<'_> {
    PolicySet {
        policies: (0..stack.m()).map(|column| ColumnPolicy { stack, column }).collect(),
    }
}

/// Decisions of one strategy along a recorded trajectory.
pub fn decisions_along(policy: &dyn Policy, trajectory: &crate::data::PatientTrajectory) -> Result<Vec<usize>> {
    (0..=trajectory.terminal_stage())
        .map(|t| policy.decide(t, history_features(trajectory, t)?))
        .collect()
}

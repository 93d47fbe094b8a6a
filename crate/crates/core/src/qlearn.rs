//! Classical backward Q-learning over a finite horizon.
//!
//! Stage `T` regresses the observed reward on `(H_T, A_T)`. Each earlier stage
//! regresses the pseudo-outcome `Y_t + max_a Q_{t+1}(H_{t+1}, a)` on
//! `(H_t, A_t)`. A patient whose trajectory ends at stage `t < T` (death)
//! contributes `Y_t` alone and is absent from later stages. No discounting.

use serde::{Deserialize, Serialize};

use crate::data::{history_features, OfflineDataset};
use crate::error::{Error, Result};
use crate::regression::{fit, DesignSpec, FittedQ};

/// A stagewise decision rule over history features.
pub trait Policy: Sync {
    fn decide(&self, stage: usize, features: &[f64]) -> Result<usize>;
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn max_value(values: &[f64]) -> f64 {
    values[argmax(values)]
}

/// Fits stage `t` on the rows observed there that have a target.
pub(crate) fn fit_stage(
    dataset: &OfflineDataset,
    t: usize,
    spec: &DesignSpec,
    targets: &[Option<f64>],
) -> Result<FittedQ> {
    let mut features = Vec::new();
    let mut actions = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in dataset.records_at(t) {
        if let Some(y) = targets[i] {
            features.push(rec.covariates.clone());
            actions.push(rec.action_index);
            ys.push(y);
        }
    }
    if features.is_empty() {
        return Err(Error::Dataset(format!("no training rows at stage {t}")));
    }
    fit(spec, &features, &actions, &ys, dataset.action_space(t))
}

pub fn fit_final_stage(dataset: &OfflineDataset, spec: &DesignSpec) -> Result<FittedQ> {
    let horizon = dataset.horizon();
    let targets: Vec<Option<f64>> = dataset
        .patients()
        .iter()
        .map(|p| p.stage(horizon).map(|r| r.reward))
        .collect();
    if targets.iter().all(Option::is_none) {
        return Err(Error::EmptyFinalStage(horizon));
    }
    fit_stage(dataset, horizon, spec, &targets)
}

/// Pseudo-outcomes for stage `t < T`, one entry per patient; `None` for
/// patients not observed at `t`.
pub fn pseudo_outcome_vector(dataset: &OfflineDataset, t: usize, next_model: &FittedQ) -> Result<Vec<Option<f64>>> {
    if t >= dataset.horizon() {
        return Err(Error::NoFutureStage(t));
    }
    dataset
        .patients()
        .iter()
        .map(|p| {
            let Some(rec) = p.stage(t) else {
                return Ok(None);
            };
            if p.ended_at(t, dataset.horizon()) {
                return Ok(Some(rec.reward));
            }
            let next = next_model.predict_all_actions(history_features(p, t + 1)?)?;
            Ok(Some(rec.reward + max_value(&next)))
        })
        .collect()
}

/// Which model supplied the targets for a stage's fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: usize,
    /// `None` at the final stage (observed rewards).
    pub targets_from: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QStack {
    horizon: usize,
    models: Vec<FittedQ>,
    provenance: Vec<Provenance>,
}

pub fn backward_fit(dataset: &OfflineDataset, spec: &DesignSpec) -> Result<QStack> {
    let horizon = dataset.horizon();
    let mut models = Vec::with_capacity(horizon + 1);
    let mut provenance = Vec::with_capacity(horizon + 1);
    models.push(fit_final_stage(dataset, spec).map_err(|e| e.at_stage(horizon, None))?);
    provenance.push(Provenance {
        stage: horizon,
        targets_from: None,
    });
    for t in (0..horizon).rev() {
        let next = models.last().expect("final stage fitted");
        let targets = pseudo_outcome_vector(dataset, t, next).map_err(|e| e.at_stage(t, None))?;
        models.push(fit_stage(dataset, t, spec, &targets).map_err(|e| e.at_stage(t, None))?);
        provenance.push(Provenance {
            stage: t,
            targets_from: Some(t + 1),
        });
    }
    models.reverse();
    provenance.reverse();
    Ok(QStack {
        horizon,
        models,
        provenance,
    })
}

impl QStack {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn model(&self, t: usize) -> &FittedQ {
        &self.models[t]
    }

    pub fn models(&self) -> &[FittedQ] {
        &self.models
    }

    /// Indexed by stage.
    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn greedy(&self) -> GreedyPolicy<'_> {
        GreedyPolicy { stack: self }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stack: Self = serde_json::from_str(text)?;
        if stack.models.len() != stack.horizon + 1 {
            return Err(Error::Format(format!(
                "expected {} models, found {}",
                stack.horizon + 1,
                stack.models.len()
            )));
        }
        // Re-check the embedded model versions.
        for m in &stack.models {
            FittedQ::from_json(&m.to_json()?)?;
        }
        Ok(stack)
    }
}

pub fn greedy_action(qstack: &QStack, t: usize, features: &[f64]) -> Result<usize> {
    if t > qstack.horizon {
        return Err(Error::StageOutOfRange {
            stage: t,
            terminal: qstack.horizon,
        });
    }
    Ok(argmax(&qstack.models[t].predict_all_actions(features)?))
}

#[derive(Clone, Copy, Debug)]
pub struct GreedyPolicy<'a> {
    stack: &'a QStack,
}

impl Policy for GreedyPolicy<'_> {
    fn decide(&self, stage: usize, features: &[f64]) -> Result<usize> {
        greedy_action(self.stack, stage, features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ActionSpace, PatientTrajectory, StageRecord};

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[-3.0, 2.0, 2.0, 1.0]), 1);
    }

    fn two_stage(died_first: bool) -> OfflineDataset {
        let mut patients = Vec::new();
        for i in 0..6u64 {
            let x = i as f64 / 5.0;
            let mut stages = vec![StageRecord::new(vec![x], (i % 2) as usize, 1.0)];
            if !(died_first && i == 0) {
                stages.push(StageRecord::new(vec![x + 0.5], ((i / 2) % 2) as usize, x));
            }
            patients.push(PatientTrajectory::new(i, stages).unwrap());
        }
        OfflineDataset::uniform(patients, 1, ActionSpace::indexed(2).unwrap(), 1).unwrap()
    }

    #[test]
    fn pseudo_outcome_is_reward_plus_next_max() {
        let ds = two_stage(false);
        // Q_1(h, 0) = 2, Q_1(h, 1) = -1 for every h.
        let next =
            FittedQ::interaction_linear(vec![0.5, 0.0, -1.5, 0.0], ActionSpace::new(vec![-1.0, 1.0]).unwrap()).unwrap();
        let y = pseudo_outcome_vector(&ds, 0, &next).unwrap();
        assert!(y.iter().all(|v| *v == Some(1.0 + 2.0)));
    }

    #[test]
    fn pseudo_outcome_for_dead_patient_is_observed_reward() {
        let mut ds = two_stage(true);
        let p0 = PatientTrajectory::new(0, vec![StageRecord::new(vec![0.0], 0, -60.0)]).unwrap();
        let mut patients = ds.patients().to_vec();
        patients[0] = p0;
        ds = OfflineDataset::uniform(patients, 1, ActionSpace::indexed(2).unwrap(), 1).unwrap();
        let next = FittedQ::interaction_linear(vec![10.0, 0.0, 0.0, 0.0], ActionSpace::indexed(2).unwrap()).unwrap();
        let y = pseudo_outcome_vector(&ds, 0, &next).unwrap();
        assert_eq!(y[0], Some(-60.0));
        assert_eq!(y[1], Some(11.0));
    }

    #[test]
    fn zero_next_model_gives_observed_rewards() {
        let ds = two_stage(false);
        let zero = FittedQ::interaction_linear(vec![0.0; 4], ActionSpace::indexed(2).unwrap()).unwrap();
        let y = pseudo_outcome_vector(&ds, 0, &zero).unwrap();
        assert!(y.iter().all(|v| *v == Some(1.0)));
        assert!(matches!(
            pseudo_outcome_vector(&ds, 1, &zero),
            Err(Error::NoFutureStage(1))
        ));
    }

    #[test]
    fn empty_final_stage_is_an_error() {
        let p = |id| PatientTrajectory::new(id, vec![StageRecord::new(vec![0.0], 0, 0.0)]).unwrap();
        let ds = OfflineDataset::uniform(vec![p(0), p(1)], 1, ActionSpace::indexed(2).unwrap(), 1).unwrap();
        assert!(matches!(
            fit_final_stage(&ds, &DesignSpec::default()),
            Err(Error::EmptyFinalStage(1))
        ));
        let err = backward_fit(&ds, &DesignSpec::default()).unwrap_err();
        assert!(err.to_string().contains("stage 1"));
    }

    #[test]
    fn provenance_points_forward() {
        let stack = backward_fit(&two_stage(true), &DesignSpec::kernel(Some(1.0), 0.5)).unwrap();
        assert_eq!(stack.models().len(), 2);
        for (t, p) in stack.provenance().iter().enumerate() {
            assert_eq!(p.stage, t);
            if t < stack.horizon() {
                assert_eq!(p.targets_from, Some(t + 1));
            } else {
                assert_eq!(p.targets_from, None);
            }
        }
        let back = QStack::from_json(&stack.to_json().unwrap()).unwrap();
        assert_eq!(back, stack);
    }
}

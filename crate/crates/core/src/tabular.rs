//! Small tabular MDPs with exhaustive offline data, and a brute-force
//! finite-horizon dynamic-programming solver to check backward Q-learning
//! against.
//!
//! States are encoded as one-hot indicators without the reference state 0,
//! and actions carry labels `-1/+1`, so the interaction-linear design is
//! saturated and its fitted values are exact cell means.

use crate::data::{ActionSpace, OfflineDataset, PatientTrajectory, StageRecord};
use crate::error::Result;
use crate::qlearn::QStack;
use crate::regression::DesignSpec;

/// Transition counts are proportional to probabilities; every `(s, a)` row
/// must have the same total so exhaustive enumeration weights branches
/// correctly.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub horizon: usize,
    /// `counts[s][a]` lists `(next_state, count)`.
    pub counts: Vec<[Vec<(usize, usize)>; 2]>,
    /// `reward[s][a][s']` for stages before the last.
    pub reward: Vec<[Vec<f64>; 2]>,
    /// `final_reward[s][a]` at the last stage.
    pub final_reward: Vec<[f64; 2]>,
    /// Symmetric noise added in `+/-` pairs; does not change cell means.
    pub jitter: f64,
}

impl TabularMdp {
    /// Four states, two actions, two stages.
    pub fn fixture() -> Self {
        let counts = vec![
            [vec![(0, 1), (1, 3)], vec![(2, 2), (3, 2)]],
            [vec![(1, 4)], vec![(0, 1), (2, 1), (3, 2)]],
            [vec![(3, 3), (0, 1)], vec![(1, 2), (2, 2)]],
            [vec![(2, 4)], vec![(0, 3), (3, 1)]],
        ];
        let reward = (0..4)
            .map(|s| {
                [
                    (0..4).map(|n| 0.5 * s as f64 - 0.25 * n as f64).collect(),
                    (0..4).map(|n| 1.0 - 0.3 * s as f64 + 0.1 * n as f64).collect(),
                ]
            })
            .collect();
        Self {
            n_states: 4,
            horizon: 1,
            counts,
            reward,
            final_reward: vec![[1.0, -0.5], [0.25, 2.0], [-1.0, 0.75], [3.0, 1.5]],
            jitter: 0.125,
        }
    }

    /// Same states, a single stage.
    pub fn single_stage() -> Self {
        Self {
            horizon: 0,
            ..Self::fixture()
        }
    }

    pub fn features(&self, s: usize) -> Vec<f64> {
        (1..self.n_states).map(|k| f64::from(u8::from(k == s))).collect()
    }

    pub fn action_space() -> ActionSpace {
        ActionSpace::new(vec![-1.0, 1.0]).expect("distinct labels")
    }

    pub fn design() -> DesignSpec {
        DesignSpec::interaction_linear(0.0)
    }

    fn extend(&self, t: usize, s: usize, prefix: &mut Vec<StageRecord>, out: &mut Vec<Vec<StageRecord>>) {
        for a in 0..2 {
            if t == self.horizon {
                for sign in [-1.0, 1.0] {
                    let mut path = prefix.clone();
                    path.push(StageRecord::new(
                        self.features(s),
                        a,
                        self.final_reward[s][a] + sign * self.jitter,
                    ));
                    out.push(path);
                }
                continue;
            }
            for &(next, count) in &self.counts[s][a] {
                for _ in 0..count {
                    prefix.push(StageRecord::new(self.features(s), a, self.reward[s][a][next]));
                    self.extend(t + 1, next, prefix, out);
                    prefix.pop();
                }
            }
        }
    }

    /// Every state at stage 0, every action at every stage, every transition
    /// in proportion to its count.
    pub fn exhaustive_dataset(&self) -> Result<OfflineDataset> {
        let mut paths = Vec::new();
        for s in 0..self.n_states {
            self.extend(0, s, &mut Vec::new(), &mut paths);
        }
        let patients = paths
            .into_iter()
            .enumerate()
            .map(|(i, stages)| PatientTrajectory::new(i as u64, stages))
            .collect::<Result<Vec<_>>>()?;
        Ok(
            OfflineDataset::uniform(patients, self.horizon, Self::action_space(), self.n_states - 1)?
                .with_fixed_horizon(true),
        )
    }

    /// `q[t][s][a]` by backward induction on the known model.
    pub fn dp_values(&self) -> Vec<Vec<[f64; 2]>> {
        let mut q = vec![vec![[0.0; 2]; self.n_states]; self.horizon + 1];
        q[self.horizon].clone_from(&self.final_reward);
        for t in (0..self.horizon).rev() {
            for s in 0..self.n_states {
                for a in 0..2 {
                    let total: usize = self.counts[s][a].iter().map(|(_, c)| c).sum();
                    let mut v = 0.0;
                    for &(next, c) in &self.counts[s][a] {
                        let best = q[t + 1][next][0].max(q[t + 1][next][1]);
                        v += c as f64 / total as f64 * (self.reward[s][a][next] + best);
                    }
                    q[t][s][a] = v;
                }
            }
        }
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub max_discrepancy: f64,
    pub n_values: usize,
}

/// Largest `|Q_fitted - Q_dp|` over every stage, state and action.
pub fn compare(stack: &QStack, mdp: &TabularMdp) -> Result<OracleReport> {
    let dp = mdp.dp_values();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (t, stage) in dp.iter().enumerate() {
        for (s, values) in stage.iter().enumerate() {
            let fitted = stack.model(t).predict_all_actions(&mdp.features(s))?;
            for a in 0..2 {
                worst = worst.max((fitted[a] - values[a]).abs());
                n += 1;
            }
        }
    }
    Ok(OracleReport {
        max_discrepancy: worst,
        n_values: n,
    })
}

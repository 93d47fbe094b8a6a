//! Data-generating environments.
//!
//! * A single-stage binary treatment problem with ten uniform covariates and
//!   outcome mean `1 + 2x0 + x1 + 0.5x2 + (x0 + x1) a`.
//! * A six-month chemotherapy model with tumor size and toxicity states, an
//!   11-point dose grid and a death hazard `exp(-4 + tumor + toxicity)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActionSpace, OfflineDataset, PatientTrajectory, StageRecord};
use crate::error::{Error, Result};
use crate::qlearn::Policy;
use crate::rng::stream;

pub const ITR_COVARIATES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItrConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Outcome noise standard deviation (1 in the reference model).
    pub noise_sd: f64,
}

impl ItrConfig {
    pub fn new(n_patients: usize, seed: u64) -> Self {
        Self {
            n_patients,
            seed,
            noise_sd: 1.0,
        }
    }
}

/// Action labels `[-1, +1]`; index 1 is treatment `+1`.
pub fn itr_action_space() -> ActionSpace {
    ActionSpace::new(vec![-1.0, 1.0]).expect("two distinct labels")
}

/// Outcome mean for covariates `x` under treatment label `a`.
pub fn itr_mean(x: &[f64], a: f64) -> f64 {
    1.0 + 2.0 * x[0] + x[1] + 0.5 * x[2] + (x[0] + x[1]) * a
}

/// `Q(x, +1) - Q(x, -1) = 2 (x0 + x1)`. Only `x[0]` and `x[1]` are read.
pub fn true_blip(x: &[f64]) -> f64 {
    2.0 * (x[0] + x[1])
}

/// Optimal treatment label, `sign(x0 + x1)`; `+1` on the boundary.
pub fn itr_optimal_label(x: &[f64]) -> f64 {
    if x[0] + x[1] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn simulate_itr(cfg: &ItrConfig) -> Result<OfflineDataset> {
    if cfg.n_patients == 0 {
        return Err(Error::Config("n_patients must be >= 1".into()));
    }
    let space = itr_action_space();
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let patients = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, "itr", i as u64);
            let x: Vec<f64> = (0..ITR_COVARIATES).map(|_| unit.sample(&mut rng)).collect();
            let action_index = usize::from(rng.random_bool(0.5));
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y = itr_mean(&x, space.values()[action_index]) + cfg.noise_sd * noise;
            PatientTrajectory::new(i as u64, vec![StageRecord::new(x, action_index, y)])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OfflineDataset::uniform(patients, 0, space, ITR_COVARIATES)?.with_fixed_horizon(true))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancerParams {
    /// Number of monthly decisions; states run over months `0..=n_stages`.
    pub n_stages: usize,
    pub dose_grid: Vec<f64>,
    /// `(mu0, mu_tumor, mu_toxicity)` in `exp(mu0 + mu_tumor T + mu_toxicity X)`.
    pub hazard: (f64, f64, f64),
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
    pub initial_tumor: (f64, f64),
    pub initial_toxicity: (f64, f64),
    /// When false the death draw still consumes randomness but never kills.
    pub mortality: bool,
}

impl Default for CancerParams {
    fn default() -> Self {
        Self {
            n_stages: 6,
            dose_grid: (0..=10).map(|k| k as f64 / 10.0).collect(),
            hazard: (-4.0, 1.0, 1.0),
            a1: 0.15,
            a2: 0.1,
            b1: 1.2,
            b2: 1.2,
            d1: 0.5,
            d2: 0.5,
            initial_tumor: (0.0, 2.0),
            initial_toxicity: (0.0, 2.0),
            mortality: true,
        }
    }
}

impl CancerParams {
    pub fn action_space(&self) -> Result<ActionSpace> {
        ActionSpace::new(self.dose_grid.clone())
    }

    pub fn dose_index(&self, dose: f64) -> Result<usize> {
        self.dose_grid
            .iter()
            .position(|d| (d - dose).abs() <= 1e-9)
            .ok_or(Error::DoseOffGrid(dose))
    }

    pub fn hazard_rate(&self, tumor: f64, toxicity: f64) -> f64 {
        let (mu0, mt, mx) = self.hazard;
        (mu0 + mt * tumor + mx * toxicity).exp()
    }

    /// Monthly death probability `1 - exp(-hazard)`.
    pub fn death_probability(&self, tumor: f64, toxicity: f64) -> f64 {
        -(-self.hazard_rate(tumor, toxicity)).exp_m1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancerState {
    pub tumor: f64,
    pub toxicity: f64,
    pub alive: bool,
    pub cured: bool,
    pub initial_tumor: f64,
    pub initial_toxicity: f64,
}

impl CancerState {
    pub fn initial(tumor: f64, toxicity: f64) -> Self {
        Self {
            tumor,
            toxicity,
            alive: true,
            cured: tumor <= 0.0,
            initial_tumor: tumor,
            initial_toxicity: toxicity,
        }
    }

    pub fn features(&self) -> [f64; 2] {
        [self.tumor, self.toxicity]
    }

    pub fn combined(&self) -> f64 {
        self.tumor + self.toxicity
    }
}

/// Deterministic part of one monthly update.
pub fn cancer_dynamics(params: &CancerParams, state: &CancerState, dose: f64) -> CancerState {
    let tumor = if state.cured || state.tumor <= 0.0 {
        0.0
    } else {
        let dt = params.a1 * state.toxicity.max(state.initial_toxicity) - params.b1 * (dose - params.d1);
        (state.tumor + dt).max(0.0)
    };
    let dx = params.a2 * state.tumor.max(state.initial_tumor) + params.b2 * (dose - params.d2);
    let toxicity = (state.toxicity + dx).max(0.0);
    CancerState {
        tumor,
        toxicity,
        cured: tumor == 0.0,
        ..*state
    }
}

/// One month: dynamics, then a death draw at the post-transition state.
/// A dead state is returned unchanged.
pub fn cancer_transition<R: Rng + ?Sized>(
    params: &CancerParams,
    state: &CancerState,
    dose: f64,
    rng: &mut R,
) -> Result<(CancerState, bool)> {
    params.dose_index(dose)?;
    if !state.alive {
        return Ok((*state, false));
    }
    let mut next = cancer_dynamics(params, state, dose);
    let u: f64 = rng.random();
    let died = params.mortality && u < params.death_probability(next.tumor, next.toxicity);
    if died {
        next.alive = false;
    }
    Ok((next, died))
}

pub fn cancer_reward(prev: &CancerState, next: &CancerState, died: bool) -> f64 {
    let survival = if died { -60.0 } else { 0.0 };
    let toxicity = if next.toxicity - prev.toxicity <= -0.5 {
        5.0
    } else {
        -5.0
    };
    let tumor = if next.tumor == 0.0 {
        15.0
    } else if next.tumor - prev.tumor <= -0.5 {
        5.0
    } else {
        -5.0
    };
    survival + toxicity + tumor
}

/// Dose assignment used while simulating.
#[derive(Clone, Copy)]
pub enum DosePolicy<'a> {
    /// Uniform over the dose grid, independently each month.
    UniformRandom,
    /// Deterministic rule over `[tumor, toxicity]`.
    Rule(&'a dyn Policy),
    /// The same grid index every month.
    Constant(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CancerCohort {
    pub dataset: OfflineDataset,
    /// `states[i][t]` for months `0..=n_stages`; carried forward after death.
    pub states: Vec<Vec<CancerState>>,
    /// Dose index chosen at each month the patient was alive.
    pub doses: Vec<Vec<usize>>,
}

pub(crate) const INIT_LABEL: &str = "cancer/init";
const TRANSITION_LABEL: &str = "cancer/transition";
const BEHAVIOR_LABEL: &str = "cancer/behavior";

pub(crate) fn draw_initial_state(params: &CancerParams, seed: u64, label: &str, i: usize) -> CancerState {
    let mut rng = stream(seed, label, i as u64);
    let tumor = rng.random_range(params.initial_tumor.0..params.initial_tumor.1);
    let toxicity = rng.random_range(params.initial_toxicity.0..params.initial_toxicity.1);
    CancerState::initial(tumor, toxicity)
}

/// Simulates `n` patients. Initial states come from the `cancer/init`
/// streams and death draws from `cancer/transition`, both indexed by
/// patient, so different policies run with the same seed share initial
/// states and death uniforms.
pub fn simulate_cancer_cohort(
    params: &CancerParams,
    policy: DosePolicy<'_>,
    n: usize,
    seed: u64,
) -> Result<CancerCohort> {
    simulate_with_init(params, policy, n, seed, INIT_LABEL)
}

pub(crate) fn simulate_with_init(
    params: &CancerParams,
    policy: DosePolicy<'_>,
    n: usize,
    seed: u64,
    init_label: &str,
) -> Result<CancerCohort> {
    if n == 0 {
        return Err(Error::Config("cohort size must be >= 1".into()));
    }
    if params.n_stages == 0 {
        return Err(Error::Config("n_stages must be >= 1".into()));
    }
    let space = params.action_space()?;
    let k = space.len();
    if let DosePolicy::Constant(idx) = policy {
        if idx >= k {
            return Err(Error::ActionOutOfRange { index: idx, size: k });
        }
    }
    let runs = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut transition_rng = stream(seed, TRANSITION_LABEL, i as u64);
            let mut behavior_rng = stream(seed, BEHAVIOR_LABEL, i as u64);
            let mut state = draw_initial_state(params, seed, init_label, i);
            let mut states = vec![state];
            let mut doses = Vec::new();
            let mut records = Vec::new();
            for t in 0..params.n_stages {
                let features = state.features();
                let a = match policy {
                    DosePolicy::UniformRandom => behavior_rng.random_range(0..k),
                    DosePolicy::Rule(rule) => rule.decide(t, &features)?,
                    DosePolicy::Constant(idx) => idx,
                };
                if a >= k {
                    return Err(Error::ActionOutOfRange { index: a, size: k });
                }
                let (next, died) = cancer_transition(params, &state, params.dose_grid[a], &mut transition_rng)?;
                records.push(StageRecord::new(
                    features.to_vec(),
                    a,
                    cancer_reward(&state, &next, died),
                ));
                doses.push(a);
                states.push(next);
                state = next;
                if died {
                    break;
                }
            }
            states.resize(params.n_stages + 1, state);
            Ok((PatientTrajectory::new(i as u64, records)?, states, doses))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut patients = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut doses = Vec::with_capacity(n);
    for (p, s, d) in runs {
        patients.push(p);
        states.push(s);
        doses.push(d);
    }
    let dataset = OfflineDataset::uniform(patients, params.n_stages - 1, space, 2)?;
    Ok(CancerCohort { dataset, states, doses })
}

impl CancerCohort {
    /// Trajectory table `patient_id,stage,tumor,toxicity,dose,reward,alive`:
    /// one row per month; `dose` and `reward` are blank where no decision
    /// was taken.
    pub fn write_trajectory_csv(&self, params: &CancerParams, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "stage", "tumor", "toxicity", "dose", "reward", "alive"])?;
        for (p, (states, doses)) in self.dataset.patients().iter().zip(self.states.iter().zip(&self.doses)) {
            for (t, s) in states.iter().enumerate() {
                let (dose, reward) = match (doses.get(t), p.stage(t)) {
                    (Some(&d), Some(r)) => (params.dose_grid[d].to_string(), r.reward.to_string()),
                    _ => (String::new(), String::new()),
                };
                w.write_record([
                    p.id().to_string(),
                    t.to_string(),
                    s.tumor.to_string(),
                    s.toxicity.to_string(),
                    dose,
                    reward,
                    s.alive.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

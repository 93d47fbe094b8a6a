//! Policy evaluation by fresh simulation, plus the plot data for the blip
//! surface and the epsilon tolerance bands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::OfflineDataset;
use crate::envs::{itr_optimal_label, simulate_with_init, CancerCohort, CancerParams, DosePolicy, INIT_LABEL};
use crate::error::{Error, Result};
use crate::qlearn::argmax;
use crate::regression::FittedQ;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub label: String,
    pub n: usize,
    /// Mean of tumor + toxicity for months `0..=n_stages`. Dead patients
    /// keep their state at death.
    pub curve: Vec<f64>,
    pub curve_stderr: Vec<f64>,
    pub mean_cum_reward: f64,
    pub stderr_cum_reward: f64,
}

fn mean_and_stderr(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates a simulated cohort.
pub fn summarize(label: &str, cohort: &CancerCohort) -> EvalResult {
    let months = cohort.states.first().map_or(0, Vec::len);
    let mut curve = Vec::with_capacity(months);
    let mut curve_stderr = Vec::with_capacity(months);
    for t in 0..months {
        let (m, se) = mean_and_stderr(cohort.states.iter().map(|s| s[t].combined()));
        curve.push(m);
        curve_stderr.push(se);
    }
    let (mean_cum_reward, stderr_cum_reward) =
        mean_and_stderr(cohort.dataset.patients().iter().map(|p| p.total_reward()));
    EvalResult {
        label: label.to_string(),
        n: cohort.states.len(),
        curve,
        curve_stderr,
        mean_cum_reward,
        stderr_cum_reward,
    }
}

/// Rolls `policy` out on `n_test` fresh patients. With
/// `shared_initial_states` every policy evaluated under the same seed sees
/// the same initial states; otherwise the initial draws depend on `label`.
pub fn evaluate_policy(
    params: &CancerParams,
    policy: DosePolicy<'_>,
    label: &str,
    n_test: usize,
    seed: u64,
    shared_initial_states: bool,
) -> Result<EvalResult> {
    let init = if shared_initial_states {
        INIT_LABEL.to_string()
    } else {
        format!("{INIT_LABEL}/{label}")
    };
    let cohort = simulate_with_init(params, policy, n_test, seed, &init)?;
    Ok(summarize(label, &cohort))
}

pub fn constant_label(dose: f64) -> String {
    format!("const_{dose:.1}")
}

/// One evaluation per grid dose, all with shared initial states.
pub fn constant_dose_baselines(params: &CancerParams, n_test: usize, seed: u64) -> Result<Vec<EvalResult>> {
    params
        .dose_grid
        .iter()
        .enumerate()
        .map(|(k, &d)| evaluate_policy(params, DosePolicy::Constant(k), &constant_label(d), n_test, seed, true))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandCurve {
    pub epsilon: f64,
    pub optimal: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub overlays: Vec<(String, Vec<f64>)>,
}

/// Band `[opt, opt + eps * |opt|]` per month around the optimal curve.
pub fn epsilon_band_curve(opt: &EvalResult, policies: &[EvalResult], epsilon: f64) -> Result<BandCurve> {
    let months = opt.curve.len();
    if let Some(bad) = policies.iter().find(|p| p.curve.len() != months) {
        return Err(Error::Dimension {
            expected: months,
            got: bad.curve.len(),
        });
    }
    Ok(BandCurve {
        epsilon,
        optimal: opt.curve.clone(),
        lo: opt.curve.clone(),
        hi: opt.curve.iter().map(|v| v + epsilon * v.abs()).collect(),
        overlays: policies.iter().map(|p| (p.label.clone(), p.curve.clone())).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlipPoint {
    pub x0: f64,
    pub x1: f64,
    pub blip: f64,
}

fn binary_indices(model: &FittedQ) -> Result<(usize, usize)> {
    let space = model.action_space();
    match (space.index_of(1.0), space.index_of(-1.0)) {
        (Some(plus), Some(minus)) if space.len() == 2 => Ok((plus, minus)),
        _ => Err(Error::Spec("blip needs a binary {-1, +1} action space".into())),
    }
}

/// Estimated blip `Q(x, +1) - Q(x, -1)`.
pub fn estimated_blip(model: &FittedQ, features: &[f64]) -> Result<f64> {
    let (plus, minus) = binary_indices(model)?;
    let q = model.predict_all_actions(features)?;
    Ok(q[plus] - q[minus])
}

/// Blip over an `r x r` grid of `(x0, x1)` on `[-1, 1]^2`, other covariates
/// held at `fixed` (whose first two entries are ignored).
pub fn blip_surface(model: &FittedQ, resolution: usize, fixed: &[f64]) -> Result<Vec<BlipPoint>> {
    if fixed.len() != model.feature_dim() || fixed.len() < 2 {
        return Err(Error::Dimension {
            expected: model.feature_dim(),
            got: fixed.len(),
        });
    }
    let axis: Vec<f64> = match resolution {
        0 => Vec::new(),
        1 => vec![0.0],
        r => (0..r).map(|i| -1.0 + 2.0 * i as f64 / (r - 1) as f64).collect(),
    };
    let mut x = fixed.to_vec();
    let mut out = Vec::with_capacity(axis.len() * axis.len());
    for &x0 in &axis {
        for &x1 in &axis {
            x[0] = x0;
            x[1] = x1;
            out.push(BlipPoint {
                x0,
                x1,
                blip: estimated_blip(model, &x)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub epsilon: f64,
    pub n_test: usize,
    pub misclassified_total: usize,
    pub misclassified_in_band: usize,
    /// Share of test points with `|blip| <= epsilon`.
    pub band_fraction: f64,
    /// Accuracy among points outside the band (1 when none are outside).
    pub accuracy_outside_band: f64,
}

impl BandStats {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.misclassified_total as f64 / self.n_test as f64
    }
}

/// Misclassification against `sign(x0 + x1)` and its location relative to
/// the band `|blip| <= epsilon`.
pub fn band_stats(model: &FittedQ, test_set: &OfflineDataset, epsilon: f64) -> Result<BandStats> {
    let (plus, minus) = binary_indices(model)?;
    let labels = model.action_space().values();
    let mut in_band = 0usize;
    let mut outside = 0usize;
    let mut wrong = 0usize;
    let mut wrong_in_band = 0usize;
    let mut wrong_outside = 0usize;
    for (_, rec) in test_set.records_at(0) {
        let q = model.predict_all_actions(&rec.covariates)?;
        let blip = q[plus] - q[minus];
        let chosen = labels[argmax(&q)];
        let miss = chosen != itr_optimal_label(&rec.covariates);
        let banded = blip.abs() <= epsilon;
        if banded {
            in_band += 1;
        } else {
            outside += 1;
        }
        if miss {
            wrong += 1;
            if banded {
                wrong_in_band += 1;
            } else {
                wrong_outside += 1;
            }
        }
    }
    let n_test = in_band + outside;
    if n_test == 0 {
        return Err(Error::Dataset("empty test set".into()));
    }
    Ok(BandStats {
        epsilon,
        n_test,
        misclassified_total: wrong,
        misclassified_in_band: wrong_in_band,
        band_fraction: in_band as f64 / n_test as f64,
        accuracy_outside_band: if outside == 0 {
            1.0
        } else {
            1.0 - wrong_outside as f64 / outside as f64
        },
    })
}

pub fn write_results_csv(results: &[EvalResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "policy_label",
        "month",
        "mean_combined",
        "stderr_combined",
        "mean_cum_reward",
    ])?;
    for r in results {
        for (t, (m, se)) in r.curve.iter().zip(&r.curve_stderr).enumerate() {
            w.write_record([
                r.label.clone(),
                t.to_string(),
                m.to_string(),
                se.to_string(),
                r.mean_cum_reward.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_band_csv(band: &BandCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["month", "band_lo", "band_hi"])?;
    for (t, (lo, hi)) in band.lo.iter().zip(&band.hi).enumerate() {
        w.write_record([t.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_blip_csv(points: &[BlipPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "x1", "blip"])?;
    for p in points {
        w.write_record([p.x0.to_string(), p.x1.to_string(), p.blip.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_band_stats_csv(stats: &[BandStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

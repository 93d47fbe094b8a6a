//! Q-function regression backends.
//!
//! * [`DesignMode::InteractionLinear`]: least squares on
//!   `[1, x_0..x_{d-1}, a, a*x_0..a*x_{d-1}]`, where `a` is the numeric action
//!   label. With labels `-1/+1` this is the usual treatment-interaction model.
//! * [`DesignMode::PerActionKernel`]: one RBF kernel ridge regression per
//!   action, `Q(h, a) = mean_a + sum_i w_i exp(-gamma |h - h_i|^2)` over the
//!   rows that received `a`.
//!
//! Both solve SPD systems after adding `ridge * I`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ActionSpace;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Version written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DesignMode {
    InteractionLinear,
    /// `bandwidth` is the `gamma` in `exp(-gamma |u - v|^2)`; `None` means
    /// `1 / d` for `d` input features.
    PerActionKernel {
        bandwidth: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub mode: DesignMode,
    pub ridge: f64,
}

impl DesignSpec {
    pub fn interaction_linear(ridge: f64) -> Self {
        Self {
            mode: DesignMode::InteractionLinear,
            ridge,
        }
    }

    pub fn kernel(bandwidth: Option<f64>, ridge: f64) -> Self {
        Self {
            mode: DesignMode::PerActionKernel { bandwidth },
            ridge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(Error::Spec(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if let DesignMode::PerActionKernel { bandwidth: Some(g) } = self.mode {
            if g <= 0.0 || !g.is_finite() {
                return Err(Error::Spec(format!("kernel bandwidth must be > 0, got {g}")));
            }
        }
        Ok(())
    }
}

impl Default for DesignSpec {
    /// Kernel ridge with `gamma = 1/d` and unit ridge.
    fn default() -> Self {
        Self::kernel(None, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelComponent {
    pub inputs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl KernelComponent {
    fn eval(&self, gamma: f64, x: &[f64]) -> f64 {
        let mut s = self.offset;
        for (xi, w) in self.inputs.iter().zip(&self.weights) {
            s += w * rbf(gamma, xi, x);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Params {
    InteractionLinear {
        coefficients: Vec<f64>,
    },
    PerActionKernel {
        gamma: f64,
        per_action: Vec<KernelComponent>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n_rows: usize,
    /// Actions with no training rows; their predictor is the global target mean.
    pub fallback_actions: Vec<usize>,
}

/// Immutable fitted Q-function over one stage's action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedQ {
    format_version: u32,
    action_space: ActionSpace,
    feature_dim: usize,
    params: Params,
    meta: FitMeta,
}

fn rbf(gamma: f64, u: &[f64], v: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

fn interaction_row(x: &[f64], a: f64, row: &mut Vec<f64>) {
    row.clear();
    row.push(1.0);
    row.extend_from_slice(x);
    row.push(a);
    row.extend(x.iter().map(|v| a * v));
}

fn check_inputs(features: &[Vec<f64>], actions: &[usize], targets: &[f64], space: &ActionSpace) -> Result<usize> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Dataset("regression needs at least one row".into()));
    }
    if actions.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: actions.len(),
        });
    }
    if targets.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: targets.len(),
        });
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= space.len()) {
        return Err(Error::ActionOutOfRange {
            index: a,
            size: space.len(),
        });
    }
    Ok(d)
}

fn fit_interaction_linear(
    features: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    space: &ActionSpace,
    ridge: f64,
) -> Result<Params> {
    let d = features[0].len();
    let p = 2 * d + 2;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = Vec::with_capacity(p);
    for ((x, &a), &y) in features.iter().zip(actions).zip(targets) {
        interaction_row(x, space.value(a)?, &mut row);
        for i in 0..p {
            xty[i] += row[i] * y;
            for j in 0..=i {
                xtx[i * p + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[j * p + i] = xtx[i * p + j];
        }
        xtx[i * p + i] += ridge;
    }
    let chol = Cholesky::factor(&xtx, p).ok_or(Error::RankDeficient {
        rows: features.len(),
        cols: p,
    })?;
    Ok(Params::InteractionLinear {
        coefficients: chol.solve(&xty),
    })
}

fn fit_kernel_component(inputs: Vec<Vec<f64>>, targets: Vec<f64>, gamma: f64, ridge: f64) -> Result<KernelComponent> {
    let n = inputs.len();
    let offset = targets.iter().sum::<f64>() / n as f64;
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = rbf(gamma, &inputs[i], &inputs[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
        gram[i * n + i] += ridge;
    }
    let centered: Vec<f64> = targets.iter().map(|y| y - offset).collect();
    let chol = Cholesky::factor(&gram, n).ok_or(Error::RankDeficient { rows: n, cols: n })?;
    Ok(KernelComponent {
        weights: chol.solve(&centered),
        inputs,
        offset,
    })
}

/// Fits a Q-function on `(features, action index) -> target` rows.
pub fn fit(
    spec: &DesignSpec,
    features: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    action_space: &ActionSpace,
) -> Result<FittedQ> {
    spec.validate()?;
    let d = check_inputs(features, actions, targets, action_space)?;
    let mut meta = FitMeta {
        n_rows: features.len(),
        fallback_actions: Vec::new(),
    };
    let params = match spec.mode {
        DesignMode::InteractionLinear => fit_interaction_linear(features, actions, targets, action_space, spec.ridge)?,
        DesignMode::PerActionKernel { bandwidth } => {
            let gamma = bandwidth.unwrap_or(1.0 / d.max(1) as f64);
            let global_mean = targets.iter().sum::<f64>() / targets.len() as f64;
            let groups: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..action_space.len())
                .map(|k| {
                    let rows: Vec<usize> = (0..actions.len()).filter(|&i| actions[i] == k).collect();
                    (
                        rows.iter().map(|&i| features[i].clone()).collect(),
                        rows.iter().map(|&i| targets[i]).collect(),
                    )
                })
                .collect();
            meta.fallback_actions = groups
                .iter()
                .enumerate()
                .filter(|(_, (x, _))| x.is_empty())
                .map(|(k, _)| k)
                .collect();
            let per_action = groups
                .into_par_iter()
                .map(|(x, y)| {
                    if x.is_empty() {
                        Ok(KernelComponent {
                            inputs: Vec::new(),
                            weights: Vec::new(),
                            offset: global_mean,
                        })
                    } else {
                        fit_kernel_component(x, y, gamma, spec.ridge)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Params::PerActionKernel { gamma, per_action }
        }
    };
    Ok(FittedQ {
        format_version: MODEL_FORMAT_VERSION,
        action_space: action_space.clone(),
        feature_dim: d,
        params,
        meta,
    })
}

impl FittedQ {
    /// Linear model from explicit coefficients laid out as
    /// `[intercept, beta_x (d), beta_a, beta_ax (d)]`.
    pub fn interaction_linear(coefficients: Vec<f64>, action_space: ActionSpace) -> Result<Self> {
        if coefficients.len() < 2 || !coefficients.len().is_multiple_of(2) {
            return Err(Error::Spec(format!(
                "interaction coefficient vector must have even length >= 2, got {}",
                coefficients.len()
            )));
        }
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            action_space,
            feature_dim: coefficients.len() / 2 - 1,
            params: Params::InteractionLinear { coefficients },
            meta: FitMeta::default(),
        })
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.action_space
    }

    pub fn n_actions(&self) -> usize {
        self.action_space.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.params {
            Params::InteractionLinear { coefficients } => Some(coefficients),
            Params::PerActionKernel { .. } => None,
        }
    }

    /// The `a * x_j` coefficients of an interaction-linear model.
    pub fn interaction_coefficients(&self) -> Option<&[f64]> {
        self.coefficients().map(|c| &c[self.feature_dim + 2..])
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn eval_unchecked(&self, features: &[f64], action_index: usize) -> f64 {
        match &self.params {
            Params::InteractionLinear { coefficients } => {
                let d = self.feature_dim;
                let a = self.action_space.values()[action_index];
                let mut s = coefficients[0] + a * coefficients[d + 1];
                for (j, x) in features.iter().enumerate() {
                    s += x * (coefficients[1 + j] + a * coefficients[d + 2 + j]);
                }
                s
            }
            Params::PerActionKernel { gamma, per_action } => per_action[action_index].eval(*gamma, features),
        }
    }

    pub fn predict(&self, features: &[f64], action_index: usize) -> Result<f64> {
        self.check_features(features)?;
        if action_index >= self.n_actions() {
            return Err(Error::ActionOutOfRange {
                index: action_index,
                size: self.n_actions(),
            });
        }
        Ok(self.eval_unchecked(features, action_index))
    }

    pub fn predict_all_actions(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        Ok((0..self.n_actions())
            .map(|k| self.eval_unchecked(features, k))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> ActionSpace {
        ActionSpace::new(vec![-1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = FittedQ::interaction_linear(vec![0.0; 22], binary()).unwrap();
        assert_eq!(m.predict(&[0.3; 10], 1).unwrap(), 0.0);
        assert_eq!(m.predict_all_actions(&[-0.7; 10]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_row_without_ridge_is_rank_deficient() {
        let err = fit(
            &DesignSpec::interaction_linear(0.0),
            &[vec![0.1; 10]],
            &[1],
            &[2.0],
            &binary(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rows: 1, cols: 22 }));
        assert!(err.to_string().contains("ridge > 0"));
    }

    #[test]
    fn kernel_interpolates_training_points_as_ridge_vanishes() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![-0.5, 1.5],
            vec![2.0, 2.0],
            vec![0.3, -1.0],
        ];
        let a = vec![0, 0, 0, 1, 1];
        let y = vec![1.0, -2.0, 0.5, 3.0, 7.0];
        let m = fit(
            &DesignSpec::kernel(None, 1e-10),
            &x,
            &a,
            &y,
            &ActionSpace::indexed(2).unwrap(),
        )
        .unwrap();
        for i in 0..x.len() {
            assert!((m.predict(&x[i], a[i]).unwrap() - y[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn unobserved_action_falls_back_to_global_mean() {
        let x = vec![vec![0.0], vec![1.0]];
        let m = fit(
            &DesignSpec::kernel(Some(1.0), 1.0),
            &x,
            &[0, 0],
            &[2.0, 4.0],
            &ActionSpace::indexed(3).unwrap(),
        )
        .unwrap();
        assert_eq!(m.meta().fallback_actions, vec![1, 2]);
        assert_eq!(m.predict(&[5.0], 2).unwrap(), 3.0);
    }

    #[test]
    fn prediction_errors() {
        let m = FittedQ::interaction_linear(vec![0.0; 6], binary()).unwrap();
        assert!(matches!(
            m.predict(&[1.0], 0),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(matches!(m.predict(&[1.0, 2.0], 2), Err(Error::ActionOutOfRange { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(DesignSpec::kernel(Some(0.0), 1.0).validate().is_err());
        assert!(DesignSpec::kernel(Some(-1.0), 1.0).validate().is_err());
        assert!(DesignSpec::interaction_linear(-1e-3).validate().is_err());
        assert!(DesignSpec::default().validate().is_ok());
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![0.2, 0.2]];
        let m = fit(
            &DesignSpec::default(),
            &x,
            &[0, 1, 1],
            &[1.0, 2.0, 3.0],
            &ActionSpace::indexed(2).unwrap(),
        )
        .unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"format_version\":1"));
        assert!(text.contains("per-action-kernel"));
        assert_eq!(FittedQ::from_json(&text).unwrap(), m);
        let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
        assert!(matches!(FittedQ::from_json(&bumped), Err(Error::Format(_))));
    }
}

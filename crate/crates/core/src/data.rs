//! Longitudinal decision data: action spaces, patient trajectories and
//! offline cohorts, with validation and the cohort CSV format.
//!
//! A cohort CSV has one row per patient-stage:
//!
//! ```text
//! patient_id,stage,cov_0,...,cov_{d-1},action_index,reward
//! ```
//!
//! Horizon and action labels live in a `key=value` sidecar next to the CSV
//! (`<file>.meta`). Without a sidecar the horizon is the largest stage seen
//! and each stage's action space is `0..=max_action_index` with the index as
//! its label.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite, ordered set of action labels. Index `k` refers to `values[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    values: Vec<f64>,
}

impl ActionSpace {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("action space is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite action label {v}")));
        }
        for (i, a) in values.iter().enumerate() {
            if values[..i].contains(a) {
                return Err(Error::Dataset(format!("duplicate action label {a}")));
            }
        }
        Ok(Self { values })
    }

    /// Integer-coded actions `0..k`.
    pub fn indexed(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> Result<f64> {
        self.values.get(index).copied().ok_or(Error::ActionOutOfRange {
            index,
            size: self.len(),
        })
    }

    /// Index of the label closest to `value`, if one lies within `1e-9`.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.values.iter().position(|v| (v - value).abs() <= 1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub covariates: Vec<f64>,
    pub action_index: usize,
    pub reward: f64,
}

impl StageRecord {
    pub fn new(covariates: Vec<f64>, action_index: usize, reward: f64) -> Self {
        Self {
            covariates,
            action_index,
            reward,
        }
    }
}

/// Stages `0..=terminal_stage` of one patient. A trajectory shorter than the
/// cohort horizon ended early (death); nothing is recorded after that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTrajectory {
    id: u64,
    stages: Vec<StageRecord>,
}

impl PatientTrajectory {
    pub fn new(id: u64, stages: Vec<StageRecord>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Dataset(format!("patient {id} has no stages")));
        }
        Ok(Self { id, stages })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn stage(&self, t: usize) -> Option<&StageRecord> {
        self.stages.get(t)
    }

    pub fn terminal_stage(&self) -> usize {
        self.stages.len() - 1
    }

    /// True when the trajectory ends at stage `t` while the cohort continues.
    pub fn ended_at(&self, t: usize, horizon: usize) -> bool {
        t < horizon && self.terminal_stage() == t
    }

    pub fn total_reward(&self) -> f64 {
        self.stages.iter().map(|s| s.reward).sum()
    }
}

/// Regression input at stage `t`: the stage-`t` covariates (Markov histories).
pub fn history_features(trajectory: &PatientTrajectory, t: usize) -> Result<&[f64]> {
    trajectory
        .stage(t)
        .map(|s| s.covariates.as_slice())
        .ok_or(Error::StageOutOfRange {
            stage: t,
            terminal: trajectory.terminal_stage(),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    patients: Vec<PatientTrajectory>,
    horizon: usize,
    action_spaces: Vec<ActionSpace>,
    feature_dims: Vec<usize>,
    fixed_horizon: bool,
}

impl OfflineDataset {
    /// Checks structure only; content is checked by [`validate`].
    pub fn new(
        patients: Vec<PatientTrajectory>,
        horizon: usize,
        action_spaces: Vec<ActionSpace>,
        feature_dims: Vec<usize>,
    ) -> Result<Self> {
        if patients.is_empty() {
            return Err(Error::Dataset("dataset has no patients".into()));
        }
        if action_spaces.len() != horizon + 1 {
            return Err(Error::Dataset(format!(
                "expected {} action spaces for horizon {horizon}, got {}",
                horizon + 1,
                action_spaces.len()
            )));
        }
        if feature_dims.len() != horizon + 1 {
            return Err(Error::Dataset(format!(
                "expected {} feature dimensions for horizon {horizon}, got {}",
                horizon + 1,
                feature_dims.len()
            )));
        }
        Ok(Self {
            patients,
            horizon,
            action_spaces,
            feature_dims,
            fixed_horizon: false,
        })
    }

    /// Same action space and feature dimension at every stage.
    pub fn uniform(
        patients: Vec<PatientTrajectory>,
        horizon: usize,
        actions: ActionSpace,
        feature_dim: usize,
    ) -> Result<Self> {
        Self::new(
            patients,
            horizon,
            vec![actions; horizon + 1],
            vec![feature_dim; horizon + 1],
        )
    }

    /// Marks the cohort as fixed-horizon: every trajectory must reach the
    /// horizon (checked by [`validate`]).
    pub fn with_fixed_horizon(mut self, fixed: bool) -> Self {
        self.fixed_horizon = fixed;
        self
    }

    pub fn patients(&self) -> &[PatientTrajectory] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_fixed_horizon(&self) -> bool {
        self.fixed_horizon
    }

    pub fn action_space(&self, t: usize) -> &ActionSpace {
        &self.action_spaces[t]
    }

    pub fn action_spaces(&self) -> &[ActionSpace] {
        &self.action_spaces
    }

    pub fn feature_dim(&self, t: usize) -> usize {
        self.feature_dims[t]
    }

    pub fn feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    /// `(patient position, record)` for every patient observed at stage `t`.
    pub fn records_at(&self, t: usize) -> impl Iterator<Item = (usize, &StageRecord)> {
        self.patients
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.stage(t).map(|r| (i, r)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IssueKind {
    ActionOutOfRange { index: usize, size: usize },
    DimensionMismatch { expected: usize, got: usize },
    BeyondHorizon { terminal: usize },
    TruncatedFixedHorizon { terminal: usize },
    NonFinite,
    EmptyStage,
    DegenerateActionSupport { action: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub severity: Severity,
    pub patient: Option<u64>,
    pub stage: Option<usize>,
    pub kind: IssueKind,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            IssueKind::ActionOutOfRange { index, size } => {
                format!("action out of range ({index} >= {size})")
            }
            IssueKind::DimensionMismatch { expected, got } => {
                format!("covariate dimension mismatch (expected {expected}, got {got})")
            }
            IssueKind::BeyondHorizon { terminal } => {
                format!("trajectory reaches stage {terminal}, beyond the horizon")
            }
            IssueKind::TruncatedFixedHorizon { terminal } => {
                format!("horizon mismatch: trajectory ends at stage {terminal} in a fixed-horizon cohort")
            }
            IssueKind::NonFinite => "non-finite covariate or reward".to_string(),
            IssueKind::EmptyStage => "empty stage".to_string(),
            IssueKind::DegenerateActionSupport { action } => {
                format!("degenerate action support (only action {action} observed)")
            }
        };
        match (self.patient, self.stage) {
            (Some(p), Some(t)) => write!(f, "patient {p}, stage {t}: {what}"),
            (Some(p), None) => write!(f, "patient {p}: {what}"),
            (None, Some(t)) => write!(f, "stage {t}: {what}"),
            (None, None) => f.write_str(&what),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    /// Converts the first error into an [`Error::Dataset`].
    pub fn into_result(self) -> Result<Vec<Issue>> {
        if let Some(e) = self.errors().next() {
            return Err(Error::Dataset(e.to_string()));
        }
        Ok(self.issues)
    }
}

pub fn validate(dataset: &OfflineDataset) -> ValidationReport {
    let mut issues = Vec::new();
    let horizon = dataset.horizon();
    let mut push = |severity, patient, stage, kind| {
        issues.push(Issue {
            severity,
            patient,
            stage,
            kind,
        })
    };

    for p in dataset.patients() {
        let terminal = p.terminal_stage();
        if terminal > horizon {
            push(
                Severity::Error,
                Some(p.id()),
                None,
                IssueKind::BeyondHorizon { terminal },
            );
        } else if dataset.is_fixed_horizon() && terminal < horizon {
            push(
                Severity::Error,
                Some(p.id()),
                None,
                IssueKind::TruncatedFixedHorizon { terminal },
            );
        }
        for (t, rec) in p.stages().iter().enumerate().take(horizon + 1) {
            let size = dataset.action_space(t).len();
            if rec.action_index >= size {
                push(
                    Severity::Error,
                    Some(p.id()),
                    Some(t),
                    IssueKind::ActionOutOfRange {
                        index: rec.action_index,
                        size,
                    },
                );
            }
            let expected = dataset.feature_dim(t);
            if rec.covariates.len() != expected {
                push(
                    Severity::Error,
                    Some(p.id()),
                    Some(t),
                    IssueKind::DimensionMismatch {
                        expected,
                        got: rec.covariates.len(),
                    },
                );
            }
            if !rec.reward.is_finite() || rec.covariates.iter().any(|c| !c.is_finite()) {
                push(Severity::Error, Some(p.id()), Some(t), IssueKind::NonFinite);
            }
        }
    }

    for t in 0..=horizon {
        let observed: BTreeSet<usize> = dataset.records_at(t).map(|(_, r)| r.action_index).collect();
        match observed.len() {
            0 => push(Severity::Error, None, Some(t), IssueKind::EmptyStage),
            1 => push(
                Severity::Warning,
                None,
                Some(t),
                IssueKind::DegenerateActionSupport {
                    action: *observed.first().unwrap(),
                },
            ),
            _ => {}
        }
    }

    ValidationReport { issues }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the cohort CSV plus its `.meta` sidecar. Floats are written in
/// shortest round-trip form, so a reload is bit-exact.
pub fn save_csv(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let d = dataset.feature_dim(0);
    if dataset.feature_dims().iter().any(|&x| x != d) {
        return Err(Error::Dataset(
            "CSV export requires the same feature dimension at every stage".into(),
        ));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string(), "stage".to_string()];
    header.extend((0..d).map(|j| format!("cov_{j}")));
    header.push("action_index".into());
    header.push("reward".into());
    w.write_record(&header)?;
    for p in dataset.patients() {
        for (t, rec) in p.stages().iter().enumerate() {
            let mut row = vec![p.id().to_string(), t.to_string()];
            row.extend(rec.covariates.iter().map(|c| c.to_string()));
            row.push(rec.action_index.to_string());
            row.push(rec.reward.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut meta = format!(
        "horizon={}\nfixed_horizon={}\n",
        dataset.horizon(),
        dataset.is_fixed_horizon()
    );
    for (t, a) in dataset.action_spaces().iter().enumerate() {
        meta.push_str(&format!("actions.{t}={}\n", join_floats(a.values())));
    }
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

struct Sidecar {
    horizon: usize,
    fixed_horizon: bool,
    actions: HashMap<usize, Vec<f64>>,
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&meta_path)?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: meta_path.clone(),
        row,
        message,
    };
    let mut horizon = None;
    let mut fixed_horizon = false;
    let mut actions = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(n + 1, format!("expected key=value, got {line:?}")))?;
        match key.trim() {
            "horizon" => {
                horizon = Some(
                    value
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(n + 1, format!("horizon: {e}")))?,
                )
            }
            "fixed_horizon" => {
                fixed_horizon = value
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(n + 1, format!("fixed_horizon: {e}")))?
            }
            k if k.starts_with("actions.") => {
                let t: usize = k["actions.".len()..]
                    .parse()
                    .map_err(|e| parse_err(n + 1, format!("{k}: {e}")))?;
                let vals = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(n + 1, format!("{k}: {e}")))?;
                actions.insert(t, vals);
            }
            other => return Err(parse_err(n + 1, format!("unknown key {other:?}"))),
        }
    }
    let horizon = horizon.ok_or_else(|| parse_err(0, "missing horizon".into()))?;
    Ok(Some(Sidecar {
        horizon,
        fixed_horizon,
        actions,
    }))
}

/// Reads a cohort CSV (and its sidecar when present) and validates it.
/// Rows of one patient must be contiguous and in stage order.
pub fn load_csv(path: &Path) -> Result<OfflineDataset> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing `{name}` column")))
    };
    let id_col = col("patient_id")?;
    let stage_col = col("stage")?;
    let action_col = col("action_index")?;
    let reward_col = col("reward")?;
    let mut cov_cols = Vec::new();
    while let Some(c) = headers.iter().position(|h| h == format!("cov_{}", cov_cols.len())) {
        cov_cols.push(c);
    }
    let d = cov_cols.len();

    let mut patients: Vec<(u64, Vec<StageRecord>)> = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let num = |c: usize, name: &str| {
            field(c)
                .parse::<f64>()
                .map_err(|e| parse_err(row, format!("{name}: {e}")))
        };
        let id: u64 = field(id_col)
            .parse()
            .map_err(|e| parse_err(row, format!("patient_id: {e}")))?;
        let stage: usize = field(stage_col)
            .parse()
            .map_err(|e| parse_err(row, format!("stage: {e}")))?;
        let action_index: usize = field(action_col)
            .parse()
            .map_err(|e| parse_err(row, format!("action_index: {e}")))?;
        let reward = num(reward_col, "reward")?;
        let covariates = cov_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| num(c, &format!("cov_{j}")))
            .collect::<Result<Vec<_>>>()?;

        let record = StageRecord::new(covariates, action_index, reward);
        match patients.last_mut() {
            Some((last, stages)) if *last == id => {
                if stage != stages.len() {
                    return Err(parse_err(
                        row,
                        format!("patient {id}: expected stage {}, got {stage}", stages.len()),
                    ));
                }
                stages.push(record);
            }
            _ => {
                if patients.iter().any(|(p, _)| *p == id) {
                    return Err(parse_err(row, format!("rows of patient {id} are not contiguous")));
                }
                if stage != 0 {
                    return Err(parse_err(row, format!("patient {id} does not start at stage 0")));
                }
                patients.push((id, vec![record]));
            }
        }
    }
    if patients.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }

    let max_stage = patients.iter().map(|(_, s)| s.len() - 1).max().unwrap_or(0);
    let sidecar = read_sidecar(path)?;
    let horizon = sidecar.as_ref().map_or(max_stage, |s| s.horizon);
    let mut action_spaces = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let declared = sidecar.as_ref().and_then(|s| s.actions.get(&t));
        let space = match declared {
            Some(values) => ActionSpace::new(values.clone())?,
            None => {
                let k = patients
                    .iter()
                    .filter_map(|(_, s)| s.get(t))
                    .map(|r| r.action_index + 1)
                    .max()
                    .unwrap_or(1);
                ActionSpace::indexed(k)?
            }
        };
        action_spaces.push(space);
    }

    let trajectories = patients
        .into_iter()
        .map(|(id, stages)| PatientTrajectory::new(id, stages))
        .collect::<Result<Vec<_>>>()?;
    let dataset = OfflineDataset::new(trajectories, horizon, action_spaces, vec![d; horizon + 1])?
        .with_fixed_horizon(sidecar.is_some_and(|s| s.fixed_horizon));
    validate(&dataset).into_result()?;
    Ok(dataset)
}

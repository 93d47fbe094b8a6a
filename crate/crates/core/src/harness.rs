//! Seeded end-to-end experiment runs that write CSV artifacts and a
//! `run.meta` file.
//!
//! Seeds for sub-results are derived from the run seed and a fixed label
//! (`itr/train`, `itr/test`, `cancer/train`, `cancer/test`) so each part can
//! be regenerated on its own. Artifacts are written to a staging directory
//! and moved into the output directory only after every file is written and
//! checked.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, save_csv};
use crate::envs::{simulate_cancer_cohort, simulate_itr, CancerParams, DosePolicy, ItrConfig, ITR_COVARIATES};
use crate::error::{Error, Result};
use crate::evalkit::{
    band_stats, blip_surface, constant_dose_baselines, epsilon_band_curve, evaluate_policy, write_band_csv,
    write_band_stats_csv, write_blip_csv, write_results_csv, EvalResult,
};
use crate::nearequiv::{backward_fit_near_equiv, policy_set, AdmissibilityMode, EpsilonConfig, NearEquivQStack};
use crate::qlearn::{backward_fit, QStack};
use crate::regression::DesignSpec;
use crate::rng::{stream, GENERATOR};
use crate::tabular::{compare, TabularMdp};

/// Largest tolerated oracle discrepancy.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Itr,
    Cancer,
    Oracle,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Itr => "itr",
            Self::Cancer => "cancer",
            Self::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub epsilons: Vec<f64>,
    pub mode: AdmissibilityMode,
    pub regression: DesignSpec,
    pub out: PathBuf,
    pub dry_run: bool,
    /// Grid points per axis of the blip surface.
    pub blip_resolution: usize,
    /// Oracle fixture horizon (0 or 1).
    pub oracle_horizon: usize,
    /// Perturbs the oracle data; used to check that failures are reported.
    pub corrupt: bool,
    /// Repetitions per fit when timing.
    pub timing_repeats: usize,
}

/// Optional overrides, as read from a TOML config file or the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub epsilons: Option<Vec<f64>>,
    pub mode: Option<AdmissibilityMode>,
    pub regression: Option<DesignSpec>,
    pub out: Option<PathBuf>,
    pub dry_run: Option<bool>,
    pub blip_resolution: Option<usize>,
    pub oracle_horizon: Option<usize>,
    pub corrupt: Option<bool>,
    pub timing_repeats: Option<usize>,
}

impl ConfigOverrides {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` win.
    pub fn merge(self, other: ConfigOverrides) -> Self {
        Self {
            seed: other.seed.or(self.seed),
            n_train: other.n_train.or(self.n_train),
            n_test: other.n_test.or(self.n_test),
            epsilons: other.epsilons.or(self.epsilons),
            mode: other.mode.or(self.mode),
            regression: other.regression.or(self.regression),
            out: other.out.or(self.out),
            dry_run: other.dry_run.or(self.dry_run),
            blip_resolution: other.blip_resolution.or(self.blip_resolution),
            oracle_horizon: other.oracle_horizon.or(self.oracle_horizon),
            corrupt: other.corrupt.or(self.corrupt),
            timing_repeats: other.timing_repeats.or(self.timing_repeats),
        }
    }
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let (n_train, n_test, mode, regression) = match experiment {
            Experiment::Itr => (
                1000,
                2000,
                AdmissibilityMode::Absolute,
                DesignSpec::interaction_linear(0.0),
            ),
            Experiment::Cancer => (500, 1000, AdmissibilityMode::Relative, DesignSpec::default()),
            Experiment::Oracle => (1, 1, AdmissibilityMode::Relative, TabularMdp::design()),
        };
        Self {
            experiment,
            seed: 2024,
            n_train,
            n_test,
            epsilons: vec![0.1, 0.3, 0.5, 0.9],
            mode,
            regression,
            out: PathBuf::from(format!("runs/{}", experiment.name())),
            dry_run: false,
            blip_resolution: 101,
            oracle_horizon: 1,
            corrupt: false,
            timing_repeats: 3,
        }
    }

    pub fn with_overrides(mut self, o: ConfigOverrides) -> Self {
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        apply!(
            seed,
            n_train,
            n_test,
            epsilons,
            mode,
            regression,
            out,
            dry_run,
            blip_resolution,
            oracle_horizon,
            corrupt,
            timing_repeats
        );
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be >= 1".into()));
        }
        for &e in &self.epsilons {
            EpsilonConfig::new(e, self.mode)?;
        }
        self.regression.validate()?;
        if self.experiment == Experiment::Itr && self.blip_resolution == 0 {
            return Err(Error::Config("blip_resolution must be >= 1".into()));
        }
        if self.oracle_horizon > 1 {
            return Err(Error::Config("oracle_horizon must be 0 or 1".into()));
        }
        if self.timing_repeats == 0 {
            return Err(Error::Config("timing_repeats must be >= 1".into()));
        }
        Ok(())
    }

    fn epsilon_configs(&self) -> Result<Vec<EpsilonConfig>> {
        self.epsilons
            .iter()
            .map(|&e| EpsilonConfig::new(e, self.mode))
            .collect()
    }
}

/// Seed for a named sub-result of a run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    stream(seed, label, 0).next_u64()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    /// `(key, value)` pairs also written to `run.meta`.
    pub metadata: Vec<(String, String)>,
    pub timings: Vec<FitTiming>,
    pub oracle: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitTiming {
    pub epsilon: f64,
    pub m: usize,
    pub classical_seconds: f64,
    pub near_equiv_seconds: f64,
}

impl FitTiming {
    pub fn ratio(&self) -> f64 {
        self.near_equiv_seconds / self.classical_seconds
    }
}

/// Median wall time of `repeats` calls, with the last result.
pub fn timed<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok((last.expect("at least one repeat"), times[times.len() / 2]))
}

struct Staging {
    dir: PathBuf,
    out: PathBuf,
    files: Vec<String>,
    done: bool,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        let name = out
            .file_name()
            .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
        let parent = out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
            done: false,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn commit(mut self) -> Result<Vec<String>> {
        for f in &self.files {
            if !self.dir.join(f).is_file() {
                return Err(Error::Config(format!("artifact {f} was not written")));
            }
        }
        fs::create_dir_all(&self.out)?;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            fs::rename(entry.path(), self.out.join(entry.file_name()))?;
        }
        fs::remove_dir_all(&self.dir)?;
        self.done = true;
        Ok(std::mem::take(&mut self.files))
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn eps_tag(e: f64) -> String {
    format!("{e}")
}

fn write_meta(path: &Path, cfg: &RunConfig, extra: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "experiment={}", cfg.experiment.name());
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "n_train={}", cfg.n_train);
    let _ = writeln!(s, "n_test={}", cfg.n_test);
    let _ = writeln!(
        s,
        "epsilons={}",
        cfg.epsilons.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s, "mode={}", cfg.mode);
    let _ = writeln!(s, "regression={}", serde_json::to_string(&cfg.regression)?);
    let _ = writeln!(s, "blip_resolution={}", cfg.blip_resolution);
    let _ = writeln!(s, "oracle_horizon={}", cfg.oracle_horizon);
    let _ = writeln!(s, "rng={GENERATOR}");
    for (k, v) in extra {
        let _ = writeln!(s, "{k}={v}");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Single-stage experiment: fit, blip surface, band statistics per epsilon.
pub fn cmd_itr(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.dry_run {
        return Ok(RunSummary::default());
    }
    let eps = cfg.epsilon_configs()?;
    let mut stage = Staging::new(&cfg.out)?;
    let mut meta = Vec::new();

    let train = simulate_itr(&ItrConfig::new(cfg.n_train, derive_seed(cfg.seed, "itr/train")))?;
    let test = simulate_itr(&ItrConfig::new(cfg.n_test, derive_seed(cfg.seed, "itr/test")))?;
    let train_path = stage.path("train.csv");
    stage.files.push("train.csv.meta".into());
    save_csv(&train, &train_path)?;
    let test_path = stage.path("test.csv");
    stage.files.push("test.csv.meta".into());
    save_csv(&test, &test_path)?;

    let (stack, fit_seconds) = timed(1, || backward_fit(&train, &cfg.regression))?;
    let model = stack.model(0);
    fs::write(stage.path("model.json"), stack.to_json()?)?;
    meta.push(("fit_seconds".into(), fit_seconds.to_string()));

    let surface = blip_surface(model, cfg.blip_resolution, &[0.0; ITR_COVARIATES])?;
    write_blip_csv(&surface, &stage.path("blip_surface.csv"))?;

    let mut stats = Vec::with_capacity(eps.len());
    for e in &eps {
        stats.push(band_stats(model, &test, e.epsilon())?);
        let ne = backward_fit_near_equiv(&train, &cfg.regression, e)?;
        ne.write_admissible_csv(&stage.path(&format!("admissible_eps{}.csv", eps_tag(e.epsilon()))))?;
        meta.push((format!("m_eps{}", eps_tag(e.epsilon())), ne.m().to_string()));
    }
    write_band_stats_csv(&stats, &stage.path("band_stats.csv"))?;

    // Check the cohort files load back to what was simulated.
    if load_csv(&train_path)? != train || load_csv(&test_path)? != test {
        return Err(Error::Config("cohort CSV did not round-trip".into()));
    }
    write_meta(&stage.path("run.meta"), cfg, &meta)?;
    let artifacts = stage.commit()?;
    Ok(RunSummary {
        artifacts,
        metadata: meta,
        ..Default::default()
    })
}

/// Everything produced for one epsilon of the cancer experiment.
pub struct CancerPanel {
    pub stack: NearEquivQStack,
    pub timing: FitTiming,
    pub policies: Vec<EvalResult>,
}

/// Multi-stage experiment: classical and near-equivalent fits, evaluation
/// against constant doses, epsilon bands and timings.
pub fn cmd_cancer(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.dry_run {
        return Ok(RunSummary::default());
    }
    let eps = cfg.epsilon_configs()?;
    let params = CancerParams::default();
    let train_seed = derive_seed(cfg.seed, "cancer/train");
    let test_seed = derive_seed(cfg.seed, "cancer/test");
    let mut stage = Staging::new(&cfg.out)?;
    let mut meta = Vec::new();

    let cohort = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, cfg.n_train, train_seed)?;
    let train_path = stage.path("train_cohort.csv");
    stage.files.push("train_cohort.csv.meta".into());
    save_csv(&cohort.dataset, &train_path)?;
    cohort.write_trajectory_csv(&params, &stage.path("train_trajectories.csv"))?;

    let (classical, classical_seconds): (QStack, f64) =
        timed(cfg.timing_repeats, || backward_fit(&cohort.dataset, &cfg.regression))?;
    fs::write(stage.path("classical_qstack.json"), classical.to_json()?)?;
    meta.push(("classical_fit_seconds".into(), classical_seconds.to_string()));

    let baselines = constant_dose_baselines(&params, cfg.n_test, test_seed)?;
    let opt = evaluate_policy(
        &params,
        DosePolicy::Rule(&classical.greedy()),
        "opt",
        cfg.n_test,
        test_seed,
        true,
    )?;

    let mut timings = Vec::with_capacity(eps.len());
    for e in &eps {
        let tag = eps_tag(e.epsilon());
        let (ne, ne_seconds) = timed(cfg.timing_repeats, || {
            backward_fit_near_equiv(&cohort.dataset, &cfg.regression, e)
        })?;
        let set = policy_set(&ne);
        let policies = set
            .policies
            .iter()
            .map(|p| {
                evaluate_policy(
                    &params,
                    DosePolicy::Rule(p),
                    &format!("ne{}", p.column() + 1),
                    cfg.n_test,
                    test_seed,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut all = baselines.clone();
        all.push(opt.clone());
        all.extend(policies.iter().cloned());
        write_results_csv(&all, &stage.path(&format!("curves_eps{tag}.csv")))?;
        let band = epsilon_band_curve(&opt, &policies, e.epsilon())?;
        write_band_csv(&band, &stage.path(&format!("band_eps{tag}.csv")))?;
        ne.write_admissible_csv(&stage.path(&format!("admissible_eps{tag}.csv")))?;
        fs::write(stage.path(&format!("near_equiv_eps{tag}.json")), ne.to_json()?)?;

        let timing = FitTiming {
            epsilon: e.epsilon(),
            m: ne.m(),
            classical_seconds,
            near_equiv_seconds: ne_seconds,
        };
        meta.push((format!("m_eps{tag}"), ne.m().to_string()));
        meta.push((format!("near_equiv_fit_seconds_eps{tag}"), ne_seconds.to_string()));
        meta.push((format!("fit_time_ratio_eps{tag}"), timing.ratio().to_string()));
        timings.push(timing);
    }

    let mut w = csv::Writer::from_path(stage.path("timing.csv"))?;
    w.write_record(["epsilon", "m", "classical_seconds", "near_equiv_seconds", "ratio"])?;
    for t in &timings {
        w.write_record([
            t.epsilon.to_string(),
            t.m.to_string(),
            t.classical_seconds.to_string(),
            t.near_equiv_seconds.to_string(),
            t.ratio().to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);

    if load_csv(&train_path)? != cohort.dataset {
        return Err(Error::Config("training cohort CSV did not round-trip".into()));
    }
    meta.push(("train_seed".into(), train_seed.to_string()));
    meta.push(("test_seed".into(), test_seed.to_string()));
    write_meta(&stage.path("run.meta"), cfg, &meta)?;
    let artifacts = stage.commit()?;
    Ok(RunSummary {
        artifacts,
        metadata: meta,
        timings,
        oracle: None,
    })
}

/// Tabular check of backward Q-learning against dynamic programming.
/// Fails when the discrepancy exceeds [`ORACLE_TOLERANCE`].
pub fn cmd_oracle(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.dry_run {
        return Ok(RunSummary::default());
    }
    let mdp = if cfg.oracle_horizon == 0 {
        TabularMdp::single_stage()
    } else {
        TabularMdp::fixture()
    };
    let mut data = mdp.exhaustive_dataset()?;
    if cfg.corrupt {
        data = corrupt_first_reward(&data)?;
    }
    let stack = backward_fit(&data, &TabularMdp::design())?;
    let report = compare(&stack, &mdp)?;
    let meta = vec![
        ("max_discrepancy".to_string(), report.max_discrepancy.to_string()),
        ("n_values".to_string(), report.n_values.to_string()),
        ("tolerance".to_string(), ORACLE_TOLERANCE.to_string()),
    ];
    if report.max_discrepancy.is_nan() || report.max_discrepancy >= ORACLE_TOLERANCE {
        return Err(Error::Config(format!(
            "oracle discrepancy {:e} exceeds tolerance {ORACLE_TOLERANCE:e}",
            report.max_discrepancy
        )));
    }
    let mut stage = Staging::new(&cfg.out)?;
    write_meta(&stage.path("run.meta"), cfg, &meta)?;
    let artifacts = stage.commit()?;
    Ok(RunSummary {
        artifacts,
        metadata: meta,
        oracle: Some(report.max_discrepancy),
        ..Default::default()
    })
}

fn corrupt_first_reward(data: &crate::data::OfflineDataset) -> Result<crate::data::OfflineDataset> {
    use crate::data::{OfflineDataset, PatientTrajectory};
    let mut patients = data.patients().to_vec();
    let first = &patients[0];
    let mut stages = first.stages().to_vec();
    stages[0].reward += 1.0;
    patients[0] = PatientTrajectory::new(first.id(), stages)?;
    Ok(OfflineDataset::new(
        patients,
        data.horizon(),
        data.action_spaces().to_vec(),
        data.feature_dims().to_vec(),
    )?
    .with_fixed_horizon(data.is_fixed_horizon()))
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    match cfg.experiment {
        Experiment::Itr => cmd_itr(cfg),
        Experiment::Cancer => cmd_cancer(cfg),
        Experiment::Oracle => cmd_oracle(cfg),
    }
}

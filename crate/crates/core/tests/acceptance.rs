//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! ```bash
//! cargo test --release -p nearq --test acceptance
//! ```

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nearq::data::{load_csv, save_csv};
use nearq::envs::{simulate_cancer_cohort, simulate_itr, CancerParams, DosePolicy, ItrConfig};
use nearq::evalkit::{band_stats, constant_dose_baselines, evaluate_policy, EvalResult};
use nearq::harness::{derive_seed, timed};
use nearq::nearequiv::{
    admissible_actions, backward_fit_near_equiv, decisions_along, policy_set, select_and_pad, AdmissibilityMode,
};
use nearq::qlearn::backward_fit;
use nearq::tabular::{compare, TabularMdp};
use nearq::{DesignSpec, EpsilonConfig, OfflineDataset, Policy};

const EPSILONS: [f64; 4] = [0.1, 0.3, 0.5, 0.9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn policies_agree(data: &OfflineDataset, a: &dyn Policy, b: &dyn Policy) -> nearq::Result<bool> {
    for p in data.patients() {
        if decisions_along(a, p)? != decisions_along(b, p)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn classical_reduction() -> nearq::Result<Outcome> {
    let zero = EpsilonConfig::relative(0.0)?;
    let mut cases = Vec::new();
    for seed in 0..3u64 {
        let cohort = simulate_cancer_cohort(&CancerParams::default(), DosePolicy::UniformRandom, 200, seed)?;
        cases.push((cohort.dataset, DesignSpec::default()));
        let itr = simulate_itr(&ItrConfig::new(300, seed))?;
        cases.push((itr, DesignSpec::interaction_linear(0.0)));
    }
    let mut ok = true;
    let mut checked = 0;
    for (data, spec) in &cases {
        let classical = backward_fit(data, spec)?;
        let ne = backward_fit_near_equiv(data, spec, &zero)?;
        let set = policy_set(&ne);
        ok &= ne.m() == 1 && set.len() == 1;
        ok &= policies_agree(data, &classical.greedy(), &set.policies[0])?;
        for t in 0..data.horizon() {
            ok &= ne.column_models(0)[t] == *classical.model(t);
        }
        checked += data.len();
    }
    Ok(outcome(
        ok,
        format!(
            "{} datasets, {checked} trajectories, every stage identical",
            cases.len()
        ),
    ))
}

fn dp_oracle() -> nearq::Result<Outcome> {
    let start = Instant::now();
    let mdp = TabularMdp::fixture();
    let data = mdp.exhaustive_dataset()?;
    let stack = backward_fit(&data, &TabularMdp::design())?;
    let report = compare(&stack, &mdp)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        report.max_discrepancy <= 1e-8 && secs < 1.0 && report.n_values == 16,
        format!(
            "max |Q - Q_dp| = {:.2e} over {} values, {secs:.3}s",
            report.max_discrepancy, report.n_values
        ),
    ))
}

fn satisfies(q: &[f64], k: usize, eps: f64, mode: AdmissibilityMode) -> bool {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match mode {
        AdmissibilityMode::Relative => q[k] >= max - eps * max.abs(),
        AdmissibilityMode::Absolute => q[k] >= max - eps,
    }
}

fn admissibility_suite() -> nearq::Result<Outcome> {
    let grid = [0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 0.99];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for trial in 0..10_000 {
        let k = rng.random_range(1..=11);
        // a coarse grid in some trials so exact ties occur
        let q: Vec<f64> = if trial % 4 == 0 {
            (0..k).map(|_| f64::from(rng.random_range(-4i32..=4)) * 0.5).collect()
        } else {
            (0..k).map(|_| rng.random_range(-100.0..100.0)).collect()
        };
        for mode in [AdmissibilityMode::Relative, AdmissibilityMode::Absolute] {
            let mut previous: Vec<usize> = Vec::new();
            for &eps in &grid {
                let set = admissible_actions(&q, &EpsilonConfig::new(eps, mode)?)?;
                let mut ids: Vec<usize> = set.iter().map(|a| a.action).collect();
                let expected: Vec<usize> = (0..k).filter(|&j| satisfies(&q, j, eps, mode)).collect();
                ok &= !set.is_empty() && set.len() <= k;
                ok &= set.windows(2).all(|w| {
                    w[0].q_value > w[1].q_value || (w[0].q_value == w[1].q_value && w[0].action < w[1].action)
                });
                ok &= set.iter().all(|a| a.q_value == q[a.action]);
                ids.sort_unstable();
                ok &= ids == expected;
                ok &= previous.iter().all(|p| ids.contains(p));
                previous = ids;
            }
        }
    }

    // padding on real fitted models
    let params = CancerParams::default();
    let mut rows = 0;
    for seed in 0..2u64 {
        let cohort = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 300, seed)?;
        let last = cohort.dataset.horizon();
        let model = backward_fit(&cohort.dataset, &DesignSpec::default())?
            .model(last)
            .clone();
        for eps in grid {
            let sel = select_and_pad(&model, &cohort.dataset, &EpsilonConfig::relative(eps)?)?;
            ok &= sel.m >= 1 && sel.m <= params.dose_grid.len();
            for (set, row) in sel.sets.iter().zip(&sel.padded) {
                ok &= row.len() == sel.m;
                if let Some(set) = set {
                    ok &= row[0] == set[0].q_value;
                    ok &= row[set.len()..].iter().all(|&v| v == set[0].q_value);
                    ok &= row[..set.len()].iter().zip(set).all(|(&v, a)| v == a.q_value);
                }
                rows += 1;
            }
        }
    }
    Ok(outcome(
        ok,
        format!("10^4 q-vectors x 8 epsilons x 2 modes; {rows} padded rows"),
    ))
}

fn itr_reproduction() -> nearq::Result<Outcome> {
    let start = Instant::now();
    let seeds = 20u64;
    let mut blip = [0.0f64; 10];
    let (mut n, mut wrong, mut wrong_in_band, mut outside, mut wrong_outside) = (0usize, 0usize, 0usize, 0f64, 0f64);
    for seed in 0..seeds {
        let train = simulate_itr(&ItrConfig::new(1000, derive_seed(seed, "itr/train")))?;
        let test = simulate_itr(&ItrConfig::new(2000, derive_seed(seed, "itr/test")))?;
        let model = backward_fit(&train, &DesignSpec::interaction_linear(0.0))?
            .model(0)
            .clone();
        let inter = model.interaction_coefficients().expect("linear model");
        for (b, c) in blip.iter_mut().zip(inter) {
            *b += c / seeds as f64;
        }
        let stats = band_stats(&model, &test, 0.5)?;
        n += stats.n_test;
        wrong += stats.misclassified_total;
        wrong_in_band += stats.misclassified_in_band;
        let out = (1.0 - stats.band_fraction) * stats.n_test as f64;
        outside += out;
        wrong_outside += (1.0 - stats.accuracy_outside_band) * out;
    }
    let b0 = 2.0 * blip[0];
    let b1 = 2.0 * blip[1];
    let rest = blip[2..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let accuracy = 1.0 - wrong as f64 / n as f64;
    let acc_out = 1.0 - wrong_outside / outside;
    let in_band = wrong_in_band as f64 / wrong.max(1) as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = (b0 - 2.0).abs() <= 0.15
        && (b1 - 2.0).abs() <= 0.15
        && rest <= 0.05
        && accuracy >= 0.90
        && acc_out >= 0.97
        && in_band >= 0.80
        && secs < 60.0;
    Ok(outcome(
        pass,
        format!(
            "{seeds} seeds: blip coefs ({b0:.3}, {b1:.3}), max |other| {rest:.3}, accuracy {accuracy:.4}, \
             outside band {acc_out:.4}, misclassified in band {in_band:.3}, {secs:.1}s"
        ),
    ))
}

struct CancerStats {
    opt_curves: Vec<Vec<f64>>,
    baseline_curves: Vec<Vec<Vec<f64>>>,
    overlap: bool,
    ratios: Vec<f64>,
    secs: f64,
}

fn cancer_runs(seeds: u64) -> nearq::Result<CancerStats> {
    let start = Instant::now();
    let params = CancerParams::default();
    let spec = DesignSpec::default();
    let mut stats = CancerStats {
        opt_curves: Vec::new(),
        baseline_curves: Vec::new(),
        overlap: true,
        ratios: Vec::new(),
        secs: 0.0,
    };
    for seed in 0..seeds {
        let train_seed = derive_seed(seed, "cancer/train");
        let test_seed = derive_seed(seed, "cancer/test");
        let cohort = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 500, train_seed)?;
        let repeats = if seed == 0 { 3 } else { 1 };
        let (classical, classical_secs) = timed(repeats, || backward_fit(&cohort.dataset, &spec))?;
        let opt = evaluate_policy(
            &params,
            DosePolicy::Rule(&classical.greedy()),
            "opt",
            1000,
            test_seed,
            true,
        )?;
        let baselines: Vec<EvalResult> = constant_dose_baselines(&params, 1000, test_seed)?;
        for eps in EPSILONS {
            let cfg = EpsilonConfig::relative(eps)?;
            let (ne, ne_secs) = timed(repeats, || backward_fit_near_equiv(&cohort.dataset, &spec, &cfg))?;
            if seed == 0 {
                stats.ratios.push(ne_secs / classical_secs);
            }
            let set = policy_set(&ne);
            let first = evaluate_policy(
                &params,
                DosePolicy::Rule(&set.policies[0]),
                "ne1",
                1000,
                test_seed,
                true,
            )?;
            stats.overlap &= first.curve == opt.curve && first.mean_cum_reward == opt.mean_cum_reward;
        }
        stats.opt_curves.push(opt.curve);
        stats
            .baseline_curves
            .push(baselines.into_iter().map(|b| b.curve).collect());
    }
    stats.secs = start.elapsed().as_secs_f64();
    Ok(stats)
}

fn mean_over(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.len() as f64;
    (0..curves[0].len())
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n)
        .collect()
}

fn cancer_reproduction(stats: &CancerStats) -> (Outcome, Outcome, Outcome) {
    let seeds = stats.opt_curves.len();
    let opt = mean_over(&stats.opt_curves);
    let n_doses = stats.baseline_curves[0].len();
    let baselines: Vec<Vec<f64>> = (0..n_doses)
        .map(|k| mean_over(&stats.baseline_curves.iter().map(|b| b[k].clone()).collect::<Vec<_>>()))
        .collect();
    let best6 = baselines.iter().map(|c| c[6]).fold(f64::INFINITY, f64::min);
    let per_seed_wins = stats
        .opt_curves
        .iter()
        .zip(&stats.baseline_curves)
        .filter(|(o, b)| b.iter().all(|c| o[6] < c[6]))
        .count();
    let a = outcome(
        baselines.iter().all(|c| opt[6] < c[6]) && stats.secs < 300.0,
        format!(
            "month-6 combined {:.3} vs best constant {best6:.3} (mean of {seeds} seeds; below all constants in \
             {per_seed_wins}/{seeds} single seeds), {:.0}s",
            opt[6], stats.secs
        ),
    );
    let b = outcome(
        stats.overlap,
        format!(
            "rank-1 curve identical to classical at every month, {seeds} seeds x {} epsilons",
            EPSILONS.len()
        ),
    );
    let gaps: Vec<f64> = (0..seeds)
        .map(|s| {
            let per_month: Vec<f64> = (3..=6)
                .map(|t| {
                    let best = stats.baseline_curves[s]
                        .iter()
                        .map(|c| c[t])
                        .fold(f64::INFINITY, f64::min);
                    best - stats.opt_curves[s][t]
                })
                .collect();
            per_month
        })
        .fold(vec![0.0; 4], |acc, g| {
            acc.iter().zip(&g).map(|(x, y)| x + y / seeds as f64).collect()
        });
    let c = outcome(
        gaps.windows(2).all(|w| w[1] >= w[0]),
        format!(
            "mean gap to best constant, months 3..6: [{}]",
            gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join(", ")
        ),
    );
    (a, b, c)
}

fn cost_ratio(stats: &CancerStats) -> Outcome {
    let worst = stats.ratios.iter().copied().fold(0.0f64, f64::max);
    outcome(
        worst <= 15.0,
        format!(
            "near-equivalent / classical fit time: [{}], max {worst:.2}",
            stats
                .ratios
                .iter()
                .map(|r| format!("{r:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn configuration_guards() -> nearq::Result<Outcome> {
    let mut ok = true;
    for bad in [-0.1, 1.0, 1.5, f64::NAN, f64::INFINITY] {
        ok &= EpsilonConfig::relative(bad).is_err() && EpsilonConfig::absolute(bad).is_err();
    }
    for good in [0.0, 0.5, 0.999] {
        ok &= EpsilonConfig::relative(good).is_ok() && EpsilonConfig::absolute(good).is_ok();
    }

    let params = CancerParams::default();
    let itr = simulate_itr(&ItrConfig::new(500, 9))?;
    ok &= itr == simulate_itr(&ItrConfig::new(500, 9))?;
    let cohort = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 200, 9)?;
    ok &= cohort == simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 200, 9)?;

    let dir = tempfile::tempdir()?;
    for (name, data) in [("itr.csv", &itr), ("cancer.csv", &cohort.dataset)] {
        let path = dir.path().join(name);
        save_csv(data, &path)?;
        let back = load_csv(&path)?;
        ok &= back == *data;
        let again = dir.path().join(format!("again_{name}"));
        save_csv(&back, &again)?;
        ok &= std::fs::read(&path)? == std::fs::read(&again)?;
    }
    Ok(outcome(
        ok,
        "epsilon range, seeded reproducibility, CSV identity".into(),
    ))
}

fn report(id: &str, name: &str, result: nearq::Result<Outcome>) -> bool {
    match result {
        Ok(o) => {
            println!(
                "{} criterion {id} ({name}): {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(e) => {
            println!("FAIL criterion {id} ({name}): error: {e}");
            false
        }
    }
}

fn main() {
    let mut all = true;
    all &= report("1", "classical reduction at epsilon 0", classical_reduction());
    all &= report("2", "dynamic-programming oracle", dp_oracle());
    all &= report("3", "admissibility soundness and monotonicity", admissibility_suite());
    all &= report("4", "single-stage rule recovery", itr_reproduction());
    match cancer_runs(10) {
        Ok(stats) => {
            let (a, b, c) = cancer_reproduction(&stats);
            all &= report("5a", "learned policy below constant doses", Ok(a));
            all &= report("5b", "rank-1 strategy overlaps classical", Ok(b));
            all &= report("5c", "gap nondecreasing months 3-6", Ok(c));
            all &= report("6", "fitting cost ratio", Ok(cost_ratio(&stats)));
        }
        Err(e) => {
            for id in ["5a", "5b", "5c", "6"] {
                all &= report(id, "multi-stage dosing", Err(nearq::Error::Spec(e.to_string())));
            }
        }
    }
    all &= report("7", "configuration guards", configuration_guards());
    if !all {
        std::process::exit(1);
    }
}

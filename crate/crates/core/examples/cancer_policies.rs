//! Six-month chemotherapy model: learn a dosing policy from 500 randomized
//! patients, then compare it with constant-dose regimes and with the
//! near-equivalent strategies on fresh patients sharing initial states.
//!
//! ```bash
//! cargo run --release -p nearq --example cancer_policies -- [seed] [epsilon]
//! ```

use nearq::envs::{simulate_cancer_cohort, CancerParams, DosePolicy};
use nearq::evalkit::{constant_dose_baselines, epsilon_band_curve, evaluate_policy};
use nearq::nearequiv::{backward_fit_near_equiv, policy_set};
use nearq::qlearn::backward_fit;
use nearq::{DesignSpec, EpsilonConfig};

fn main() -> nearq::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let epsilon: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let params = CancerParams::default();
    let train = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 500, seed)?;
    let spec = DesignSpec::default();
    let classical = backward_fit(&train.dataset, &spec)?;
    let cfg = EpsilonConfig::relative(epsilon)?;
    let ne = backward_fit_near_equiv(&train.dataset, &spec, &cfg)?;

    let test_seed = seed.wrapping_add(1);
    let n_test = 1000;
    let baselines = constant_dose_baselines(&params, n_test, test_seed)?;
    let opt = evaluate_policy(
        &params,
        DosePolicy::Rule(&classical.greedy()),
        "opt",
        n_test,
        test_seed,
        true,
    )?;
    let near: Vec<_> = policy_set(&ne)
        .policies
        .iter()
        .map(|p| {
            evaluate_policy(
                &params,
                DosePolicy::Rule(p),
                &format!("ne{}", p.column() + 1),
                n_test,
                test_seed,
                true,
            )
        })
        .collect::<nearq::Result<_>>()?;

    println!(
        "combined tumor + toxicity by month (epsilon = {epsilon}, m = {})",
        ne.m()
    );
    let show = |label: &str, curve: &[f64], reward: f64| {
        let cells: Vec<String> = curve.iter().map(|v| format!("{v:6.3}")).collect();
        println!("{label:>9} {}  | reward {reward:8.2}", cells.join(" "));
    };
    for r in baselines.iter().chain(std::iter::once(&opt)).chain(&near) {
        show(&r.label, &r.curve, r.mean_cum_reward);
    }
    let band = epsilon_band_curve(&opt, &near, epsilon)?;
    show("band_hi", &band.hi, f64::NAN);
    Ok(())
}

//! Near-equivalent sets on a randomized dosing cohort: how many strategies
//! survive as epsilon grows, what the admissible doses look like for a few
//! patients, and where each strategy departs from the classical one.
//!
//! ```bash
//! cargo run --release -p nearq --example near_equivalent_sets
//! ```

use nearq::envs::{simulate_cancer_cohort, CancerParams, DosePolicy};
use nearq::nearequiv::{backward_fit_near_equiv, decisions_along, policy_set};
use nearq::qlearn::backward_fit;
use nearq::{DesignSpec, EpsilonConfig};

fn main() -> nearq::Result<()> {
    let params = CancerParams::default();
    let cohort = simulate_cancer_cohort(&params, DosePolicy::UniformRandom, 500, 3)?;
    let spec = DesignSpec::default();
    let classical = backward_fit(&cohort.dataset, &spec)?;

    for eps in [0.0, 0.1, 0.3, 0.5, 0.9] {
        let ne = backward_fit_near_equiv(&cohort.dataset, &spec, &EpsilonConfig::relative(eps)?)?;
        let sizes = ne.selection().set_sizes();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        println!("eps {eps:<4} m = {:<2} mean set size {mean:.2}", ne.m());

        if eps == 0.9 {
            // patients who died earlier have no final-stage set
            let shown = (0..cohort.dataset.len()).filter_map(|i| ne.admissible_set(i).map(|s| (i, s)));
            for (i, set) in shown.filter(|(_, s)| s.len() > 1).take(3) {
                let doses: Vec<String> = set
                    .iter()
                    .map(|a| format!("{:.1} ({:.1})", params.dose_grid[a.action], a.q_value))
                    .collect();
                println!("  patient {i}: {}", doses.join(", "));
            }
            let set = policy_set(&ne);
            let greedy = classical.greedy();
            for policy in &set.policies {
                let differ = cohort
                    .dataset
                    .patients()
                    .iter()
                    .filter(|p| decisions_along(policy, p).ok() != decisions_along(&greedy, p).ok())
                    .count();
                println!(
                    "  strategy {}: differs from classical on {differ} trajectories",
                    policy.column() + 1
                );
            }
        }
    }
    Ok(())
}

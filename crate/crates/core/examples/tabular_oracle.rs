//! Backward Q-learning on a four-state, two-stage tabular problem with
//! exhaustive data, checked value by value against dynamic programming.
//!
//! ```bash
//! cargo run -p nearq --example tabular_oracle
//! ```

use nearq::qlearn::backward_fit;
use nearq::tabular::{compare, TabularMdp};

fn main() -> nearq::Result<()> {
    let mdp = TabularMdp::fixture();
    let data = mdp.exhaustive_dataset()?;
    let stack = backward_fit(&data, &TabularMdp::design())?;
    let dp = mdp.dp_values();

    println!(
        "{:>5} {:>5} {:>12} {:>12} {:>12} {:>12}",
        "stage", "state", "fit a=-1", "dp a=-1", "fit a=+1", "dp a=+1"
    );
    for (t, stage) in dp.iter().enumerate() {
        for (s, q) in stage.iter().enumerate() {
            let fit = stack.model(t).predict_all_actions(&mdp.features(s))?;
            println!(
                "{t:>5} {s:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                fit[0], q[0], fit[1], q[1]
            );
        }
    }
    let report = compare(&stack, &mdp)?;
    println!(
        "max discrepancy {:.3e} over {} values",
        report.max_discrepancy, report.n_values
    );
    Ok(())
}

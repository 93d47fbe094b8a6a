//! Single-stage binary treatment: fit the interaction-linear Q-model, compare
//! the estimated blip with the truth `2 (x0 + x1)`, and see how many
//! misclassified test patients fall inside the `|blip| <= eps` band.
//!
//! ```bash
//! cargo run --release -p nearq --example itr_blip_band -- [seed]
//! ```

use nearq::envs::{simulate_itr, ItrConfig};
use nearq::evalkit::band_stats;
use nearq::qlearn::backward_fit;
use nearq::DesignSpec;

fn main() -> nearq::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let train = simulate_itr(&ItrConfig::new(1000, seed))?;
    let test = simulate_itr(&ItrConfig::new(2000, seed.wrapping_add(1)))?;
    let stack = backward_fit(&train, &DesignSpec::interaction_linear(0.0))?;
    let model = stack.model(0);

    // blip = 2 * (a x) coefficient, since actions are coded -1/+1
    let inter = model.interaction_coefficients().expect("linear model");
    let blip: Vec<String> = inter.iter().map(|c| format!("{:+.3}", 2.0 * c)).collect();
    println!("estimated blip coefficients x0..x9: {}", blip.join(" "));
    println!("true blip coefficients:             +2 +2 and zeros");

    println!(
        "{:>6} {:>9} {:>10} {:>14} {:>12}",
        "eps", "accuracy", "in band", "missed in band", "acc outside"
    );
    for eps in [0.1, 0.25, 0.5, 1.0] {
        let s = band_stats(model, &test, eps)?;
        println!(
            "{eps:>6} {:>9.4} {:>10.3} {:>8}/{:<5} {:>12.4}",
            s.accuracy(),
            s.band_fraction,
            s.misclassified_in_band,
            s.misclassified_total,
            s.accuracy_outside_band
        );
    }
    Ok(())
}

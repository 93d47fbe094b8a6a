//! Offline datasets on disk: write a cohort, read it back, and see what
//! validation reports for a malformed file.
//!
//! ```bash
//! cargo run -p nearq --example dataset_csv -- [dir]
//! ```

use std::path::PathBuf;

use nearq::data::{load_csv, save_csv, validate};
use nearq::envs::{simulate_cancer_cohort, CancerParams, DosePolicy};

fn main() -> nearq::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("cohort.csv");

    let cohort = simulate_cancer_cohort(&CancerParams::default(), DosePolicy::UniformRandom, 20, 1)?;
    save_csv(&cohort.dataset, &path)?;
    let back = load_csv(&path)?;
    println!(
        "wrote {} ({} patients, horizon {})",
        path.display(),
        back.len(),
        back.horizon()
    );
    println!("round trip identical: {}", back == cohort.dataset);
    println!(
        "sidecar:\n{}",
        std::fs::read_to_string(path.with_extension("csv.meta"))?
    );

    let report = validate(&back);
    for issue in report.warnings() {
        println!("warning: {issue}");
    }

    let broken = dir.join("broken.csv");
    std::fs::write(
        &broken,
        "patient_id,stage,cov_0,cov_1,action_index,reward\n0,0,1.0,0.5,3,oops\n",
    )?;
    match load_csv(&broken) {
        Ok(_) => println!("unexpectedly loaded {}", broken.display()),
        Err(e) => println!("rejected {}: {e}", broken.display()),
    }
    Ok(())
}

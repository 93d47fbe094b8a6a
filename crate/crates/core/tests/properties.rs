use proptest::prelude::*;

use nearq::data::{load_csv, save_csv};
use nearq::nearequiv::{admissible_actions, AdmissibilityMode};
use nearq::qlearn::argmax;
use nearq::regression::fit;
use nearq::{ActionSpace, DesignSpec, EpsilonConfig, OfflineDataset, PatientTrajectory, StageRecord};

fn dataset_strategy() -> impl Strategy<Value = OfflineDataset> {
    (0usize..3, 1usize..4, 2usize..5, 1usize..7, any::<bool>()).prop_flat_map(|(horizon, dim, k, n, fixed)| {
        let patient = (
            0..=horizon,
            prop::collection::vec(
                (prop::collection::vec(-1e3f64..1e3, dim), 0..k, -100f64..100.0),
                horizon + 1,
            ),
        );
        prop::collection::vec(patient, n).prop_map(move |rows| {
            let patients = rows
                .into_iter()
                .enumerate()
                .map(|(i, (last, stages))| {
                    // the first patient always reaches the final stage
                    let keep = if i == 0 || fixed { horizon + 1 } else { last + 1 };
                    let stages = stages
                        .into_iter()
                        .take(keep)
                        .map(|(x, a, y)| StageRecord::new(x, a, y))
                        .collect();
                    PatientTrajectory::new(10 * i as u64 + 3, stages).unwrap()
                })
                .collect();
            OfflineDataset::uniform(patients, horizon, ActionSpace::indexed(k).unwrap(), dim)
                .unwrap()
                .with_fixed_horizon(fixed)
        })
    })
}

fn kernel_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-2f64..2.0, 2), n),
            prop::collection::vec(0usize..3, n),
            prop::collection::vec(-10f64..10.0, n),
        )
    })
}

fn rotated<T: Clone>(v: &[T], r: usize) -> Vec<T> {
    v[r..].iter().chain(&v[..r]).cloned().collect()
}

fn training_sse(spec: &DesignSpec, x: &[Vec<f64>], a: &[usize], y: &[f64], space: &ActionSpace) -> f64 {
    let model = fit(spec, x, a, y, space).unwrap();
    x.iter()
        .zip(a)
        .zip(y)
        .map(|((xi, &ai), yi)| (model.predict(xi, ai).unwrap() - yi).powi(2))
        .sum()
}

proptest! {
    #[test]
    fn csv_round_trip_is_identity(data in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.csv");
        save_csv(&data, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(&back, &data);
        let again = dir.path().join("again.csv");
        save_csv(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn admissible_sets_are_sound_and_nested(
        q in prop::collection::vec(-50f64..50.0, 1..=11),
        e1 in 0f64..0.999,
        e2 in 0f64..0.999,
        relative in any::<bool>(),
    ) {
        let mode = if relative { AdmissibilityMode::Relative } else { AdmissibilityMode::Absolute };
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let small = admissible_actions(&q, &EpsilonConfig::new(lo, mode).unwrap()).unwrap();
        let large = admissible_actions(&q, &EpsilonConfig::new(hi, mode).unwrap()).unwrap();
        let band = if relative { max - hi * max.abs() } else { max - hi };
        for (k, &v) in q.iter().enumerate() {
            let kept = large.iter().any(|a| a.action == k);
            prop_assert_eq!(kept, v >= band);
        }
        prop_assert!(small.iter().all(|a| large.iter().any(|b| b.action == a.action)));
        prop_assert_eq!(large[0].action, argmax(&q));
    }

    #[test]
    fn kernel_fit_ignores_row_order((x, a, y) in kernel_problem(), rotate in 1usize..19) {
        let space = ActionSpace::indexed(3).unwrap();
        let spec = DesignSpec::kernel(None, 0.5);
        let model = fit(&spec, &x, &a, &y, &space).unwrap();
        let r = rotate % x.len();
        let (xs, as_, ys) = (rotated(&x, r), rotated(&a, r), rotated(&y, r));
        let permuted = fit(&spec, &xs, &as_, &ys, &space).unwrap();
        for probe in x.iter().chain(std::iter::once(&vec![0.3, -0.7])) {
            let p = model.predict_all_actions(probe).unwrap();
            let q = permuted.predict_all_actions(probe).unwrap();
            for (u, v) in p.iter().zip(&q) {
                prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn more_ridge_never_fits_better((x, a, y) in kernel_problem()) {
        let space = ActionSpace::indexed(3).unwrap();
        let sse: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&r| training_sse(&DesignSpec::kernel(Some(0.7), r), &x, &a, &y, &space))
            .collect();
        prop_assert!(sse[0] <= sse[1] * (1.0 + 1e-9) + 1e-12);
        prop_assert!(sse[1] <= sse[2] * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn fits_are_deterministic((x, a, y) in kernel_problem()) {
        let space = ActionSpace::indexed(3).unwrap();
        let spec = DesignSpec::default();
        prop_assert_eq!(fit(&spec, &x, &a, &y, &space).unwrap(), fit(&spec, &x, &a, &y, &space).unwrap());
    }

    #[test]
    fn argmax_ignores_constant_shift(
        steps in prop::collection::vec(-64i32..64, 1..12),
        shift in -64i32..64,
    ) {
        // quarter steps keep every sum exact
        let q: Vec<f64> = steps.iter().map(|&s| f64::from(s) * 0.25).collect();
        let shifted: Vec<f64> = q.iter().map(|v| v + f64::from(shift) * 0.25).collect();
        prop_assert_eq!(argmax(&q), argmax(&shifted));
    }
}

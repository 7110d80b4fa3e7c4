mod common;

use common::{dszovr_config, max_abs_diff, small_ridge, subsets};
use proptest::prelude::*;
use zovr_core::async_engine::{replay_check, run_simulated, DelayLaw, DelayScenario, MaskPolicy};
use zovr_core::zo_estimator::{full_smoothed_gradient, restrict_snapshot};
use zovr_core::{CoordinateBlock, Dataset, FiniteSum, Sampler, SmoothingSchedule, Trace, TraceRecord};

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_sets_are_sorted_distinct_and_in_range(
        seed in any::<u64>(),
        stream in 0u64..16,
        total in 1usize..60,
        frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((total - 1) as f64 * frac) as usize;
        let mut s = Sampler::new(seed, stream);
        for _ in 0..5 {
            let batch = s.sample_minibatch(total, k).unwrap();
            let block = s.sample_block(total, k).unwrap();
            for idx in [batch.indices(), block.indices()] {
                prop_assert_eq!(idx.len(), k);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| i < total));
            }
        }
        prop_assert!(s.sample_block(total, total + 1).is_err());
    }

    #[test]
    fn ridge_differences_are_exact_for_any_radius(
        x in vec_in(5, -10.0, 10.0),
        mu in vec_in(5, 1e-3, 5.0),
    ) {
        let obj = small_ridge(8, 5, 3);
        let g = full_smoothed_gradient(&obj, &x, &SmoothingSchedule::new(mu).unwrap(), 0).unwrap().g_mu;
        let exact = obj.gradient(&x).unwrap();
        let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&g, &exact) <= 1e-9 * scale);
    }

    #[test]
    fn restricted_snapshot_averages_to_the_snapshot(x in vec_in(4, -3.0, 3.0), y in 1usize..=4) {
        let obj = small_ridge(6, 4, 8);
        let snap = full_smoothed_gradient(&obj, &x, &SmoothingSchedule::uniform(4, 0.1).unwrap(), 0).unwrap();
        let blocks = subsets(4, y);
        let mut mean = [0.0; 4];
        for j in blocks.iter() {
            let r = restrict_snapshot(&snap, &CoordinateBlock::new(j.clone(), 4).unwrap());
            for (m, v) in mean.iter_mut().zip(r.to_dense()) {
                *m += v / blocks.len() as f64;
            }
        }
        prop_assert!(max_abs_diff(&mean, &snap.g_mu) <= 1e-12);
    }

    #[test]
    fn trace_csv_round_trips(values in prop::collection::vec((0.0f64..1e6, 0.0f64..1e3), 1..40)) {
        let mut trace = Trace::new();
        for (k, (f, g)) in values.iter().enumerate() {
            trace.push(TraceRecord {
                epoch: k / 3,
                iter: k % 3,
                global_iter: k as u64,
                f: *f,
                grad_norm_sq: *g,
                evals: 10 * k as u64,
                wall_ms: 0,
            });
        }
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Trace::read_csv(buf.as_slice()).unwrap(), trace.clone());
        let mins = trace.min_so_far();
        prop_assert!(mins.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(mins.iter().zip(trace.records()).all(|(m, r)| *m <= r.grad_norm_sq));
    }

    #[test]
    fn dataset_csv_round_trips(rows in prop::collection::vec(vec_in(3, -1e3, 1e3), 1..20)) {
        let labels: Vec<f64> = rows.iter().map(|r| r[0] - r[2]).collect();
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.num_samples(), data.num_samples());
        for i in 0..data.num_samples() {
            prop_assert_eq!(back.row(i), data.row(i));
        }
        prop_assert_eq!(back.labels(), data.labels());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulated_runs_always_replay(
        tau in 0usize..12,
        p_keep in 0.0f64..=1.0,
        uniform in any::<bool>(),
        seed in any::<u64>(),
        scenario_seed in any::<u64>(),
    ) {
        let obj = small_ridge(20, 5, 2);
        let mut cfg = dszovr_config(5, 0.01, 3, 25, 2, seed);
        cfg.batch = 2;
        let scenario = if tau == 0 {
            DelayScenario::none()
        } else {
            DelayScenario {
                tau,
                delay_law: if uniform { DelayLaw::Uniform } else { DelayLaw::Fixed(tau) },
                mask_policy: MaskPolicy::Random { p_keep },
                seed: scenario_seed,
            }
        };
        let sim = run_simulated(&obj, &cfg, &scenario).unwrap();
        let report = replay_check(&sim.log, &scenario).unwrap();
        prop_assert!(report.max_reconstruction_error <= 1e-12);
        prop_assert!(report.max_staleness <= tau as u64);
        for e in &sim.log.entries {
            prop_assert_eq!(e.mask.len(), e.block.len());
            prop_assert!(e.read_set.iter().all(|&k| k < e.t));
        }
    }
}

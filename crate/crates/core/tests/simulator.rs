mod common;

use common::{dszovr_config, max_abs_diff, small_ridge};
use zovr_core::async_engine::{
    replay_check, run_simulated, DelayLaw, DelayScenario, MaskPolicy, ScheduledRead, UpdateLog,
};
use zovr_core::{make_ridge, run_dszovr, Dataset, Error, RunConfig, SmoothingSchedule};

fn scenario(tau: usize, delay_law: DelayLaw, mask_policy: MaskPolicy) -> DelayScenario {
    DelayScenario {
        tau,
        delay_law,
        mask_policy,
        seed: 99,
    }
}

fn half_square_config() -> (zovr_core::GlmObjective, RunConfig) {
    let obj = make_ridge(Dataset::from_rows(&[vec![1.0]], vec![0.0]).unwrap(), 0.0).unwrap();
    let cfg = RunConfig {
        gamma: 0.5,
        epochs: 1,
        inner: 2,
        mu: SmoothingSchedule::uniform(1, 0.1).unwrap(),
        x0: Some(vec![1.0]),
        ..RunConfig::new(1)
    };
    (obj, cfg)
}

#[test]
fn zero_staleness_matches_sequential_run() {
    let obj = small_ridge(50, 8, 13);
    let mut cfg = dszovr_config(8, 0.01, 3, 60, 3, 4);
    cfg.batch = 2;
    cfg.trace_every = 10;
    let seq = run_dszovr(&obj, &cfg).unwrap();
    let sim = run_simulated(&obj, &cfg, &DelayScenario::none()).unwrap();
    assert!(max_abs_diff(&seq.x, &sim.x) <= 1e-12);
    assert_eq!(seq.trace, sim.trace);
    assert_eq!(sim.log.entries.len(), 180);
    assert!(sim.log.entries.iter().all(|e| e.read_set.is_empty()));
}

#[test]
fn one_step_delay_reads_the_previous_iterate() {
    let (obj, cfg) = half_square_config();
    let seq = run_dszovr(&obj, &cfg).unwrap();
    assert!((seq.x[0] - 0.25).abs() < 1e-12);

    let sim = run_simulated(&obj, &cfg, &scenario(1, DelayLaw::Fixed(1), MaskPolicy::AllOnes)).unwrap();
    let log = &sim.log.entries;
    assert_eq!(log[0].x_hat, vec![1.0]);
    assert!(log[0].read_set.is_empty());
    assert_eq!(log[1].read_set, vec![0]);
    assert!((log[1].x_hat[0] - 1.0).abs() < 1e-12);
    assert!((log[0].delta[0] - 0.5).abs() < 1e-12);
    assert!((log[1].delta[0] - 0.5).abs() < 1e-12);
    assert!(sim.x[0].abs() < 1e-12);
}

#[test]
fn zero_keep_masks_erase_pending_updates() {
    let obj = small_ridge(30, 6, 2);
    let cfg = dszovr_config(6, 0.02, 2, 100, 2, 7);
    let sim = run_simulated(&obj, &cfg, &scenario(5, DelayLaw::Uniform, MaskPolicy::Random { p_keep: 0.0 })).unwrap();
    let seq = run_dszovr(&obj, &cfg).unwrap();
    assert!(sim.log.entries.iter().any(|e| !e.read_set.is_empty()));
    assert!(sim.log.entries.iter().all(|e| e.mask.iter().all(|&b| !b)));
    assert_eq!(sim.x, seq.x);
}

#[test]
fn replay_accepts_random_mask_runs() {
    let obj = small_ridge(40, 6, 5);
    let cfg = dszovr_config(6, 0.005, 4, 250, 3, 1);
    for tau in [0, 5, 50] {
        let s = if tau == 0 {
            DelayScenario::none()
        } else {
            scenario(tau, DelayLaw::Uniform, MaskPolicy::Random { p_keep: 0.5 })
        };
        let sim = run_simulated(&obj, &cfg, &s).unwrap();
        let report = replay_check(&sim.log, &s).unwrap();
        assert_eq!(report.entries, 1000);
        assert!(report.max_reconstruction_error <= 1e-12);
        assert!(report.max_staleness <= tau as u64);
    }
}

#[test]
fn fixed_delay_is_reported_as_realized_staleness() {
    let obj = small_ridge(20, 4, 6);
    let cfg = dszovr_config(4, 0.01, 2, 30, 2, 3);
    let s = scenario(3, DelayLaw::Fixed(3), MaskPolicy::AllOnes);
    let sim = run_simulated(&obj, &cfg, &s).unwrap();
    let report = replay_check(&sim.log, &s).unwrap();
    assert_eq!(report.max_staleness, 3);
    // Reads never reach back into the previous epoch.
    assert!(sim.log.entries[30].read_set.is_empty());
    assert_eq!(sim.log.entries[31].read_set, vec![30]);
    assert_eq!(sim.log.entries[35].read_set, vec![32, 33, 34]);
}

#[test]
fn tampering_is_caught_at_the_tampered_iteration() {
    let obj = small_ridge(20, 4, 6);
    let cfg = dszovr_config(4, 0.01, 2, 30, 2, 3);
    let s = scenario(4, DelayLaw::Uniform, MaskPolicy::Random { p_keep: 0.7 });
    let sim = run_simulated(&obj, &cfg, &s).unwrap();

    let mut log = sim.log.clone();
    log.entries[17].x_hat[2] += 1e-9;
    assert!(matches!(replay_check(&log, &s), Err(Error::Verification { t: 17, .. })));

    let mut log = sim.log.clone();
    log.entries[40].read_set = vec![41];
    assert!(matches!(replay_check(&log, &s), Err(Error::Verification { t: 40, .. })));

    let mut log = sim.log.clone();
    log.entries[12].read_set = vec![3];
    assert!(matches!(replay_check(&log, &s), Err(Error::Verification { t: 12, .. })));

    let mut log = sim.log.clone();
    log.epoch_starts[1][0] += 1.0;
    assert!(matches!(replay_check(&log, &s), Err(Error::Verification { .. })));
}

#[test]
fn update_log_round_trips_through_csv() {
    let obj = small_ridge(20, 5, 8);
    let cfg = dszovr_config(5, 0.01, 2, 40, 3, 3);
    let s = scenario(6, DelayLaw::Uniform, MaskPolicy::Random { p_keep: 0.4 });
    let sim = run_simulated(&obj, &cfg, &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sim.log.save(dir.path()).unwrap();
    let back = UpdateLog::load(dir.path()).unwrap();
    assert_eq!(back, sim.log);
    replay_check(&back, &s).unwrap();
}

#[test]
fn adversarial_schedule_with_gaps_and_masks() {
    let text = "\
t,delay,maskbits
# warm-up
0,0,
1,1,10
2,@2,01
3,@1;3,11
4,2,
";
    let s = DelayScenario::from_schedule(text.as_bytes(), 3, 0).unwrap();
    assert_eq!(
        s.delay_law,
        DelayLaw::Schedule(vec![
            ScheduledRead::Delay(0),
            ScheduledRead::Delay(1),
            ScheduledRead::Offsets(vec![2]),
            ScheduledRead::Offsets(vec![1, 3]),
            ScheduledRead::Delay(2),
        ])
    );
    let obj = small_ridge(10, 4, 1);
    let cfg = dszovr_config(4, 0.05, 1, 5, 2, 0);
    let sim = run_simulated(&obj, &cfg, &s).unwrap();
    let sets: Vec<Vec<u64>> = sim.log.entries.iter().map(|e| e.read_set.clone()).collect();
    assert_eq!(sets, vec![vec![], vec![0], vec![0], vec![0, 2], vec![2, 3]]);
    assert_eq!(sim.log.entries[1].mask, vec![true, false]);
    assert_eq!(sim.log.entries[4].mask, vec![true, true]);
    let report = replay_check(&sim.log, &s).unwrap();
    assert_eq!(report.max_staleness, 3);

    let longer = RunConfig { inner: 6, ..cfg };
    assert!(matches!(run_simulated(&obj, &longer, &s), Err(Error::Config(_))));
}

#[test]
fn scenarios_violating_tau_are_rejected() {
    assert!(matches!(
        DelayScenario::from_schedule("0,4,\n".as_bytes(), 3, 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        DelayScenario::from_schedule("0,@1;5,\n".as_bytes(), 3, 0),
        Err(Error::Config(_))
    ));
    assert!(scenario(2, DelayLaw::Fixed(3), MaskPolicy::AllOnes).validate().is_err());
    assert!(scenario(2, DelayLaw::None, MaskPolicy::Random { p_keep: 0.5 }).validate().is_err());
    assert!(scenario(2, DelayLaw::Uniform, MaskPolicy::Random { p_keep: 1.5 }).validate().is_err());
}

mod common;

use std::time::Duration;

use common::{dszovr_config, reference_ridge, small_ridge};
use zovr_core::async_engine::{run_async, AsyncOptions, Stall};
use zovr_core::objectives::make_blackbox;
use zovr_core::{run_dszovr, Error, FiniteSum};

#[test]
fn one_worker_reproduces_sequential_run_bit_for_bit() {
    let obj = small_ridge(60, 8, 21);
    let mut cfg = dszovr_config(8, 0.01, 5, 80, 3, 1234);
    cfg.batch = 2;
    let seq = run_dszovr(&obj, &cfg).unwrap();
    let par = run_async(&obj, &cfg, &AsyncOptions::workers(1)).unwrap();
    assert_eq!(seq.x, par.x);
    assert_eq!(seq.trace, par.trace);
    assert_eq!(seq.evals, par.evals);
}

#[test]
fn reference_instance_converges_with_several_workers() {
    let obj = reference_ridge();
    let cfg = dszovr_config(20, 9e-4, 20, 500, 20, 3);
    for p in [1, 2, 4] {
        let out = run_async(&obj, &cfg, &AsyncOptions::workers(p)).unwrap();
        let last = out.trace.last().unwrap();
        assert!(last.grad_norm_sq <= 1e-3, "p = {p}: {}", last.grad_norm_sq);
        assert_eq!(out.stats.updates_per_epoch, vec![500; 20]);
        assert_eq!(out.stats.updates_per_worker.iter().sum::<usize>(), 20 * 500);
        assert_eq!(out.trace.len(), 21);
    }
}

#[test]
fn inner_iterations_are_consumed_exactly() {
    let obj = small_ridge(50, 10, 4);
    let cfg = dszovr_config(10, 0.005, 6, 37, 4, 8);
    for p in [1, 3, 8] {
        let out = run_async(&obj, &cfg, &AsyncOptions::workers(p)).unwrap();
        assert_eq!(out.stats.updates_per_epoch, vec![37; 6]);
        assert_eq!(out.stats.updates_per_worker.len(), p);
    }
}

#[test]
fn stalled_worker_does_not_block_the_others() {
    let obj = small_ridge(40, 6, 9);
    let cfg = dszovr_config(6, 0.001, 2, 20_000, 2, 0);
    let opts = AsyncOptions {
        workers: 3,
        stall: Some(Stall {
            worker: 1,
            epoch: 0,
            duration: Duration::from_millis(300),
        }),
    };
    let out = run_async(&obj, &cfg, &opts).unwrap();
    // While worker 1 slept holding one ticket, the others drew every remaining ticket.
    assert!(out.stats.counter_after_stall.unwrap() >= 20_000);
    assert_eq!(out.stats.updates_per_epoch, vec![20_000, 20_000]);
}

#[test]
fn evaluator_failure_aborts_every_worker() {
    let obj = make_blackbox(3, 8, |i, x| {
        if x[0] > 0.5 {
            Err(format!("component {i} out of domain"))
        } else {
            Ok((x[0] - 1.0).powi(2) + x[1] * x[1] + x[2] * x[2])
        }
    });
    let cfg = dszovr_config(3, 0.2, 4, 50, 3, 0);
    match run_async(&obj, &cfg, &AsyncOptions::workers(3)) {
        Err(Error::Evaluation { .. }) => {}
        other => panic!("expected evaluation failure, got {other:?}"),
    }
    assert_eq!(obj.num_components(), 8);
}

#[test]
fn divergence_is_reported_with_epoch_trace() {
    let obj = reference_ridge();
    let cfg = dszovr_config(20, 0.5, 5, 500, 20, 0);
    match run_async(&obj, &cfg, &AsyncOptions::workers(2)) {
        Err(e @ Error::Diverged { .. }) => {
            assert_eq!(e.partial_trace().unwrap().records()[0].global_iter, 0);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

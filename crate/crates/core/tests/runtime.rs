use std::sync::atomic::{AtomicUsize, Ordering};

use gparareal::runtime::{median, TaskFailure};
use gparareal::{parallel_map, predict_times, CostModel, Executor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn map_preserves_order(items in prop::collection::vec(any::<i32>(), 0..64), workers in 1usize..9) {
        let out = Executor::new(workers).map(&items, |i, &x| Ok::<_, ()>((i, x as i64 * 3))).unwrap();
        let expected: Vec<(usize, i64)> = items.iter().enumerate().map(|(i, &x)| (i, x as i64 * 3)).collect();
        prop_assert_eq!(out, expected);
    }

    #[test]
    fn lowest_failure_reported_after_all_settle(
        fails in prop::collection::btree_set(0usize..40, 1..6),
        workers in 1usize..9,
    ) {
        let items: Vec<usize> = (0..40).collect();
        let ran = AtomicUsize::new(0);
        let r = parallel_map(&items, workers, |_, &i| {
            ran.fetch_add(1, Ordering::Relaxed);
            if fails.contains(&i) { Err(i) } else { Ok(i) }
        });
        let first = *fails.iter().next().unwrap();
        prop_assert_eq!(r, Err(TaskFailure { index: first, error: first }));
        prop_assert_eq!(ran.load(Ordering::Relaxed), 40);
    }

    #[test]
    fn speedup_decreases_with_iterations(
        t_fine in 1e-3..10.0f64,
        ratio in 1e-6..1e-1f64,
        slices in 2usize..80,
    ) {
        let s = |k| predict_times(&CostModel { t_fine, t_coarse: t_fine * ratio, slices, iterations: k }).speedup;
        for k in 1..slices {
            prop_assert!(s(k + 1) < s(k));
        }
    }
}

#[test]
fn vanishing_coarse_cost() {
    let m = |k| CostModel { t_fine: 2.0, t_coarse: 0.0, slices: 40, iterations: k };
    assert_eq!(predict_times(&m(1)).speedup, 40.0);
    for k in 1..=40 {
        assert!((predict_times(&m(k)).speedup - 40.0 / k as f64).abs() < 1e-12);
    }
}

#[test]
fn median_of_samples() {
    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
}

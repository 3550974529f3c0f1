mod common;

use common::{finite_difference_check, FdReport};

#[test]
fn total_loss_gradient_matches_central_differences() {
    let mut all = FdReport::default();
    for seed in 0..20 {
        all.merge(finite_difference_check(seed, 64, 8, 4, 1e-4, 1e-3, 1e-6));
    }
    assert!(all.max_rel <= 1e-4, "{all:?}");
    // Most coordinates must actually be compared.
    assert!(all.checked > 4 * all.skipped, "{all:?}");
}

#[test]
fn gradient_check_covers_small_dimensions() {
    for (seed, d, k) in [(100, 2, 1), (101, 3, 2), (102, 5, 6)] {
        let r = finite_difference_check(seed, 32, d, k, 1e-4, 1e-3, 1e-6);
        assert!(r.max_rel <= 1e-4, "{r:?}");
        assert!(r.checked > 0);
    }
}

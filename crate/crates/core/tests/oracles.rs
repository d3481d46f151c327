mod common;

use common::*;
use relsurv_core::Mode;

#[test]
fn conjugate_updates_match_quadrature() {
    for seed in 0..50 {
        let e = conjugacy_case(seed);
        assert!(e.worst() < 1e-6, "seed {seed}: {e:?}");
    }
}

#[test]
fn recursive_exposure_matches_direct_sum() {
    for seed in 0..100 {
        let c = recursion_case(seed);
        assert!(c.worst < 1e-10, "seed {seed}: relative error {}", c.worst);
        assert_eq!(c.ops.subject_terms, c.subjects);
        assert!(c.ops.bin_steps <= 2 * c.bins, "seed {seed}: {:?}", c.ops);
    }
}

#[test]
fn cumulative_baseline_identity_holds_to_rounding() {
    for seed in 0..100 {
        let w = identity_case(seed);
        assert!(w <= 1.0, "seed {seed}: {w} units of B·eps");
    }
}

#[test]
fn nph_without_time_splits_reproduces_ph() {
    for seed in 0..3 {
        let w = nph_matches_ph(seed, 30);
        assert!(w < 1e-12, "seed {seed}: {w}");
    }
}

#[test]
fn short_geweke_runs_are_consistent() {
    for mode in [Mode::Ph, Mode::Nph] {
        for s in geweke(mode, 3000, 7) {
            assert!(s.z().abs() < 4.0, "{mode:?} {}: {s:?}", s.name);
        }
    }
}

#[test]
fn additive_projection_matches_joint_solve() {
    let w = additive_vs_exact();
    assert!(w < 1e-6, "{w}");
}

#[test]
fn best_split_matches_exhaustive_search() {
    for seed in 0..200 {
        let w = cart_vs_brute_force(seed);
        assert!(w < 1e-9, "seed {seed}: {w}");
    }
    for seed in 0..20 {
        let w = cart_tree_vs_brute_force(seed);
        assert!(w < 1e-9, "seed {seed}: {w}");
    }
}

#[test]
fn four_cell_means_are_recovered() {
    let (leaves, err) = cart_four_cells();
    assert_eq!(leaves, 4);
    assert!(err < 1e-12);
}

#[test]
fn r2_trivial_cases_are_exact() {
    assert_eq!(r2_trivial(), (Some(1.0), Some(0.0)));
}

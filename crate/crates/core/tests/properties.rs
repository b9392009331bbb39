use std::collections::VecDeque;

use grouptest_core::decoders::{comp_decode, dd_decode, enumerate_consistent_sets};
use grouptest_core::disguise::{
    aldridge_item_bound, construct_set, disguised_items, exact_disguise_prob, swap_preserves_outcomes, ScoreMode,
};
use grouptest_core::model::run_tests;
use grouptest_core::thresholds::phi;
use grouptest_core::{DefectiveSet, TestDesign};
use proptest::prelude::*;

fn design_strategy(max_n: usize, max_t: usize) -> impl Strategy<Value = TestDesign> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(0u64..(1 << n), 0..=max_t).prop_map(move |masks| {
            let tests = masks.iter().map(|&m| (0..n).filter(|&i| m >> i & 1 == 1).collect()).collect();
            TestDesign::new(n, tests).unwrap()
        })
    })
}

fn with_set(max_n: usize, max_t: usize) -> impl Strategy<Value = (TestDesign, DefectiveSet)> {
    design_strategy(max_n, max_t).prop_flat_map(|d| {
        let n = d.num_items();
        (Just(d), 0u64..(1 << n)).prop_map(|(d, m)| (d, DefectiveSet::from_mask(m)))
    })
}

/// Items within `radius` edges of `start`, by a plain BFS over the
/// bipartite item-test graph.
fn items_within(design: &TestDesign, start: usize, radius: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; design.num_items()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        if dist[i] + 2 > radius {
            continue;
        }
        for &t in design.item_tests(i) {
            for &j in design.test(t) {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 2;
                    queue.push_back(j);
                }
            }
        }
    }
    (0..design.num_items()).filter(|&j| dist[j] <= radius).collect()
}

proptest! {
    #[test]
    fn decoders_sandwich_truth((d, s) in with_set(12, 10)) {
        let y = run_tests(&d, &s).unwrap();
        let comp = comp_decode(&d, &y).unwrap().estimate;
        let dd = dd_decode(&d, &y).unwrap().estimate;
        prop_assert!(dd.is_subset(&s));
        prop_assert!(s.is_subset(&comp));
        prop_assert!(dd.is_subset(&comp));
    }

    #[test]
    fn comp_and_dd_are_consistent_bounds((d, s) in with_set(8, 6)) {
        let y = run_tests(&d, &s).unwrap();
        let comp = comp_decode(&d, &y).unwrap().estimate;
        let dd = dd_decode(&d, &y).unwrap().estimate;
        let sets = enumerate_consistent_sets(&d, &y, None).unwrap();
        prop_assert!(sets.contains(&s));
        for c in &sets {
            prop_assert!(dd.is_subset(c) && c.is_subset(&comp));
        }
        prop_assert_eq!(run_tests(&d, &comp).unwrap(), y);
    }

    #[test]
    fn disguise_grows_with_the_defective_set((d, s) in with_set(10, 8), extra in 0u64..1024) {
        let n = d.num_items();
        let bigger: DefectiveSet = s.members().iter().copied().chain((0..n).filter(|&i| extra >> i & 1 == 1)).collect();
        let before = disguised_items(&d, &s).unwrap();
        let after = disguised_items(&d, &bigger).unwrap();
        for i in 0..n {
            prop_assert!(!before[i] || after[i], "item {} lost disguise", i);
        }
    }

    #[test]
    fn disguised_swaps_keep_outcomes((d, s) in with_set(10, 8)) {
        let flags = disguised_items(&d, &s).unwrap();
        let n = d.num_items();
        for i in (0..n).filter(|&i| flags[i] && s.contains(i)) {
            for j in (0..n).filter(|&j| flags[j] && !s.contains(j)) {
                prop_assert!(swap_preserves_outcomes(&d, &s, i, j).unwrap());
            }
        }
    }

    #[test]
    fn product_bound_is_below_exact(d in design_strategy(10, 8), p in 0.05f64..0.5) {
        for i in 0..d.num_items() {
            let exact = exact_disguise_prob(&d, p, i).unwrap();
            let bound = aldridge_item_bound(&d, p, i).unwrap();
            prop_assert!(bound <= exact + 1e-12, "item {}: bound {} > exact {}", i, bound, exact);
        }
    }

    #[test]
    fn extracted_items_are_far_apart(d in design_strategy(14, 10), xi in 0.2f64..1.0) {
        let r = construct_set(&d, 0.3, xi, ScoreMode::ProductBound).unwrap();
        let reference = r.reference_design(&d);
        for (a, &x) in r.w.iter().enumerate() {
            let near = items_within(&reference, x, 4);
            for &y in &r.w[a + 1..] {
                prop_assert!(!near.contains(&y), "{} and {} within distance 4", x, y);
            }
        }
    }

    #[test]
    fn matrix_text_round_trips(d in design_strategy(12, 8)) {
        prop_assert_eq!(TestDesign::parse_matrix(&d.to_matrix_string()).unwrap(), d);
    }

    #[test]
    fn phi_is_a_probability_increasing_in_v(j in 1usize..8, s in 0.01f64..0.12, v in 0u64..200) {
        let a = phi(j, s, v).unwrap();
        let b = phi(j, s, v + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b + 1e-12 >= a);
    }
}

use bsst_core::blur_map::normalize;
use bsst_core::bsst::{build_plan, WindowPlan};
use bsst_core::config::Parity;
use bsst_core::init::Initializer;
use bsst_core::ops::{soft_composition, soft_split, softmax_in_place};
use bsst_core::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_is_shift_invariant(row in prop::collection::vec(-20.0f32..20.0, 1..40), shift in -50.0f32..50.0) {
        let mut a = row.clone();
        let mut b: Vec<f32> = row.iter().map(|v| v + shift).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        let sum: f32 = a.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-5);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn split_then_compose_roundtrips(
        h in 1usize..33,
        w in 1usize..33,
        c in 1usize..5,
        ps in prop::sample::select(vec![(4usize, 2usize), (2, 1), (1, 1), (3, 2), (4, 4)]),
        seed in any::<u64>(),
    ) {
        let x = Initializer::new(seed).range([h, w, c], -1.0, 1.0);
        let (p, s) = ps;
        let z = soft_split(&x, p, s).unwrap();
        let back = soft_composition(&z, p, s, h, w).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-6);
    }

    #[test]
    fn normalization_ignores_scale(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let bhat = Initializer::new(seed).range([3, 4, 5], 0.0, 10.0);
        let (b1, a1) = normalize(&bhat).unwrap();
        let (b2, _) = normalize(&bhat.map(|v| v * scale)).unwrap();
        prop_assert!(b1.max_abs_diff(&b2) <= 1e-5);
        for (b, a) in b1.data().iter().zip(a1.data()) {
            prop_assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn plans_are_consistent(
        seed in any::<u64>(),
        t in 1usize..9,
        theta in 0.0f32..1.0,
        k_q in 1usize..10,
        k_kv in 1usize..10,
        parity in prop::sample::select(vec![Parity::Odd, Parity::Even, Parity::Off]),
    ) {
        let u = Initializer::new(seed).range([t, 3, 3], 0.0, 1.0);
        let plan = build_plan(&u, theta, k_q, k_kv, parity).unwrap();
        prop_assert_eq!(plan.selected_windows(), plan.mask.count());
        let eligible = match parity.eligible_count(t) { 0 => t, n => n };
        for WindowPlan { row, col, query_frames, kv_frames } in &plan.windows {
            prop_assert!(plan.mask.get(*row, *col));
            prop_assert_eq!(query_frames.len(), k_q.min(t));
            prop_assert_eq!(kv_frames.len(), k_kv.min(eligible));
            let mut q = query_frames.clone();
            q.sort();
            q.dedup();
            prop_assert_eq!(q.len(), query_frames.len());
            if parity.eligible_count(t) > 0 {
                prop_assert!(kv_frames.iter().all(|&f| parity.admits(f)));
            }
        }
        // token conservation: each processed query token is counted once
        prop_assert_eq!(plan.sparse_query_tokens([2, 2]), plan.selected_windows() * k_q.min(t) * 4);
    }

    #[test]
    fn selection_is_permutation_safe(seed in any::<u64>(), t in 2usize..8) {
        // relabelling frames relabels the chosen frames
        let u = Initializer::new(seed).range([t, 1, 1], 0.0, 1.0);
        let rev = Tensor::new([t, 1, 1], u.data().iter().rev().cloned().collect()).unwrap();
        let a = build_plan(&u, 0.0, 2, 2, Parity::Off).unwrap();
        let b = build_plan(&rev, 0.0, 2, 2, Parity::Off).unwrap();
        let mapped: Vec<usize> = b.windows[0].query_frames.iter().map(|f| t - 1 - f).collect();
        let mut x = a.windows[0].query_frames.clone();
        let mut y = mapped;
        x.sort();
        y.sort();
        prop_assert_eq!(x, y);
    }
}

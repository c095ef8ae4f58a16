use approx::assert_relative_eq;
use nalgebra::{Matrix4, SymmetricEigen};
use proptest::prelude::*;

use kinkwatch_core::data::augment_three_points;
use kinkwatch_core::harness::montecarlo::{wilson_interval, Z95};
use kinkwatch_core::linalg::jacobi_eigen;
use kinkwatch_core::model::{init_draws, phi};
use kinkwatch_core::reduced::{fixed_pattern_gradient, sigma_moments, step_reduced};
use kinkwatch_core::rng::derive_seed;
use kinkwatch_core::{
    activation_pattern, forward, gradient, in_region, init_weights, regression_summary, Dataset,
    Hyperparams, InitSpec, ReducedState, Sign, Weights,
};

fn weights(m: usize) -> impl Strategy<Value = Weights> {
    (
        prop::collection::vec(-2.0..2.0f64, m),
        prop::collection::vec(-1.0..1.0f64, m),
        -1.0..1.0f64,
        prop::collection::vec(-2.0..2.0f64, m),
    )
        .prop_map(|(a, b, c, w)| Weights { a, b, c, w })
}

fn two_sided(max: usize) -> impl Strategy<Value = Dataset> {
    (
        prop::collection::vec((0.2..4.0f64, -3.0..3.0f64), 2..max),
        prop::collection::vec((0.2..4.0f64, -3.0..3.0f64), 2..max),
    )
        .prop_map(|(pos, neg)| {
            let pts = pos
                .into_iter()
                .chain(neg.into_iter().map(|(x, y)| (-x, y)))
                .collect();
            Dataset::for_training(pts).unwrap()
        })
}

fn zero_bias(m: usize) -> impl Strategy<Value = Weights> {
    (
        prop::collection::vec(prop_oneof![-2.0..-0.1f64, 0.1..2.0f64], m),
        prop::collection::vec(-1.0..1.0f64, m),
    )
        .prop_map(|(a, w)| Weights {
            b: vec![0.0; a.len()],
            c: 0.0,
            a,
            w,
        })
}

proptest! {
    #[test]
    fn network_is_affine_between_kinks(w in weights(5), alpha in -0.5..0.5f64, x0 in -4.0..4.0f64) {
        let params = Hyperparams::new(alpha, 5, 0.1).unwrap();
        let kinks: Vec<f64> = (0..5).filter(|&i| w.a[i] != 0.0).map(|i| -w.b[i] / w.a[i]).collect();
        let gap = kinks.iter().map(|k| (k - x0).abs()).fold(1.0f64, f64::min);
        prop_assume!(gap > 1e-3);
        let r = gap * 0.9;
        let mid = forward(&w, &params, x0);
        let avg = 0.5 * (forward(&w, &params, x0 - r) + forward(&w, &params, x0 + r));
        prop_assert!((mid - avg).abs() < 1e-12 * (1.0 + mid.abs()));
    }

    #[test]
    fn leaky_activation_is_positively_homogeneous(t in -5.0..5.0f64, s in 0.01..10.0f64, alpha in -0.9..0.9f64) {
        assert_relative_eq!(phi(s * t, alpha), s * phi(t, alpha), max_relative = 1e-14, epsilon = 1e-300);
    }

    #[test]
    fn frozen_pattern_gradient_matches_full(w0 in zero_bias(6), data in two_sided(8), drift in 0.0..0.05f64) {
        let params = Hyperparams::new(0.0, 6, 0.1).unwrap();
        let mut w = w0.clone();
        for i in 0..6 {
            w.b[i] += drift * w.a[i].abs();
        }
        prop_assume!(in_region(&w, &w0, data.x_underbar()));
        let tau = activation_pattern(&w0);
        let full = gradient(&w, &params, &data).unwrap();
        let fixed = fixed_pattern_gradient(&w, &params, &data, &tau).unwrap();
        for i in 0..6 {
            prop_assert!((full.da[i] - fixed.da[i]).abs() < 1e-12);
            prop_assert!((full.db[i] - fixed.db[i]).abs() < 1e-12);
            prop_assert!((full.dw[i] - fixed.dw[i]).abs() < 1e-12);
        }
        prop_assert!((full.dc - fixed.dc).abs() < 1e-12);
    }

    #[test]
    fn moment_matrices_stay_psd_under_reduced_steps(w0 in zero_bias(8), data in two_sided(10), alpha in 0.0..0.3f64) {
        let summary = regression_summary(&data);
        let params = Hyperparams::new(alpha, 8, 0.02).unwrap();
        let tau = activation_pattern(&w0);
        let mut state = ReducedState::from_weights(&w0, &tau);
        for _ in 0..50 {
            state = step_reduced(&state, &summary, &params).unwrap();
            for s in Sign::BOTH {
                let sig = state.sigma.get(s);
                let ev = SymmetricEigen::new(*sig).eigenvalues;
                prop_assert!(ev.min() >= -1e-10 * (1.0 + sig.norm()));
            }
        }
    }

    #[test]
    fn optimum_beats_any_affine_fit(data in two_sided(10), dp in -1.0..1.0f64, dq in -1.0..1.0f64) {
        let s = regression_summary(&data);
        let opt = s.v_opt().unwrap();
        let loss = |shift: f64, side_shift: (f64, f64)| -> f64 {
            data.points().iter().map(|&(x, y)| {
                let v = opt[Sign::of(x).unwrap().index()];
                let (p, q) = if x > 0.0 { (v[0] + shift * side_shift.0, v[1] + shift * side_shift.1) } else { (v[0], v[1]) };
                (y - p * x - q).powi(2)
            }).sum::<f64>() / (2.0 * data.len() as f64)
        };
        let best = s.best_affine_loss.unwrap();
        prop_assert!((loss(0.0, (dp, dq)) - best).abs() < 1e-12 * (1.0 + best));
        prop_assert!(loss(1.0, (dp, dq)) >= best - 1e-12);
    }

    #[test]
    fn augmentation_extends_and_zeroes_intercepts(
        pts in prop::collection::vec((prop_oneof![-4.0..-0.1f64, 0.1..4.0f64], -3.0..3.0f64), 1..12),
    ) {
        let data = Dataset::for_training(pts).unwrap();
        let aug = augment_three_points(&data).unwrap();
        prop_assert!(aug.len() >= data.len() && aug.len() <= data.len() + 3);
        prop_assert_eq!(&aug.points()[..data.len()], data.points());
        let s = regression_summary(&aug);
        prop_assert!(s.both_invertible());
        prop_assert!(s.psi_q < 1e-9);
    }

    #[test]
    fn initialization_follows_draws(seed in any::<u64>(), m in 1usize..64) {
        let spec = InitSpec::he(seed);
        let w = init_weights(&spec, &Hyperparams::new(0.0, m, 0.1).unwrap()).unwrap();
        let (a, z) = init_draws(&spec, m).unwrap();
        prop_assert_eq!(&w.a, &a);
        prop_assert!(w.b.iter().all(|&b| b == 0.0) && w.c == 0.0);
        for (wi, zi) in w.w.iter().zip(&z) {
            prop_assert!((wi * (m as f64).sqrt() - zi).abs() <= 1e-12 * zi.abs());
        }
    }

    #[test]
    fn moments_are_sums_over_pattern(w in zero_bias(7)) {
        let tau = activation_pattern(&w);
        let sig = sigma_moments(&w, &tau);
        let total: f64 = w.w.iter().zip(&w.a).map(|(wi, ai)| wi * ai).sum();
        prop_assert!((sig.wa(Sign::Pos) + sig.wa(Sign::Neg) - total).abs() < 1e-12);
        prop_assert!(sig.aa(Sign::Pos) >= 0.0 && sig.aa(Sign::Neg) >= 0.0);
    }

    #[test]
    fn jacobi_agrees_with_library_eigensolver(entries in prop::collection::vec(-5.0..5.0f64, 16)) {
        let raw = Matrix4::from_row_slice(&entries);
        let sym = (raw + raw.transpose()) * 0.5;
        let ours = jacobi_eigen(&sym).unwrap();
        let mut lib: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        lib.sort_by(|a, b| b.total_cmp(a));
        for (k, expected) in lib.iter().enumerate() {
            prop_assert!((ours.values[k] - expected).abs() < 1e-10 * (1.0 + sym.norm()));
            let v = ours.vectors.column(k);
            prop_assert!((sym * v - v * ours.values[k]).norm() < 1e-9 * (1.0 + sym.norm()));
        }
    }

    #[test]
    fn flat_round_trip(w in weights(4)) {
        let back = Weights::from_flat(&w.to_flat(), 4).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1u64..5000, frac in 0.0..=1.0f64) {
        let k = (frac * n as f64).floor() as u64;
        let (lo, hi) = wilson_interval(k, n, Z95);
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=p).contains(&lo) && (p..=1.0).contains(&hi));
    }

    #[test]
    fn derived_seeds_separate_streams(base in any::<u64>(), index in 0u64..1_000_000) {
        let seeds: Vec<u64> = (0..4).map(|s| derive_seed(base, index, s)).collect();
        for i in 0..4 {
            for j in (i + 1)..4 {
                prop_assert_ne!(seeds[i], seeds[j]);
            }
            prop_assert_ne!(seeds[i], derive_seed(base, index + 1, i as u64));
        }
    }
}

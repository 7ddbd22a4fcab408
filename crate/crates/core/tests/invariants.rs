//! Property tests over random inputs.

use lpom::apg::ThetaSchedule;
use lpom::lifted::{
    contraction_rho, iterate_fixed_point, Damping, FixedPointMap, FixedPointOptions, HiddenBlockMap, NetworkState,
    Penalties,
};
use lpom::{Activation, Checkpoint, Matrix, Quadrature, Weights};
use proptest::prelude::*;

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Sigmoid),
        Just(Activation::Tanh),
        Just(Activation::Relu),
        (0.01f64..0.9).prop_map(Activation::LeakyRelu),
        (0.1f64..3.0).prop_map(Activation::Elu),
    ]
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

proptest! {
    // f̃(x) + g̃(z) − xz ≥ c, with equality at x = φ(z). Both antiderivatives start at
    // 0, so c is the value at z = 0.
    #[test]
    fn fenchel_young(act in activation(), z in -6.0f64..6.0, x_raw in -6.0f64..6.0) {
        let c = act.f_tilde(act.eval(0.0), Quadrature::Forbidden).unwrap().finite().unwrap();
        let g = act.g_tilde(z, Quadrature::Forbidden).unwrap();
        let at = act.eval(z);
        let f_at = act.f_tilde(at, Quadrature::Forbidden).unwrap().finite().unwrap();
        prop_assert!((f_at + g - at * z - c).abs() <= 1e-9 * (1.0 + (at * z).abs()));

        let (lo, hi) = act.range_closure();
        let x = x_raw.clamp(lo.max(-6.0) + 1e-9, hi.min(6.0) - 1e-9);
        if let Some(f) = act.f_tilde(x, Quadrature::Forbidden).unwrap().finite() {
            prop_assert!(f + g - x * z - c >= -1e-9 * (1.0 + (x * z).abs()));
        }
    }

    #[test]
    fn theta_stays_in_unit_interval_and_increases(steps in 1usize..500) {
        let mut prev = 0.0;
        for s in ThetaSchedule::new().take(steps) {
            prop_assert!(s.theta > prev && s.theta < 1.0);
            prev = s.theta;
        }
    }

    #[test]
    fn checkpoint_round_trip(act in activation(), w0 in matrix(3, 5, 2.0), w1 in matrix(2, 4, 2.0), bias in any::<bool>()) {
        let layers = if bias {
            vec![w0, w1]
        } else {
            vec![w0.column_range(0, 4), w1.column_range(0, 3)]
        };
        let ckpt = Checkpoint::new(Weights::new(layers, bias).unwrap(), act);
        let bytes = ckpt.to_bytes();
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    // The hidden-block map is ρ-Lipschitz, and damping leaves its fixed points alone.
    #[test]
    fn hidden_map_is_rho_lipschitz(
        w0 in matrix(4, 4, 1.0),
        w1 in matrix(2, 5, 1.0),
        x0 in matrix(3, 5, 1.0),
        a in matrix(4, 5, 0.9),
        b in matrix(4, 5, 0.9),
        x2 in matrix(2, 5, 0.9),
        mu in 0.5f64..4.0,
    ) {
        let act = Activation::Tanh;
        let weights = Weights::new(vec![w0, w1], true).unwrap();
        let state = NetworkState::new(weights, vec![x0, a.clone(), x2], act, Penalties::new(vec![1.0, mu]).unwrap()).unwrap();
        let rho = contraction_rho(&state, 1).unwrap();
        let map = HiddenBlockMap::new(&state, 1).unwrap();
        let d_in = a.sub(&b).unwrap().frobenius_norm();
        let d_out = map.apply(&a).unwrap().sub(&map.apply(&b).unwrap()).unwrap().frobenius_norm();
        prop_assert!(d_out <= rho * d_in * (1.0 + 1e-12) + 1e-15);

        let opts = FixedPointOptions { max_iter: 5000, tol: 1e-14, damping: Damping::Safeguard };
        let solve = iterate_fixed_point(&map, &a, opts).unwrap();
        if solve.converged {
            let gap = map.apply(&solve.x).unwrap().sub(&solve.x).unwrap().frobenius_norm();
            prop_assert!(gap <= 1e-10 * (1.0 + solve.x.frobenius_norm()));
        }
    }
}

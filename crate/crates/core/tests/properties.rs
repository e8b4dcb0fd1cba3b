use std::collections::BTreeMap;

use proptest::prelude::*;

use pdesym::canon::{canonicalize, equivalent};
use pdesym::datagen::sine_modes;
use pdesym::eval::Evaluator;
use pdesym::expr::{
    from_tokens, parse_expr, to_canonical_tokens, to_manual_tokens, DerivVar, Equation, Expr,
};
use pdesym::filter::{normalize_log_weights, resample_indices};
use pdesym::metrics::{r2_score, rel_l2, PolySurrogate};
use pdesym::perturb::{swap_branches, PerturbConfig};
use pdesym::rng;
use pdesym::solver::{solve, ConservationLaw, FluxKind, Grid1D};

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-5.0f64..5.0).prop_map(Expr::Const),
        (-3i64..6).prop_map(Expr::Int),
        prop_oneof![Just("x"), Just("t"), Just("x_1")].prop_map(Expr::var),
        Just(Expr::Field),
        Just(Expr::field_deriv(DerivVar::T, 1)),
        (1u32..=3).prop_map(|n| Expr::field_deriv(DerivVar::X, n)),
    ]
}

fn combine(inner: BoxedStrategy<Expr>, with_derivs: bool) -> BoxedStrategy<Expr> {
    let base = prop_oneof![
        inner.clone().prop_map(Expr::sin),
        inner.clone().prop_map(Expr::cos),
        inner.clone().prop_map(Expr::neg),
        (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
        (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
        (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
        (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
        (inner.clone(), -2i64..4).prop_map(|(a, n)| Expr::pow(a, n)),
    ];
    if with_derivs {
        prop_oneof![
            8 => base,
            1 => (inner, prop_oneof![Just(DerivVar::X), Just(DerivVar::T)])
                .prop_map(|(a, v)| Expr::deriv(a, v, 1)),
        ]
        .boxed()
    } else {
        base.boxed()
    }
}

fn tree(depth: u32, with_derivs: bool) -> BoxedStrategy<Expr> {
    if depth == 0 {
        return leaf().boxed();
    }
    prop_oneof![
        1 => leaf(),
        4 => combine(tree(depth - 1, with_derivs), with_derivs),
    ]
    .boxed()
}

/// Trees built only from nodes with a direct token in the stored-order dialect.
fn manual_expr() -> BoxedStrategy<Expr> {
    tree(6, false)
}

/// Trees that may also differentiate composite subexpressions.
fn general_expr() -> BoxedStrategy<Expr> {
    tree(6, true)
}

fn surrogate(seed: u64) -> PolySurrogate {
    PolySurrogate::random(&mut rng::stream(seed, &[]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn manual_tokens_round_trip(e in manual_expr()) {
        let eq = Equation::new(e);
        let seq = to_manual_tokens(&eq).unwrap();
        prop_assert_eq!(from_tokens(&seq).unwrap(), eq);
    }

    #[test]
    fn infix_display_round_trips(e in manual_expr()) {
        let printed = e.to_string();
        let parsed = parse_expr(&printed).unwrap();
        prop_assert!(equivalent(&e, &parsed) || canonicalize(&e).is_err(), "{}", printed);
    }

    #[test]
    fn canonical_tokens_are_a_fixed_point(e in general_expr()) {
        let eq = Equation::new(e);
        let Ok(seq) = to_canonical_tokens(&eq) else { return Ok(()) };
        let decoded = from_tokens(&seq).unwrap();
        prop_assert_eq!(to_canonical_tokens(&decoded).unwrap(), seq);
    }

    #[test]
    fn canonicalize_is_idempotent(e in general_expr()) {
        let Ok(c) = canonicalize(&e) else { return Ok(()) };
        prop_assert_eq!(canonicalize(&c).unwrap(), c);
    }

    #[test]
    fn swapping_never_changes_canonical_tokens(e in general_expr(), seed in any::<u64>()) {
        let Ok(reference) = to_canonical_tokens(&Equation::new(e.clone())) else { return Ok(()) };
        let cfg = PerturbConfig { swap_prob: 0.5, seed, ..PerturbConfig::default() };
        let swapped = swap_branches(&e, &cfg);
        prop_assert_eq!(to_canonical_tokens(&Equation::new(swapped)).unwrap(), reference);
    }

    #[test]
    fn canonical_form_evaluates_like_the_input(
        e in general_expr(),
        seed in 0u64..1000,
        x in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let Ok(c) = canonicalize(&e) else { return Ok(()) };
        let field = surrogate(seed);
        let vars = BTreeMap::from([("x_1".to_string(), 0.7)]);
        let ev = Evaluator::with_vars(&field, vars);
        let (Ok(a), Ok(b)) = (ev.eval(&e, x, t), ev.eval(&c, x, t)) else { return Ok(()) };
        prop_assume!(a.is_finite() && b.is_finite() && a.abs() < 1e6);
        prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{} vs {} for {}", a, b, e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inviscid_solutions_conserve_mass_and_bounds(
        amps in prop::collection::vec(-0.5f64..0.5, 5),
        phases in prop::collection::vec(0.0f64..6.28, 5),
        flux in prop_oneof![Just(FluxKind::Quadratic), Just(FluxKind::Cubic), Just(FluxKind::Sine)],
        q1 in 0.2f64..1.2,
    ) {
        let grid = Grid1D::periodic(64, 0.0, 1.0).unwrap();
        let u0 = sine_modes(&grid, 1.0, &amps, &phases);
        prop_assume!(u0.iter().any(|v| *v != 0.0));
        let law = ConservationLaw::new(flux, q1, 0.0).unwrap();
        let field = solve(&law, &u0, &grid, 0.5, 6).unwrap();
        let m0 = grid.integral(&u0);
        let (lo, hi) = u0.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        for frame in field.frames() {
            prop_assert!((grid.integral(frame) - m0).abs() <= 1e-12 * (1.0 + m0.abs()));
            prop_assert!(frame.iter().all(|v| *v >= lo - 1e-10 && *v <= hi + 1e-10));
        }
    }

    #[test]
    fn viscous_solutions_stay_bounded(
        amps in prop::collection::vec(-0.5f64..0.5, 5),
        q2 in 0.01f64..0.1,
    ) {
        let grid = Grid1D::periodic(64, 0.0, 1.0).unwrap();
        let u0 = sine_modes(&grid, 1.0, &amps, &[0.3, 1.1, 2.0, 4.0, 5.5]);
        prop_assume!(u0.iter().any(|v| *v != 0.0));
        let law = ConservationLaw::new(FluxKind::Quadratic, 0.5, q2).unwrap();
        let field = solve(&law, &u0, &grid, 0.2, 3).unwrap();
        let m0 = grid.integral(&u0);
        for frame in field.frames() {
            prop_assert!((grid.integral(frame) - m0).abs() <= 1e-12 * (1.0 + m0.abs()));
            prop_assert!(frame.iter().all(|v| v.abs() <= 1.0 + 1e-10));
        }
    }
}

proptest! {
    #[test]
    fn weights_normalize(log_w in prop::collection::vec(-1e4f64..1e4, 1..200)) {
        let w = normalize_log_weights(&log_w).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn resampled_indices_have_positive_weight(
        weights in prop::collection::vec(0.0f64..1.0, 1..50),
        seed in any::<u64>(),
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        let idx = resample_indices(&w, 100, &mut rng::stream(seed, &[]));
        prop_assert!(idx.iter().all(|&i| i < w.len() && w[i] > 0.0));
    }

    #[test]
    fn rel_l2_is_scale_invariant(
        u in prop::collection::vec(-10.0f64..10.0, 1..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        prop_assume!(u.iter().any(|v| v.abs() > 1e-3));
        let v: Vec<f64> = u.iter().zip(&noise).map(|(a, n)| a + n).collect();
        let (cu, cv): (Vec<f64>, Vec<f64>) = u.iter().zip(&v).map(|(a, b)| (c * a, c * b)).unzip();
        let base = rel_l2(&u, &v).unwrap();
        prop_assert!((rel_l2(&cu, &cv).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn r2_never_exceeds_one(
        u in prop::collection::vec(-5.0f64..5.0, 2..30),
        v in prop::collection::vec(-5.0f64..5.0, 30),
    ) {
        let v = &v[..u.len()];
        match r2_score(&[u.clone()], &[v.to_vec()]) {
            Ok(r2) => {
                prop_assert!(r2 <= 1.0);
                prop_assert_eq!(r2 == 1.0, u.as_slice() == v);
            }
            Err(_) => prop_assert!(u.iter().all(|a| *a == u[0])),
        }
    }
}

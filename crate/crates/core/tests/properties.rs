use std::sync::Arc;

use acx::calculus::{apply, integrability_check, INTEGRABILITY_TOL, identity_residuals, op_dbar, op_partial, op_theta, op_thetabar, FormRef, Op};
use acx::config::Config;
use acx::field::{common, FieldRef, Product, ScalarField};
use acx::forms::RandomForm;
use acx::frame::Frame;
use acx::geometry::{GridBox, Point};
use acx::hessian::{hermitian_defect, i_ddbar, min_eigenvalue};
use acx::smoothing::RegularizedMax;
use acx::structure::{similarity_structure, square_residual, PolyMatrix, StructureSpec};
use acx::tj::{tj_apply, tj_field};
use proptest::prelude::*;

fn frame(spec: &str) -> Frame<f64> {
    let grid = GridBox::cube(1.0, 5).unwrap();
    let s: StructureSpec = spec.parse().unwrap();
    Frame::new(s.build(&grid).unwrap())
}

fn point() -> impl Strategy<Value = Point<f64>> {
    prop::array::uniform4(-0.6f64..0.6).prop_map(Point)
}

fn structure() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("jst".to_string()),
        (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(b, c)| format!("ja:{b}*x1*x2+{c}*y1")),
        (-0.5f64..0.5).prop_map(|c| format!("ja:{c}*x1*y2")),
        (0u64..20).prop_map(|s| format!("similarity:{s}")),
    ]
}

fn bidegree() -> impl Strategy<Value = (i32, i32)> {
    prop::sample::select(vec![(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2)])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn similarity_structures_square_to_minus_one(seed in 0u64..200, p in point()) {
        let grid = GridBox::cube(1.0, 5).unwrap();
        let j = StructureSpec::Similarity(seed).build::<f64>(&grid).unwrap();
        prop_assert!(square_residual(&j.matrix(&p)) < 1e-9);
    }

    #[test]
    fn coframe_is_dual_to_frame(spec in structure(), p in point()) {
        let fj = frame(&spec).at(&p, 1).unwrap();
        prop_assert!(fj.duality_residual() < 1e-10);
    }

    #[test]
    fn operators_shift_bidegree(spec in structure(), (p, q) in bidegree(), seed in 0u64..1000, x in point()) {
        let fj = frame(&spec).at(&x, 2).unwrap();
        let w = RandomForm::new(p, q, seed).at::<f64>(&x, 2);
        for op in [Op::Partial, Op::Dbar, Op::Theta, Op::ThetaBar] {
            let out = apply(op, &w, &fj);
            let (dp, dq) = op.shift();
            prop_assert_eq!((out.p, out.q), (p + dp, q + dq));
            if p + dp > 2 || q + dq > 2 {
                prop_assert_eq!(out.sup_value(), 0.0);
            }
        }
    }

    #[test]
    fn conjugation_swaps_partial_and_dbar(spec in structure(), (p, q) in bidegree(), seed in 0u64..1000, x in point()) {
        let fj = frame(&spec).at(&x, 2).unwrap();
        let w = RandomForm::new(p, q, seed).at::<f64>(&x, 2);
        let a = op_dbar(&w.conj(), &fj);
        let b = op_partial(&w, &fj).conj();
        prop_assert!(a.sub(&b).sup_value() < 1e-10);
        let a = op_thetabar(&w.conj(), &fj);
        let b = op_theta(&w, &fj).conj();
        prop_assert!(a.sub(&b).sup_value() < 1e-10);
    }

    #[test]
    fn identities_hold_on_random_forms(spec in structure(), (p, q) in bidegree(), seed in 0u64..1000, x in point()) {
        let form: FormRef<f64> = Arc::new(RandomForm::new(p, q, seed));
        for r in identity_residuals(&frame(&spec), &[form], &[x], None).unwrap() {
            prop_assert!(r.sup_residual <= 1e-8, "{} {}", r.identity, r.sup_residual);
        }
    }

    #[test]
    fn complex_hessian_is_hermitian_and_linear(
        spec in structure(), s1 in 0u64..500, s2 in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0, x in point()
    ) {
        let f = frame(&spec);
        let (u, us) = common::random_smooth::<f64>(s1, 0.3);
        let (v, vs) = common::random_smooth::<f64>(s2, 0.3);
        let w = common::expr::<f64>(&format!("{a}*({us})+{b}*({vs})")).unwrap();
        let (hu, hv, hw) = (i_ddbar(u.as_ref(), &f, &x).unwrap(), i_ddbar(v.as_ref(), &f, &x).unwrap(), i_ddbar(w.as_ref(), &f, &x).unwrap());
        prop_assert!(hermitian_defect(&hu) < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((hw[i][j] - (hu[i][j] * a + hv[i][j] * b)).norm() < 1e-10);
            }
        }
        let c = i_ddbar(common::constant::<f64>(3.5).as_ref(), &f, &x).unwrap();
        prop_assert_eq!(c.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn tj_is_a_derivation(spec in structure(), s1 in 0u64..500, s2 in 0u64..500, x in point()) {
        let f = frame(&spec);
        let (u, _) = common::random_smooth::<f64>(s1, 0.3);
        let (v, _) = common::random_smooth::<f64>(s2, 0.3);
        let uv: FieldRef<f64> = Arc::new(Product(u.clone(), v.clone()));
        let t = |g: &FieldRef<f64>| tj_apply(g, &f, &x, None).unwrap();
        let lhs = t(&uv);
        let rhs = t(&v) * u.value(&x) + t(&u) * v.value(&x);
        prop_assert!((lhs - rhs).norm() < 1e-6);
        prop_assert!(lhs.im.abs() < 1e-8);
    }

    #[test]
    fn pluriharmonic_shift_keeps_lambda_min(seed in 0u64..500, c in -3.0f64..3.0, x in point()) {
        let f = frame("jst");
        let (u, us) = common::random_smooth::<f64>(seed, 0.3);
        let shifted = common::expr::<f64>(&format!("{us}+{c}*x1")).unwrap();
        let a = min_eigenvalue(&i_ddbar(u.as_ref(), &f, &x).unwrap());
        let b = min_eigenvalue(&i_ddbar(shifted.as_ref(), &f, &x).unwrap());
        prop_assert!((a - b).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn rescaled_seeds_rescale_tj(c1 in 0.3f64..3.0, c2 in 0.3f64..3.0, b in 0.2f64..1.0, x in point()) {
        let grid = GridBox::cube(1.0, 5).unwrap();
        let j = StructureSpec::Ja(format!("{b}*x1*x2")).build::<f64>(&grid).unwrap();
        let base = Frame::new(j.clone());
        let scaled = Frame::with_seeds(j, [[c1, 0.0, 0.0, 0.0], [0.0, 0.0, c2, 0.0]]);
        let t0 = tj_field(&base, &x, None).unwrap().components;
        let t1 = tj_field(&scaled, &x, None).unwrap().components;
        let n0 = t0.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(n0 > 1e-6);
        let k = t0.iter().zip(&t1).map(|(a, b)| a * b).sum::<f64>() / (n0 * n0);
        for m in 0..4 {
            prop_assert!((t1[m] - k * t0[m]).abs() < 1e-8 * (1.0 + k.abs()));
        }
        let zero = StructureSpec::Ja(format!("{b}*x1*y1")).build::<f64>(&grid).unwrap();
        let t = tj_field(&Frame::with_seeds(zero, [[c1, 0.0, 0.0, 0.0], [0.0, 0.0, c2, 0.0]]), &x, None).unwrap();
        prop_assert!(t.components.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn constant_similarity_is_integrable(m in prop::array::uniform4(prop::array::uniform4(-0.3f64..0.3))) {
        let grid = GridBox::cube(1.0, 3).unwrap();
        let s: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] + if i == j { 1.0 } else { 0.0 }));
        let j = similarity_structure::<f64>(PolyMatrix::constant(s), "constant", &grid);
        prop_assume!(j.is_ok());
        let r = integrability_check(&Frame::new(j.unwrap()), &grid, INTEGRABILITY_TOL).unwrap();
        prop_assert!(r.integrable, "{}", r.sup_norm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn regularized_max_bounds(x in -5.0f64..5.0, y in -5.0f64..5.0, s in 1e-3f64..2.0) {
        let m = RegularizedMax::new(s).unwrap();
        let v = m.eval(x, y);
        let hi = x.max(y);
        prop_assert!(v >= hi - 1e-12 && v <= hi + 0.25 * s + 1e-12);
        prop_assert!((v - m.eval(y, x)).abs() < 1e-12);
        if (x - y).abs() >= s {
            prop_assert_eq!(v, hi);
        }
        let wider = RegularizedMax::new(2.0 * s).unwrap();
        prop_assert!(wider.eval(x, y) >= v - 1e-12);
        prop_assert!(m.eval(x + 0.1, y) >= v - 1e-12);
    }

    #[test]
    fn regularized_max_is_associative_when_one_input_dominates(
        x in -5.0f64..5.0, gap in 0.0f64..4.0, y in -5.0f64..5.0, s in 1e-3f64..1.0
    ) {
        let m = RegularizedMax::new(s).unwrap();
        // z exceeds x and y by at least 2s, so it dominates every nesting
        let z = x.max(y) + 2.0 * s + gap;
        let a = m.eval(m.eval(x, y), z);
        let b = m.eval(x, m.eval(y, z));
        let c = m.eval(m.eval(x, z), y);
        prop_assert_eq!(a, z);
        prop_assert_eq!(b, z);
        prop_assert_eq!(c, z);
    }

    #[test]
    fn config_round_trips_through_its_header(
        seed in any::<u64>(), tol in 1e-12f64..1.0, res in 3usize..40, k in prop::collection::vec(1u32..100, 1..5)
    ) {
        let mut c = Config::new("pointmass", &["k_list"]);
        c.set("seed", &seed.to_string()).unwrap();
        c.set("tol", &tol.to_string()).unwrap();
        c.set("resolution", &res.to_string()).unwrap();
        let ks: Vec<String> = k.iter().map(|v| v.to_string()).collect();
        c.set("k_list", &ks.join(",")).unwrap();
        let text = c.header()[1..].join("\n");
        let back = Config::parse("pointmass", &["k_list"], &text).unwrap();
        prop_assert_eq!(back.seed().unwrap(), seed);
        prop_assert_eq!(back.get::<f64>("tol").unwrap(), Some(tol));
        prop_assert_eq!(back.list::<u32>("k_list").unwrap(), Some(k));
        prop_assert_eq!(back.entries().collect::<Vec<_>>(), c.entries().collect::<Vec<_>>());
    }
}

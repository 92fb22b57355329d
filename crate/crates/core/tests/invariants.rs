use approx::assert_relative_eq;
use proptest::prelude::*;

use plaplab::estimates::{bernstein_v, degiorgi_iterate};
use plaplab::fields::{ball_integral, divergence, gradient, Ball, Grid, ScalarField, VectorField};
use plaplab::lorentz::{layer_cake_quasinorm, quasinorm, rearrange, LorentzParams};
use plaplab::models::OperatorModel;
use plaplab::potentials::{p_potential, QuadratureSpec};
use plaplab::solver::{truncate_b, truncate_v};

const N: usize = 12;

fn grid() -> Grid {
    Grid::cube(2, N, 0.0, 1.0).unwrap()
}

/// Values on an `N×N` grid vanishing within two cells of the edge.
fn interior(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        let (r, c) = (i / N, i % N);
        if r < 2 || c < 2 || r >= N - 2 || c >= N - 2 {
            *v = 0.0;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn field_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_divergence_adjoint(phi in field_values(N * N), f in field_values(2 * N * N)) {
        let g = grid();
        let phi = ScalarField::new(g.clone(), interior(&phi)).unwrap().to_vector();
        let mut fv = vec![0.0; 2 * N * N];
        for k in 0..2 {
            let comp: Vec<f64> = (0..N * N).map(|i| f[2 * i + k]).collect();
            for (i, v) in interior(&comp).into_iter().enumerate() {
                fv[2 * i + k] = v;
            }
        }
        let big_f = VectorField::new(g, 2, fv).unwrap();
        let dphi = gradient(&phi).unwrap();
        let div = divergence(&big_f).unwrap();
        let lhs = dot(div.values(), phi.values()) + dot(big_f.values(), dphi.values());
        let scale = dot(big_f.values(), big_f.values()).sqrt() * dot(dphi.values(), dphi.values()).sqrt();
        prop_assert!(lhs.abs() <= 1e-10 * scale.max(1.0), "{lhs} vs {scale}");
    }

    #[test]
    fn disjoint_balls_add(values in field_values(N * N), r in 0.05f64..0.2) {
        let g = grid();
        let f = ScalarField::new(g, values).unwrap();
        let a = Ball::new(&[0.25, 0.5], r);
        let b = Ball::new(&[0.75, 0.5], r);
        let both = ball_integral(&f, &a).unwrap() + ball_integral(&f, &b).unwrap();
        let mut masked = f.clone();
        for (i, v) in masked.values_mut().iter_mut().enumerate() {
            let x = f.grid().point(i);
            if !a.contains(&x) && !b.contains(&x) {
                *v = 0.0;
            }
        }
        let whole = ball_integral(&masked, &Ball::new(&[0.5, 0.5], 1.0)).unwrap();
        prop_assert!((both - whole).abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn flux_is_homogeneous(p in 1.2f64..5.0, lambda in 0.01f64..100.0, z in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(z.iter().any(|v| v.abs() > 1e-3));
        let m = OperatorModel::p_laplace(p, 0.0).unwrap();
        let a = m.a_eval(&z).value;
        let zl: Vec<f64> = z.iter().map(|v| v * lambda).collect();
        let al = m.a_eval(&zl).value;
        for (x, y) in a.iter().zip(&al) {
            prop_assert!((y - lambda.powf(p - 1.0) * x).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn rearrangement_is_equimeasurable(levels in prop::collection::vec(0u8..6, N * N), scale in 0.1f64..10.0) {
        // few distinct values so ties are exercised
        let g = grid();
        let f = ScalarField::new(g.clone(), levels.iter().map(|&l| scale * l as f64 - 2.0).collect()).unwrap();
        let profile = rearrange(&f);
        for &t in f.values() {
            let t = t.abs();
            let count = f.values().iter().filter(|v| v.abs() > t).count();
            prop_assert_eq!(profile.measure_above(t), count as f64 * g.cell_volume());
        }
    }

    #[test]
    fn quasinorm_scaling_and_layer_cake(values in field_values(N * N), lambda in -10.0f64..10.0, gamma in 1.2f64..4.0, q in 0.5f64..3.0) {
        let g = grid();
        let f = ScalarField::new(g, values).unwrap();
        let params = LorentzParams::new(gamma, q).unwrap();
        let base = quasinorm(&rearrange(&f), params).unwrap();
        let scaled = quasinorm(&rearrange(&f.scale(lambda)), params).unwrap();
        prop_assert!((scaled - lambda.abs() * base).abs() <= 1e-12 * (1.0 + scaled));
        let cake = layer_cake_quasinorm(&f, params).unwrap();
        prop_assert!((cake - base).abs() <= 1e-10 * (1.0 + base));
    }

    #[test]
    fn potential_grows_with_radius(values in field_values(N * N), r in 0.1f64..0.3, lambda in -4.0f64..4.0) {
        let g = grid();
        let v = ScalarField::new(g, values).unwrap().to_vector();
        let x = [0.5, 0.5, 0.0];
        let spec = QuadratureSpec::default();
        let small = p_potential(&v, &x, r, spec).unwrap().value;
        let large = p_potential(&v, &x, 2.0 * r, spec).unwrap().value;
        prop_assert!(small <= large * (1.0 + 1e-12));
        let scaled = p_potential(&v.scale(lambda), &x, r, spec).unwrap().value;
        prop_assert!((scaled - lambda.abs() * small).abs() <= 1e-12 * (1.0 + scaled));
    }

    #[test]
    fn degiorgi_levels_never_decrease(values in prop::collection::vec(0.0f64..5.0, N * N), tilde in prop::collection::vec(-1.0f64..1.0, N * N), delta in 0.1f64..1.0) {
        let g = grid();
        let v = ScalarField::new(g.clone(), values).unwrap();
        let t = ScalarField::new(g, tilde).unwrap();
        let rep = degiorgi_iterate(&v, &t, &[0.5, 0.5, 0.0], 0.2, delta, 2.0).unwrap();
        prop_assert!(rep.levels_monotone());
        prop_assert!(rep.empirical_constant.is_finite());
    }

    #[test]
    fn bernstein_quantity_is_bounded_below(values in field_values(N * N), p in 1.5f64..4.0, eps in 1e-3f64..1e-1) {
        let g = grid();
        let u = ScalarField::new(g, values).unwrap().to_vector();
        let m = OperatorModel::p_laplace(p, 0.0).unwrap().regularize(eps, 2).unwrap();
        let v = bernstein_v(&u, &m).unwrap();
        let floor = m.s_eps.powf(p);
        prop_assert!(v.values().iter().all(|&x| x >= floor * (1.0 - 1e-12) && x > 0.0));
    }

    #[test]
    fn truncations_are_bounded(values in field_values(2 * N * N), eps in 1e-3f64..1.0, b in -100.0f64..100.0) {
        let g = grid();
        let v = VectorField::new(g, 2, values).unwrap();
        let t = truncate_v(&v, eps).unwrap();
        for (orig, cut) in v.values().iter().zip(t.values()) {
            prop_assert!(cut.abs() <= 1.0 / eps);
            prop_assert!(cut.abs() <= orig.abs() && cut * orig >= 0.0);
        }
        let tb = truncate_b(b, eps);
        prop_assert!(tb.abs() < 1.0 / eps && tb.abs() <= b.abs() && tb * b >= 0.0);
    }
}

#[test]
fn bernstein_quantity_on_affine_data() {
    let g = grid();
    let u = ScalarField::from_fn(&g, |x| 0.3 * x[0]).to_vector();
    let m = OperatorModel::p_laplace(2.0, 0.0).unwrap().regularize(0.01, 2).unwrap();
    let v = bernstein_v(&u, &m).unwrap();
    let expected = m.s_eps * m.s_eps + 0.09;
    for &x in v.values() {
        assert_relative_eq!(x, expected, max_relative = 1e-10);
    }
}

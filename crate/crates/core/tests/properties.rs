use prepinn_core::discretize::{Discretization, LinearizationState, ProblemSpec, SchemeOrder};
use prepinn_core::grid::{coordinate_channels, make_grid};
use prepinn_core::net::{forward, init_params, Activation, NetworkArch, NetworkKind};
use prepinn_core::oracle::{relative_l2, ReferenceSolution};
use prepinn_core::sparsela::{
    apply_minv, apply_minv_transpose, assemble_jacobian, color_columns, gmres, ilu0, probe_jacobian_dense, GmresOptions,
};
use prepinn_core::{Field, SparseMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cavity(n: usize, order: SchemeOrder, rng: &mut ChaCha8Rng) -> Discretization {
    let g = make_grid(n, n, [0.0, 1.0, 0.0, 1.0]).unwrap();
    let lin = LinearizationState::new(g, random_vec(rng, n * n), random_vec(rng, n * n)).unwrap();
    Discretization::new(g, ProblemSpec::cavity(100.0).with_order(order)).unwrap().with_linearization(lin).unwrap()
}

/// Random square pattern with a full diagonal and strictly dominant values.
fn random_dominant_sparse(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SparseMatrix {
    let mut t = Vec::new();
    for r in 0..n {
        let mut off = 0.0;
        for c in 0..n {
            if c != r && rng.random_bool(density) {
                let v = rng.random_range(-1.0..1.0);
                off += f64::abs(v);
                t.push((r, c, v));
            }
        }
        t.push((r, r, off + 1.0));
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

fn dense_mul(m: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * x[c]).sum()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cavity_residual_is_affine(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, fourth in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = if fourth { SchemeOrder::Fourth } else { SchemeOrder::Second };
        let disc = cavity(5, order, &mut rng);
        let n = disc.n_unknowns();
        let (w1, w2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let f0 = disc.residual(&vec![0.0; n]);
        let (f1, f2, fc) = (disc.residual(&w1), disc.residual(&w2), disc.residual(&combo));
        for k in 0..n {
            let expected = f0[k] + a * (f1[k] - f0[k]) + b * (f2[k] - f0[k]);
            prop_assert!((fc[k] - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn jvp_is_linear_in_the_direction(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disc = cavity(4, SchemeOrder::Second, &mut rng);
        let n = disc.n_unknowns();
        let (w, d1, d2) = (random_vec(&mut rng, n), random_vec(&mut rng, n), random_vec(&mut rng, n));
        let combo: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| a * x + y).collect();
        let (j1, j2, jc) = (disc.jvp(&w, &d1), disc.jvp(&w, &d2), disc.jvp(&w, &combo));
        for k in 0..n {
            let expected = a * j1[k] + j2[k];
            prop_assert!((jc[k] - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn greedy_coloring_is_always_valid(seed in any::<u64>(), n in 1usize..40, density in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = random_dominant_sparse(&mut rng, n, density);
        let coloring = color_columns(&pattern);
        prop_assert!(coloring.is_valid_for(&pattern));
        // brute force: no two same-colored columns share a row
        let dense = pattern.to_dense();
        for r in 0..n {
            let mut seen = std::collections::HashSet::new();
            for c in 0..n {
                if pattern.get(r, c).is_some() || dense[r * n + c] != 0.0 {
                    prop_assert!(seen.insert(coloring.color_of[c]));
                }
            }
        }
    }

    #[test]
    fn colored_jacobian_equals_probing_exactly(seed in any::<u64>(), fourth in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = if fourth { SchemeOrder::Fourth } else { SchemeOrder::Second };
        let disc = cavity(5, order, &mut rng);
        let w = random_vec(&mut rng, disc.n_unknowns());
        let pattern = disc.pattern();
        let j = assemble_jacobian(&disc, &w, &pattern, &color_columns(&pattern)).unwrap().jacobian;
        let probe = probe_jacobian_dense(&disc, &w);
        prop_assert!(j.to_dense().iter().zip(&probe).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ilu_is_pattern_exact_and_inverts_its_product(seed in any::<u64>(), n in 2usize..30, density in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = random_dominant_sparse(&mut rng, n, density);
        let fac = ilu0(&j).unwrap();
        prop_assert!(fac.pattern_defect(&j) <= 1e-12 * j.max_abs());
        let m = fac.product_dense();
        let x = random_vec(&mut rng, n);
        let back = apply_minv(&fac, &dense_mul(&m, n, &x)).unwrap();
        for k in 0..n {
            prop_assert!((back[k] - x[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn transposed_solve_is_the_adjoint(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fac = ilu0(&random_dominant_sparse(&mut rng, n, 0.2)).unwrap();
        let (r, f) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let lhs: f64 = apply_minv_transpose(&fac, &r).unwrap().iter().zip(&f).map(|(a, b)| a * b).sum();
        let rhs: f64 = r.iter().zip(apply_minv(&fac, &f).unwrap()).map(|(a, b)| a * b).sum();
        let scale: f64 = lhs.abs().max(rhs.abs()).max(1e-12);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn gmres_reports_convergence_truthfully(seed in any::<u64>(), n in 2usize..60, restart in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_dominant_sparse(&mut rng, n, 0.2);
        let fac = ilu0(&a).unwrap();
        let b = random_vec(&mut rng, n);
        let opts = GmresOptions { tol: 1e-9, restart, max_iter: 200 };
        let out = gmres(&a, &b, &fac, opts).unwrap();
        let ax = a.spmv(&out.x).unwrap();
        let res = ax.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if out.converged {
            prop_assert!(res <= 1e-9 * bn * (1.0 + 1e-6));
        }
        prop_assert!((res / bn - out.relative_residual).abs() <= 1e-12 + 1e-6 * out.relative_residual);
    }

    #[test]
    fn forward_is_pure(seed in 0u64..500, other in 0u64..500, gelu in any::<bool>()) {
        let act = if gelu { Activation::Gelu } else { Activation::Tanh };
        let g = make_grid(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let coords = coordinate_channels(&g);
        for kind in [NetworkKind::PerPointMlp, NetworkKind::ConvEncoderDecoder] {
            let arch = NetworkArch { kind, hidden: vec![3, 4], activation: act, outputs: 3 };
            let p = init_params(&arch, seed).unwrap();
            let q = init_params(&arch, other).unwrap();
            let first = forward(&p, &coords).unwrap().0;
            let _ = forward(&q, &coords).unwrap();
            let again = forward(&p, &coords).unwrap().0;
            prop_assert_eq!(first, again);
        }
    }

    #[test]
    fn activation_ranges(x in -50.0f64..50.0) {
        let t = Activation::Tanh.eval(x);
        prop_assert!(t.abs() <= 1.0);
        if x.abs() < 15.0 {
            prop_assert!(t.abs() < 1.0);
        }
        // GELU lies between min(0, x) and max(0, x)
        let ge = Activation::Gelu.eval(x);
        prop_assert!(ge >= x.min(0.0) - 0.2 && ge <= x.max(0.0));
    }

    #[test]
    fn relative_l2_is_scale_covariant(seed in any::<u64>(), c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = make_grid(4, 5, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let (u, r) = (random_vec(&mut rng, 60), random_vec(&mut rng, 60));
        let scaled = |v: &[f64]| Field::new(g, 3, v.iter().map(|x| c * x).collect()).unwrap();
        for gauge in [None, Some(2)] {
            let reference = ReferenceSolution { field: Field::new(g, 3, r.clone()).unwrap(), provenance: prepinn_core::Provenance::Picard, gauge_component: gauge };
            let scaled_ref = ReferenceSolution { field: scaled(&r), ..reference.clone() };
            let e1 = relative_l2(&Field::new(g, 3, u.clone()).unwrap(), &reference).unwrap();
            let e2 = relative_l2(&scaled(&u), &scaled_ref).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1);
        }
    }
}

#[test]
fn gelu_at_zero_is_zero() {
    assert_eq!(Activation::Gelu.eval(0.0), 0.0);
    assert_eq!(Activation::Tanh.eval(0.0), 0.0);
}

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wemp::coeff::{CoefficientField, Inclusion};
use wemp::fem::{assemble_mass, assemble_stiffness, assemble_stiffness_full, l2_project_onto, FineOperators};
use wemp::grid::TwoLevelGrid;
use wemp::problem::ProblemData;
use wemp::solver::{solve, LinearSolveConfig};
use wemp::sparse::{BasisMatrix, CsrMatrix, SparseOperator};
use wemp::time::{advance, FineSystem, GalerkinSystem, SchemeConfig};

fn field(g: &TwoLevelGrid, x0: f64, value: f64) -> CoefficientField {
    CoefficientField::from_inclusions(g, &[Inclusion::rect(x0, x0 + 0.3, 0.2, 0.6, value)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operators_are_symmetric_and_kernel_holds(x0 in 0.0f64..0.6, log_v in 0.0f64..4.0, r in 2usize..5) {
        let g = TwoLevelGrid::new(3, r).unwrap();
        let k = field(&g, x0, 10f64.powf(log_v));
        let a = assemble_stiffness(&g, &k).unwrap();
        let m = assemble_mass(&g);
        prop_assert!(a.matrix().asymmetry() <= 1e-14 * a.matrix().max_abs());
        prop_assert!(m.matrix().asymmetry() <= 1e-14 * m.matrix().max_abs());
        let full = assemble_stiffness_full(&g, &k).unwrap();
        let ones = full.mul_vec(&vec![1.0; g.num_nodes()]);
        prop_assert!(ones.iter().all(|v| v.abs() <= 1e-12 * full.max_abs()));
    }

    #[test]
    fn stiffness_is_additive_in_kappa(x0 in 0.0f64..0.6, v1 in 1.0f64..100.0, v2 in 1.0f64..100.0) {
        let g = TwoLevelGrid::new(3, 3).unwrap();
        let k1 = field(&g, x0, v1);
        let k2 = field(&g, 0.6 - x0, v2);
        let sum: Vec<f64> = k1.values().iter().zip(k2.values()).map(|(a, b)| a + b).collect();
        let k12 = CoefficientField::from_values(g.fine_cells(), sum).unwrap();
        let a1 = assemble_stiffness(&g, &k1).unwrap();
        let a2 = assemble_stiffness(&g, &k2).unwrap();
        let a12 = assemble_stiffness(&g, &k12).unwrap();
        let combined = a1.matrix().linear_combination(1.0, a2.matrix(), 1.0);
        let d = a12.matrix().linear_combination(1.0, &combined, -1.0);
        prop_assert!(d.max_abs() <= 1e-12 * a12.matrix().max_abs());
    }

    #[test]
    fn projection_is_mass_orthogonal(seed in 0u64..1000, cols in 1usize..6) {
        let g = TwoLevelGrid::new(2, 3).unwrap();
        let m = assemble_mass(&g);
        let n = g.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = BasisMatrix::from_dense(n, cols, &dense);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = l2_project_onto(&phi, &m, &v).unwrap();
        let r: Vec<f64> = v.iter().zip(phi.apply(&c)).map(|(a, b)| a - b).collect();
        let orth = phi.transpose_apply(&m.apply(&r));
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(orth.iter().all(|x| x.abs() <= 1e-9 * vnorm * m.matrix().max_abs()));
    }

    #[test]
    fn backward_euler_never_grows_the_mass_norm(seed in 0u64..1000, dt in 1e-4f64..1e-1) {
        let g = Arc::new(TwoLevelGrid::new(3, 3).unwrap());
        let k = Arc::new(field(&g, 0.3, 1e3));
        let sys = FineSystem::new(Arc::new(FineOperators::new(g, k).unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u0: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = ProblemData::new(|_, _| 0.0, None, 1.0);
        let mut norms = vec![sys.operators().l2_norm(&u0)];
        advance(&sys, &data, &u0, 0, 6, dt, &SchemeConfig::backward_euler(), |_, u| {
            norms.push(sys.operators().l2_norm(u))
        })
        .unwrap();
        prop_assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", norms);
    }
}

#[test]
fn direct_solve_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 50;
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let spd = &b * b.transpose() + DMatrix::identity(n, n) * n as f64;
    let triplets: Vec<(usize, usize, f64)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, spd[(i, j)])).collect();
    let op = SparseOperator::from(CsrMatrix::from_triplets(n, &triplets));
    let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = solve(&op, &rhs, &LinearSolveConfig::default()).unwrap();
    let oracle = spd.cholesky().unwrap().solve(&DVector::from_vec(rhs));
    assert!(x.iter().zip(oracle.iter()).all(|(a, b)| (a - b).abs() <= 1e-9));
}

#[test]
fn time_independent_source_gives_constant_load() {
    let g = Arc::new(TwoLevelGrid::new(4, 2).unwrap());
    let ops = FineOperators::new(g.clone(), Arc::new(CoefficientField::homogeneous(&g))).unwrap();
    let data = ProblemData::new(|_, _| 0.0, Some(Arc::new(|x: f64, y: f64, _t: f64| x * y + 1.0)), 1.0);
    let f0 = ops.load(&data, 0.0).unwrap();
    for t in [0.1, 0.37, 1.0] {
        let ft = ops.load(&data, t).unwrap();
        assert!(f0.iter().zip(&ft).all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
    }
    assert!(ops.load(&ProblemData::new(|_, _| 0.0, None, 1.0), 0.5).is_none());
}

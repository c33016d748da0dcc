use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wemp::grid::TwoLevelGrid;
use wemp::wavelets::{max_level, EdgeWaveletBasis};

fn basis_strategy() -> impl Strategy<Value = (usize, f64, u32)> {
    (0u32..5, 1usize..5, 0.05f64..2.0).prop_flat_map(|(level, mult, length)| {
        (Just(mult << level), Just(length), 0..=level)
    })
}

proptest! {
    #[test]
    fn gram_is_identity((segments, length, level) in basis_strategy()) {
        let b = EdgeWaveletBasis::new(segments, length, level).unwrap();
        prop_assert_eq!(b.len(), 1 << level);
        for (j, row) in b.gram().iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let expect = if j == k { 1.0 } else { 0.0 };
                prop_assert!((v - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn parseval_for_aligned_piecewise_constants(
        (segments, length, level) in basis_strategy(),
        seed in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let b = EdgeWaveletBasis::new(segments, length, level).unwrap();
        let pieces = 1usize << level;
        let width = segments / pieces;
        let piece = |s: usize| seed[(s / width) % seed.len()];
        // A piecewise-constant v expressed through its segment averages:
        // inner products only see the trapezoid of each segment.
        let h = b.segment_length();
        let coeffs: Vec<f64> = b
            .functions
            .iter()
            .map(|f| (0..segments).map(|s| f.segment_value(s) * piece(s) * h).sum())
            .collect();
        let energy: f64 = (0..segments).map(|s| piece(s).powi(2) * h).sum();
        let parseval: f64 = coeffs.iter().map(|c| c * c).sum();
        prop_assert!((energy - parseval).abs() <= 1e-12 * energy.max(1.0));
    }

    #[test]
    fn levels_are_nested((segments, length, level) in basis_strategy().prop_filter("ℓ ≥ 1", |t| t.2 >= 1)) {
        let fine = EdgeWaveletBasis::new(segments, length, level).unwrap();
        let coarse = EdgeWaveletBasis::new(segments, length, level - 1).unwrap();
        let cols: Vec<Vec<f64>> = fine.functions.iter().map(|f| f.segment_values()).collect();
        let a = DMatrix::from_fn(segments, cols.len(), |s, j| cols[j][s]);
        for f in &coarse.functions {
            let target = DVector::from_vec(f.segment_values());
            let x = a.clone().svd(true, true).solve(&target, 1e-14).unwrap();
            let residual = (&a * x - &target).norm();
            prop_assert!(residual <= 1e-12 * target.norm().max(1.0));
        }
    }

    #[test]
    fn misalignment_is_rejected(segments in 1usize..200, level in 0u32..8) {
        let ok = segments % (1 << level) == 0;
        prop_assert_eq!(EdgeWaveletBasis::new(segments, 1.0, level).is_ok(), ok);
        prop_assert!(level > max_level(segments) || ok);
    }
}

#[test]
fn every_neighborhood_edge_accepts_admissible_levels() {
    let g = TwoLevelGrid::new(4, 8).unwrap();
    for nb in g.neighborhoods() {
        for edge in &nb.edges {
            for level in 0..=3 {
                let b = EdgeWaveletBasis::for_edge(edge, level).unwrap();
                assert!((b.length - edge.length).abs() < 1e-15);
                let scaling = b.functions[0].segment_value(0);
                assert!((scaling - edge.length.powf(-0.5)).abs() < 1e-12);
            }
        }
    }
}

use std::collections::BTreeSet;

use proptest::prelude::*;

use wemp::coeff::{CoefficientField, Inclusion};
use wemp::grid::TwoLevelGrid;
use wemp::problem::nodal_interpolate;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn neighborhoods_cover_domain_and_traces_are_disjoint(nc in 2usize..7, r in 2usize..6) {
        let g = TwoLevelGrid::new(nc, r).unwrap();
        prop_assert_eq!(g.num_dofs(), (nc * r - 1).pow(2));
        let mut covered = vec![false; g.num_cells()];
        for nb in g.neighborhoods() {
            for (i, j) in nb.rect.cells() {
                covered[g.cell_index(i, j)] = true;
            }
            let (ci, cj) = nb.node;
            let interior = g.is_interior_coarse_node(ci, cj);
            prop_assert_eq!(nb.coarse_cells == 4, interior);
            let listed = nb.boundary_nodes();
            let unique: BTreeSet<usize> = listed.iter().copied().collect();
            prop_assert_eq!(unique.len(), listed.len());
            let expected: BTreeSet<usize> = nb
                .rect
                .nodes()
                .filter(|&(i, j)| nb.rect.on_boundary(i, j))
                .map(|(i, j)| g.node_index(i, j))
                .collect();
            prop_assert_eq!(unique, expected);
        }
        prop_assert!(covered.into_iter().all(|c| c));
    }

    #[test]
    fn every_fine_cell_has_one_coarse_parent(nc in 2usize..7, r in 2usize..6) {
        let g = TwoLevelGrid::new(nc, r).unwrap();
        let mut count = vec![0usize; g.num_cells()];
        for cj in 0..nc {
            for ci in 0..nc {
                for j in cj * r..(cj + 1) * r {
                    for i in ci * r..(ci + 1) * r {
                        prop_assert_eq!(g.coarse_cell_of(i, j), (ci, cj));
                        count[g.cell_index(i, j)] += 1;
                    }
                }
            }
        }
        prop_assert!(count.into_iter().all(|c| c == 1));
    }

    #[test]
    fn construction_is_deterministic(nc in 2usize..6, r in 2usize..5) {
        let a = TwoLevelGrid::new(nc, r).unwrap();
        let b = TwoLevelGrid::new(nc, r).unwrap();
        for (x, y) in a.neighborhoods().iter().zip(b.neighborhoods()) {
            prop_assert_eq!(x.boundary_nodes(), y.boundary_nodes());
        }
        prop_assert_eq!(
            (0..a.num_dofs()).map(|d| a.node_of_dof(d)).collect::<Vec<_>>(),
            (0..b.num_dofs()).map(|d| b.node_of_dof(d)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn inclusion_fields_respect_bounds(
        x0 in 0.0f64..0.4, w in 0.05f64..0.5, log_a in 0.0f64..4.0, log_b in 0.0f64..4.0,
    ) {
        let g = TwoLevelGrid::new(4, 4).unwrap();
        let (a, b) = (10f64.powf(log_a), 10f64.powf(log_b));
        let incs = [Inclusion::rect(x0, x0 + w, 0.05, 0.45, a), Inclusion::disc(0.5, 0.75, 0.2, b)];
        let k = CoefficientField::from_inclusions(&g, &incs).unwrap();
        prop_assert!(k.alpha() >= 1.0);
        prop_assert!(k.contrast() >= 1.0);
        prop_assert!(k.values().iter().all(|&v| v == 1.0 || v == a || v == b));
        prop_assert_eq!(k.beta(), k.values().iter().copied().fold(0.0, f64::max));
        let back = CoefficientField::from_text(&k.to_text()).unwrap();
        prop_assert_eq!(back.values(), k.values());
    }

    #[test]
    fn interpolation_samples_interior_nodes(nc in 2usize..5, r in 2usize..5) {
        let g = TwoLevelGrid::new(nc, r).unwrap();
        let v = nodal_interpolate(&g, |x, y| x + 2.0 * y).unwrap();
        for (d, value) in v.iter().enumerate() {
            let (x, y) = g.node_coords(g.node_of_dof(d));
            prop_assert_eq!(*value, x + 2.0 * y);
        }
    }
}

#[test]
fn paper_scale_grid() {
    let g = TwoLevelGrid::new(16, 8).unwrap();
    assert_eq!(g.coarse_size(), 1.0 / 16.0);
    assert_eq!(g.fine_size(), 1.0 / 128.0);
    assert_eq!(g.num_dofs(), 127 * 127);
    assert_eq!(g.interior_coarse_nodes().len(), 225);
}

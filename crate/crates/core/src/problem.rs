use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::TwoLevelGrid;

pub type SpatialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Initial data, source term and final time of a homogeneous Dirichlet problem.
#[derive(Clone)]
pub struct ProblemData {
    pub initial: SpatialFn,
    /// `None` means `f ≡ 0`; load vectors are then skipped entirely.
    pub source: Option<SourceFn>,
    pub final_time: f64,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("source", &self.source.as_ref().map(|_| "fn"))
            .field("final_time", &self.final_time)
            .finish()
    }
}

impl ProblemData {
    pub fn new(
        initial: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        source: Option<SourceFn>,
        final_time: f64,
    ) -> Self {
        ProblemData {
            initial: Arc::new(initial),
            source,
            final_time,
        }
    }

    pub fn source_at(&self, x: f64, y: f64, t: f64) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f(x, y, t))
    }

    /// Checks that `u0` vanishes on the boundary of the unit square.
    pub fn check_compatibility(&self, grid: &TwoLevelGrid) -> Result<()> {
        let scale = (0..grid.num_nodes())
            .map(|n| {
                let (x, y) = grid.node_coords(n);
                (self.initial)(x, y).abs()
            })
            .fold(0.0, f64::max)
            .max(1.0);
        for node in (0..grid.num_nodes()).filter(|&n| grid.is_boundary_node(n)) {
            let (x, y) = grid.node_coords(node);
            let v = (self.initial)(x, y);
            if v.abs() > 1e-12 * scale {
                return Err(Error::InvalidConfig(format!(
                    "initial data {v} does not vanish on the boundary at ({x}, {y})"
                )));
            }
        }
        Ok(())
    }
}

/// Values of `g` at the interior fine nodes, in dof order.
pub fn nodal_interpolate(grid: &TwoLevelGrid, g: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
    (0..grid.num_dofs())
        .map(|d| {
            let (x, y) = grid.node_coords(grid.node_of_dof(d));
            let value = g(x, y);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFinite { x, y, value })
            }
        })
        .collect()
}

/// Values of `g` at every fine node (boundary included).
pub fn nodal_values(grid: &TwoLevelGrid, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..grid.num_nodes())
        .map(|n| {
            let (x, y) = grid.node_coords(n);
            g(x, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_function_interpolates_to_zero() {
        let g = TwoLevelGrid::new(2, 2).unwrap();
        assert!(nodal_interpolate(&g, |_, _| 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bubble_at_center() {
        let g = TwoLevelGrid::new(2, 2).unwrap();
        let v = nodal_interpolate(&g, |x, y| x * (1.0 - x) * y * (1.0 - y)).unwrap();
        let center = g.dof(g.node_index(2, 2)).unwrap();
        assert_eq!(v[center], 0.0625);
    }

    #[test]
    fn sine_peak_at_center() {
        let g = TwoLevelGrid::new(2, 2).unwrap();
        let v = nodal_interpolate(&g, |x, y| (PI * x).sin() * (PI * y).sin()).unwrap();
        let center = g.dof(g.node_index(2, 2)).unwrap();
        assert!((v[center] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_report_coordinates() {
        let g = TwoLevelGrid::new(2, 2).unwrap();
        let err = nodal_interpolate(&g, |x, y| if x == 0.5 && y == 0.25 { f64::NAN } else { 1.0 }).unwrap_err();
        match err {
            Error::NonFinite { x, y, .. } => assert_eq!((x, y), (0.5, 0.25)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compatibility_check() {
        let g = TwoLevelGrid::new(2, 4).unwrap();
        let ok = ProblemData::new(|x, y| x * (1.0 - x) * y * (1.0 - y), None, 1.0);
        assert!(ok.check_compatibility(&g).is_ok());
        let bad = ProblemData::new(|_, _| 1.0, None, 1.0);
        assert!(bad.check_compatibility(&g).is_err());
    }
}

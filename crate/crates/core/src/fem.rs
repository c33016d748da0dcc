//! Bilinear (Q1) finite elements on the fine grid.
//!
//! Element matrices are integrated with the 2×2 Gauss rule, which is exact
//! for Q1 stiffness and mass on rectangles with a cell-constant coefficient.
//! Dirichlet conditions are imposed by eliminating the boundary rows and
//! columns, so the dof-level operators stay symmetric positive definite.

use std::sync::Arc;

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{NodeRect, TwoLevelGrid};
use crate::problem::{nodal_values, ProblemData};
use crate::solver::CholeskyFactor;
use crate::sparse::{BasisMatrix, CsrMatrix, SparseOperator};

pub type ElementMatrix = [[f64; 4]; 4];

/// Relative pivot threshold below which a basis column counts as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-10;

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Q1 shape functions on the unit reference square, nodes counter-clockwise
/// from the origin.
pub fn shape_values(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

/// Reference derivatives `(∂/∂ξ, ∂/∂η)` of the Q1 shape functions.
pub fn shape_gradients(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

/// Gauss points on the unit reference square; each has weight 1/4.
pub fn gauss_points() -> impl Iterator<Item = (f64, f64)> {
    GAUSS.into_iter().flat_map(|eta| GAUSS.into_iter().map(move |xi| (xi, eta)))
}

/// `∫_K ∇φ_a·∇φ_b` on a square cell (independent of its size in 2-D).
pub fn element_stiffness() -> ElementMatrix {
    let mut k = [[0.0; 4]; 4];
    for (xi, eta) in gauss_points() {
        let g = shape_gradients(xi, eta);
        for a in 0..4 {
            for b in 0..4 {
                k[a][b] += 0.25 * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}

/// `∫_K φ_a φ_b` on a square cell of side `h`.
pub fn element_mass(h: f64) -> ElementMatrix {
    let mut m = [[0.0; 4]; 4];
    for (xi, eta) in gauss_points() {
        let n = shape_values(xi, eta);
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] += 0.25 * h * h * n[a] * n[b];
            }
        }
    }
    m
}

/// Assembles `Σ_K w_K · E` over the cells of `rect`, numbering nodes with
/// `index` (nodes mapped to `None` are eliminated).
pub(crate) fn assemble_on(
    grid: &TwoLevelGrid,
    rect: &NodeRect,
    element: &ElementMatrix,
    weight: impl Fn(usize) -> f64,
    dim: usize,
    index: impl Fn(usize, usize) -> Option<usize>,
) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(rect.num_cells() * 16);
    let offsets = [(0, 0), (1, 0), (1, 1), (0, 1)];
    for (i, j) in rect.cells() {
        let w = weight(grid.cell_index(i, j));
        let idx: [Option<usize>; 4] = offsets.map(|(di, dj)| index(i + di, j + dj));
        for a in 0..4 {
            let Some(ra) = idx[a] else { continue };
            for b in 0..4 {
                let Some(cb) = idx[b] else { continue };
                triplets.push((ra, cb, w * element[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(dim, &triplets)
}

/// Stiffness over every fine node, before Dirichlet elimination.
pub fn assemble_stiffness_full(grid: &TwoLevelGrid, kappa: &CoefficientField) -> Result<CsrMatrix> {
    kappa.check_grid(grid)?;
    let rect = grid.domain_rect();
    Ok(assemble_on(grid, &rect, &element_stiffness(), |c| kappa.value(c), grid.num_nodes(), |i, j| {
        Some(grid.node_index(i, j))
    }))
}

/// Stiffness `A` on the interior dofs.
pub fn assemble_stiffness(grid: &TwoLevelGrid, kappa: &CoefficientField) -> Result<SparseOperator> {
    kappa.check_grid(grid)?;
    let rect = grid.domain_rect();
    Ok(assemble_on(grid, &rect, &element_stiffness(), |c| kappa.value(c), grid.num_dofs(), |i, j| {
        grid.dof(grid.node_index(i, j))
    })
    .into())
}

/// Mass over every fine node.
pub fn assemble_mass_full(grid: &TwoLevelGrid) -> CsrMatrix {
    let rect = grid.domain_rect();
    assemble_on(grid, &rect, &element_mass(grid.fine_size()), |_| 1.0, grid.num_nodes(), |i, j| {
        Some(grid.node_index(i, j))
    })
}

/// Mass `M` on the interior dofs.
pub fn assemble_mass(grid: &TwoLevelGrid) -> SparseOperator {
    let rect = grid.domain_rect();
    assemble_on(grid, &rect, &element_mass(grid.fine_size()), |_| 1.0, grid.num_dofs(), |i, j| {
        grid.dof(grid.node_index(i, j))
    })
    .into()
}

/// `√(vᵀ A v)`.
pub fn energy_norm(a: &SparseOperator, v: &[f64]) -> Result<f64> {
    if v.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: v.len(),
        });
    }
    Ok(a.inner(v, v).max(0.0).sqrt())
}

/// `L²` norm through the mass matrix.
pub fn mass_norm(m: &SparseOperator, v: &[f64]) -> Result<f64> {
    energy_norm(m, v)
}

/// Coefficients `c` of the `M`-orthogonal projection of `v` onto the columns of `Φ`.
pub fn l2_project_onto(phi: &BasisMatrix, m: &SparseOperator, v: &[f64]) -> Result<Vec<f64>> {
    if phi.nrows() != m.dim() || v.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            actual: if phi.nrows() != m.dim() { phi.nrows() } else { v.len() },
        });
    }
    let gram = phi.galerkin(&[m.matrix()]).remove(0);
    let factor = CholeskyFactor::with_dropping(&gram, DEPENDENCE_TOL)?;
    if let Some(&column) = factor.dropped().first() {
        return Err(Error::RankDeficient {
            column,
            pivot: gram.get(column, column),
        });
    }
    let rhs = phi.transpose_apply(&m.apply(v));
    Ok(factor.solve(&rhs))
}

/// Fine-grid operators shared by the reference solver and the multiscale space.
#[derive(Debug)]
pub struct FineOperators {
    pub grid: Arc<TwoLevelGrid>,
    pub kappa: Arc<CoefficientField>,
    /// Stiffness `A` on the interior dofs.
    pub stiffness: SparseOperator,
    /// Mass `M` on the interior dofs.
    pub mass: SparseOperator,
    /// Mass over every node, for load vectors.
    pub mass_full: CsrMatrix,
}

impl FineOperators {
    pub fn new(grid: Arc<TwoLevelGrid>, kappa: Arc<CoefficientField>) -> Result<Self> {
        let stiffness = assemble_stiffness(&grid, &kappa)?;
        let mass = assemble_mass(&grid);
        let mass_full = assemble_mass_full(&grid);
        Ok(FineOperators {
            grid,
            kappa,
            stiffness,
            mass,
            mass_full,
        })
    }

    /// Load vector `(f(·, t), φ_a)` of the nodal interpolant of `f`, on the dofs.
    pub fn load(&self, data: &ProblemData, t: f64) -> Option<Vec<f64>> {
        let f = data.source.as_ref()?;
        let values = nodal_values(&self.grid, |x, y| f(x, y, t));
        Some(self.grid.nodes_to_dofs(&self.mass_full.mul_vec(&values)))
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.inner(v, v).max(0.0).sqrt()
    }

    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.stiffness.inner(v, v).max(0.0).sqrt()
    }
}

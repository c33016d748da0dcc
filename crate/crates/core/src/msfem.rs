//! Edge multiscale space: partition of unity, weighted coefficient, κ-harmonic
//! wavelet extensions, local source functions and the global basis `Φ`.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::fem::{
    assemble_on, element_stiffness, gauss_points, shape_gradients, shape_values, FineOperators, DEPENDENCE_TOL,
};
use crate::grid::{Edge, Neighborhood, NodeRect, Side, TwoLevelGrid};
use crate::problem::{nodal_interpolate, ProblemData};
use crate::solver::{pivoted_rank_columns, smallest_eigenvalue, CholeskyFactor, FactorCache};
use crate::sparse::{BasisMatrix, CsrMatrix, SparseColumn};
use crate::wavelets::EdgeWaveletBasis;

/// Nodal values on a rectangle of fine nodes, in local row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalField {
    pub rect: NodeRect,
    pub values: Vec<f64>,
}

impl LocalField {
    pub fn zeros(rect: NodeRect) -> Self {
        LocalField {
            values: vec![0.0; rect.num_nodes()],
            rect,
        }
    }

    /// Value at global node `(i, j)`; zero outside the rectangle.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.rect.contains(i, j) {
            self.values[self.rect.local(i, j)]
        } else {
            0.0
        }
    }

    /// Full nodal vector over the whole grid.
    pub fn to_nodes(&self, grid: &TwoLevelGrid) -> Vec<f64> {
        let mut out = vec![0.0; grid.num_nodes()];
        for (l, (i, j)) in self.rect.nodes().enumerate() {
            out[grid.node_index(i, j)] = self.values[l];
        }
        out
    }
}

/// Dirichlet problem for `−∇·(κ∇u) = 0` on a rectangle of fine cells.
#[derive(Debug)]
pub struct LocalProblem {
    rect: NodeRect,
    stiffness: CsrMatrix,
    interior: Vec<usize>,
    is_interior: Vec<bool>,
    factor: CholeskyFactor,
}

impl LocalProblem {
    pub fn new(grid: &TwoLevelGrid, kappa: &CoefficientField, rect: NodeRect) -> Result<Self> {
        let stiffness = local_stiffness(grid, kappa, &rect);
        let is_interior: Vec<bool> = rect.nodes().map(|(i, j)| !rect.on_boundary(i, j)).collect();
        let interior: Vec<usize> = (0..rect.num_nodes()).filter(|&l| is_interior[l]).collect();
        let factor = CholeskyFactor::new(&stiffness.submatrix(&interior))?;
        Ok(LocalProblem {
            rect,
            stiffness,
            interior,
            is_interior,
            factor,
        })
    }

    pub fn rect(&self) -> &NodeRect {
        &self.rect
    }

    /// Discrete κ-harmonic extension of the boundary entries of `g` (local
    /// layout; interior entries are ignored).
    pub fn extend(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.rect.num_nodes());
        let mut rhs: Vec<f64> = self
            .interior
            .iter()
            .map(|&l| {
                let (cols, vals) = self.stiffness.row(l);
                -cols
                    .iter()
                    .zip(vals)
                    .filter(|(&c, _)| !self.is_interior[c])
                    .map(|(&c, &a)| a * g[c])
                    .sum::<f64>()
            })
            .collect();
        self.factor.solve_in_place(&mut rhs);
        let mut out = g.to_vec();
        for (&l, v) in self.interior.iter().zip(rhs) {
            out[l] = v;
        }
        out
    }
}

fn local_stiffness(grid: &TwoLevelGrid, kappa: &CoefficientField, rect: &NodeRect) -> CsrMatrix {
    assemble_on(grid, rect, &element_stiffness(), |c| kappa.value(c), rect.num_nodes(), |i, j| {
        Some(rect.local(i, j))
    })
}

/// κ-harmonic extension of boundary data `g` (local layout) into `rect`.
pub fn harmonic_extend(grid: &TwoLevelGrid, kappa: &CoefficientField, rect: NodeRect, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != rect.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: rect.num_nodes(),
            actual: g.len(),
        });
    }
    Ok(LocalProblem::new(grid, kappa, rect)?.extend(g))
}

/// Partition of unity `{χ_i}` over all coarse nodes.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    /// `cells[K][c]`: the χ of corner `c` of coarse cell `K` (counter-clockwise
    /// from lower-left) on the cell's nodes.
    cells: Vec<[Vec<f64>; 4]>,
    /// `χ_i` on `ω_i`, indexed by coarse node.
    fields: Vec<LocalField>,
}

const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

impl PartitionOfUnity {
    pub fn field(&self, coarse_node: usize) -> &LocalField {
        &self.fields[coarse_node]
    }

    pub fn fields(&self) -> &[LocalField] {
        &self.fields
    }

    /// χ of corner `corner` of coarse cell `cell` on that cell's nodes.
    pub fn cell_values(&self, cell: usize, corner: usize) -> &[f64] {
        &self.cells[cell][corner]
    }

    /// Row-major grid text of `χ_i` over all fine nodes, rows bottom first.
    pub fn to_grid_text(&self, grid: &TwoLevelGrid, coarse_node: usize) -> String {
        grid_text(grid.nodes_per_axis(), &self.fields[coarse_node].to_nodes(grid))
    }
}

/// Whitespace-separated rows of a square nodal array, bottom row first.
pub fn grid_text(width: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn build_pou(grid: &TwoLevelGrid, kappa: &CoefficientField) -> Result<PartitionOfUnity> {
    kappa.check_grid(grid)?;
    let nc = grid.coarse_cells();
    let r = grid.refinement();
    let cells: Vec<[Vec<f64>; 4]> = (0..nc * nc)
        .into_par_iter()
        .map(|k| {
            let rect = grid.coarse_cell_rect(k % nc, k / nc);
            let local = LocalProblem::new(grid, kappa, rect)?;
            let rf = r as f64;
            let solve = |c: usize| {
                let g: Vec<f64> = rect
                    .nodes()
                    .map(|(i, j)| shape_values((i - rect.x0) as f64 / rf, (j - rect.y0) as f64 / rf)[c])
                    .collect();
                local.extend(&g)
            };
            Ok([solve(0), solve(1), solve(2), solve(3)])
        })
        .collect::<Result<_>>()?;

    let fields = grid
        .neighborhoods()
        .iter()
        .map(|nb| {
            let (ci, cj) = nb.node;
            let mut field = LocalField::zeros(nb.rect);
            for (c, &(di, dj)) in CORNERS.iter().enumerate() {
                // Cell whose corner `c` is this coarse node.
                let (Some(ki), Some(kj)) = (ci.checked_sub(di), cj.checked_sub(dj)) else { continue };
                if ki >= nc || kj >= nc {
                    continue;
                }
                let rect = grid.coarse_cell_rect(ki, kj);
                let vals = &cells[kj * nc + ki][c];
                for (l, (i, j)) in rect.nodes().enumerate() {
                    let idx = nb.rect.local(i, j);
                    field.values[idx] = vals[l];
                }
            }
            field
        })
        .collect();
    Ok(PartitionOfUnity { cells, fields })
}

/// `κ̃ = H² κ Σ_i |∇χ_i|²` per fine cell, with `|∇χ_i|²` averaged over the
/// 2×2 Gauss points of the cell.
pub fn build_weighted_kappa(grid: &TwoLevelGrid, kappa: &CoefficientField, pou: &PartitionOfUnity) -> Vec<f64> {
    let nc = grid.coarse_cells();
    let r = grid.refinement();
    let h = grid.fine_size();
    let big_h = grid.coarse_size();
    let w = r + 1;
    let mut out = vec![0.0; grid.num_cells()];
    for kj in 0..nc {
        for ki in 0..nc {
            let chis = &pou.cells[kj * nc + ki];
            for b in 0..r {
                for a in 0..r {
                    let local = [b * w + a, b * w + a + 1, (b + 1) * w + a + 1, (b + 1) * w + a];
                    let mut sum = 0.0;
                    for chi in chis {
                        for (xi, eta) in gauss_points() {
                            let g = shape_gradients(xi, eta);
                            let (mut gx, mut gy) = (0.0, 0.0);
                            for (n, &l) in local.iter().enumerate() {
                                gx += chi[l] * g[n][0];
                                gy += chi[l] * g[n][1];
                            }
                            sum += 0.25 * (gx * gx + gy * gy) / (h * h);
                        }
                    }
                    let cell = grid.cell_index(ki * r + a, kj * r + b);
                    out[cell] = big_h * big_h * kappa.value(cell) * sum;
                }
            }
        }
    }
    out
}

/// Right-hand side of the pure-Neumann source problem on `ω`, in the local
/// layout of `nb.rect`; `None` when `κ̃` vanishes on `ω`.
pub fn source_rhs(grid: &TwoLevelGrid, weighted_kappa: &[f64], nb: &Neighborhood) -> Option<Vec<f64>> {
    let rect = &nb.rect;
    let h = grid.fine_size();
    let total: f64 = rect.cells().map(|(i, j)| weighted_kappa[grid.cell_index(i, j)] * h * h).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut rhs = vec![0.0; rect.num_nodes()];
    for (i, j) in rect.cells() {
        let share = weighted_kappa[grid.cell_index(i, j)] / total * h * h / 4.0;
        for (di, dj) in CORNERS {
            rhs[rect.local(i + di, j + dj)] += share;
        }
    }
    let flux = h / (2.0 * nb.perimeter());
    for edge in &nb.edges {
        for seg in edge.nodes.windows(2) {
            for &node in seg {
                let (i, j) = grid.node_ij(node);
                rhs[rect.local(i, j)] -= flux;
            }
        }
    }
    Some(rhs)
}

/// `v^i` on `ω_i` with zero mean, or `None` when `κ̃ ≡ 0` there.
pub fn solve_source_function(
    grid: &TwoLevelGrid,
    kappa: &CoefficientField,
    weighted_kappa: &[f64],
    nb: &Neighborhood,
) -> Result<Option<Vec<f64>>> {
    let Some(rhs) = source_rhs(grid, weighted_kappa, nb) else { return Ok(None) };
    let rect = &nb.rect;
    let stiffness = local_stiffness(grid, kappa, rect);
    let keep: Vec<usize> = (1..rect.num_nodes()).collect();
    let factor = CholeskyFactor::new(&stiffness.submatrix(&keep))?;
    let mut sol: Vec<f64> = keep.iter().map(|&l| rhs[l]).collect();
    factor.solve_in_place(&mut sol);
    let mut v = Vec::with_capacity(rect.num_nodes());
    v.push(0.0);
    v.extend(sol);
    let mean = local_integral(rect, &v) / rect.num_cells() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    Ok(Some(v))
}

/// `∫ v` over `rect` divided by `h²`, for Q1 `v` in local layout.
fn local_integral(rect: &NodeRect, v: &[f64]) -> f64 {
    rect.cells()
        .map(|(i, j)| CORNERS.iter().map(|&(di, dj)| v[rect.local(i + di, j + dj)]).sum::<f64>() / 4.0)
        .sum()
}

/// Local Dirichlet data from nodal values along one edge, honouring corner
/// ownership.
fn edge_data(grid: &TwoLevelGrid, rect: &NodeRect, edge: &Edge, nodal: &[f64], g: &mut [f64]) {
    for ((&node, &own), &v) in edge.nodes.iter().zip(&edge.owned).zip(nodal) {
        if own {
            let (i, j) = grid.node_ij(node);
            g[rect.local(i, j)] = v;
        }
    }
}

/// Where a column of `Φ` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColumnSource {
    Wavelet {
        coarse_node: usize,
        #[serde(serialize_with = "side_name")]
        edge: Side,
        index: usize,
    },
    Source {
        coarse_node: usize,
    },
}

fn side_name<S: serde::Serializer>(side: &Side, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match side {
        Side::Bottom => "bottom",
        Side::Right => "right",
        Side::Top => "top",
        Side::Left => "left",
    })
}

impl ColumnSource {
    pub fn coarse_node(&self) -> usize {
        match *self {
            ColumnSource::Wavelet { coarse_node, .. } | ColumnSource::Source { coarse_node } => coarse_node,
        }
    }
}

/// Columns `χ_i ⊙ w` restricted to the dofs inside `ω_i`.
fn masked_column(grid: &TwoLevelGrid, chi: &LocalField, w: &[f64]) -> SparseColumn {
    let rect = &chi.rect;
    let mut col = SparseColumn::default();
    for (l, (i, j)) in rect.nodes().enumerate() {
        if rect.on_boundary(i, j) {
            continue;
        }
        let Some(d) = grid.dof(grid.node_index(i, j)) else { continue };
        let v = chi.values[l] * w[l];
        if v != 0.0 {
            col.indices.push(d);
            col.values.push(v);
        }
    }
    col
}

struct NodeColumns {
    columns: Vec<SparseColumn>,
    sources: Vec<ColumnSource>,
    skipped_source: bool,
}

fn node_columns(
    grid: &TwoLevelGrid,
    kappa: &CoefficientField,
    pou: &PartitionOfUnity,
    weighted_kappa: &[f64],
    level: u32,
    coarse_node: usize,
) -> Result<NodeColumns> {
    let nb = grid.neighborhood(coarse_node);
    let chi = pou.field(coarse_node);
    let local = LocalProblem::new(grid, kappa, nb.rect)?;
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    for edge in &nb.edges {
        let basis = EdgeWaveletBasis::for_edge(edge, level)?;
        for (index, f) in basis.functions.iter().enumerate() {
            let mut g = vec![0.0; nb.rect.num_nodes()];
            edge_data(grid, &nb.rect, edge, &f.to_nodal(), &mut g);
            columns.push(masked_column(grid, chi, &local.extend(&g)));
            sources.push(ColumnSource::Wavelet {
                coarse_node,
                edge: edge.side,
                index,
            });
        }
    }
    let v = solve_source_function(grid, kappa, weighted_kappa, nb)?;
    let skipped_source = v.is_none();
    if let Some(v) = v {
        columns.push(masked_column(grid, chi, &v));
        sources.push(ColumnSource::Source { coarse_node });
    }
    Ok(NodeColumns {
        columns,
        sources,
        skipped_source,
    })
}

/// Columns of a unit-diagonal Gram matrix that stay after dependent ones are
/// removed. The natural order is kept when the full matrix is well
/// conditioned; otherwise a diagonally pivoted factorization decides.
fn independent_columns(gram: &CsrMatrix) -> Result<Vec<usize>> {
    let n = gram.dim();
    if let Ok(f) = CholeskyFactor::new(gram) {
        if smallest_eigenvalue(gram, &f, 50) > DEPENDENCE_TOL {
            return Ok((0..n).collect());
        }
    }
    let keep = pivoted_rank_columns(gram, DEPENDENCE_TOL);
    let sub = gram.submatrix(&keep);
    if let Err(Error::NotPositiveDefinite { row, pivot }) = CholeskyFactor::new(&sub) {
        return Err(Error::RankDeficient {
            column: keep[row],
            pivot,
        });
    }
    Ok(keep)
}

/// Reduced Galerkin space `span(Φ)` with cached step factorizations.
#[derive(Debug)]
pub struct MultiscaleSpace {
    level: u32,
    fine: Arc<FineOperators>,
    pou: PartitionOfUnity,
    weighted_kappa: Vec<f64>,
    phi: BasisMatrix,
    provenance: Vec<ColumnSource>,
    dropped: Vec<ColumnSource>,
    skipped_sources: Vec<usize>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    factors: FactorCache,
}

pub fn assemble_multiscale_space(fine: Arc<FineOperators>, level: u32) -> Result<MultiscaleSpace> {
    let grid = fine.grid.clone();
    let kappa = fine.kappa.clone();
    let pou = build_pou(&grid, &kappa)?;
    let weighted_kappa = build_weighted_kappa(&grid, &kappa, &pou);
    let nodes = grid.interior_coarse_nodes();
    let per_node: Vec<NodeColumns> = nodes
        .par_iter()
        .map(|&i| node_columns(&grid, &kappa, &pou, &weighted_kappa, level, i))
        .collect::<Result<_>>()?;

    let mut columns = Vec::new();
    let mut provenance = Vec::new();
    let mut skipped_sources = Vec::new();
    for (nc, &i) in per_node.into_iter().zip(&nodes) {
        columns.extend(nc.columns);
        provenance.extend(nc.sources);
        if nc.skipped_source {
            skipped_sources.push(i);
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptySpace);
    }
    // Unit M-norm columns make the relative pivot threshold scale-free.
    let mass = fine.mass.matrix();
    for col in &mut columns {
        let mut norm2 = 0.0;
        for (&i, &v) in col.indices.iter().zip(&col.values) {
            let (cols, vals) = mass.row(i);
            for (&j, &m) in cols.iter().zip(vals) {
                if let Ok(p) = col.indices.binary_search(&j) {
                    norm2 += v * m * col.values[p];
                }
            }
        }
        if norm2 > 0.0 {
            let scale = norm2.sqrt().recip();
            col.values.iter_mut().for_each(|v| *v *= scale);
        }
    }
    let full = BasisMatrix::new(grid.num_dofs(), columns);
    let mut ops = full.galerkin(&[fine.mass.matrix(), fine.stiffness.matrix()]);
    let keep = independent_columns(&ops[0])?;
    let dropped_idx: Vec<usize> = (0..full.ncols()).filter(|c| keep.binary_search(c).is_err()).collect();
    if keep.is_empty() {
        return Err(Error::EmptySpace);
    }
    let dropped = dropped_idx.iter().map(|&c| provenance[c]).collect();
    let (phi, provenance, mass, stiffness) = if dropped_idx.is_empty() {
        let stiffness = ops.pop().unwrap();
        let mass = ops.pop().unwrap();
        (full, provenance, mass, stiffness)
    } else {
        (
            full.select(&keep),
            keep.iter().map(|&c| provenance[c]).collect(),
            ops[0].submatrix(&keep),
            ops[1].submatrix(&keep),
        )
    };
    Ok(MultiscaleSpace {
        level,
        fine,
        pou,
        weighted_kappa,
        phi,
        provenance,
        dropped,
        skipped_sources,
        mass,
        stiffness,
        factors: FactorCache::default(),
    })
}

impl MultiscaleSpace {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn fine(&self) -> &Arc<FineOperators> {
        &self.fine
    }

    pub fn grid(&self) -> &TwoLevelGrid {
        &self.fine.grid
    }

    pub fn pou(&self) -> &PartitionOfUnity {
        &self.pou
    }

    pub fn weighted_kappa(&self) -> &[f64] {
        &self.weighted_kappa
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.phi
    }

    pub fn provenance(&self) -> &[ColumnSource] {
        &self.provenance
    }

    pub fn dropped(&self) -> &[ColumnSource] {
        &self.dropped
    }

    /// Interior coarse nodes whose source function was skipped (`κ̃ ≡ 0`).
    pub fn skipped_sources(&self) -> &[usize] {
        &self.skipped_sources
    }

    /// `ΦᵀMΦ`.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// `ΦᵀAΦ`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Cholesky factor of `ΦᵀMΦ + τ ΦᵀAΦ`, computed once per `τ`.
    pub fn step_factor(&self, tau: f64) -> Result<Arc<CholeskyFactor>> {
        self.factors.get_or_factor(tau, &self.mass, &self.stiffness)
    }

    pub fn cached_step_sizes(&self) -> Vec<f64> {
        self.factors.keys()
    }

    /// Coefficients of the `M`-orthogonal projection of a fine dof vector.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.phi.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.phi.nrows(),
                actual: v.len(),
            });
        }
        let mut c = self.phi.transpose_apply(&self.fine.mass.apply(v));
        self.step_factor(0.0)?.solve_in_place(&mut c);
        Ok(c)
    }

    /// Projection of the initial data `u0`.
    pub fn project_initial(&self, data: &ProblemData) -> Result<Vec<f64>> {
        let u0 = nodal_interpolate(&self.fine.grid, |x, y| (data.initial)(x, y))?;
        self.project(&u0)
    }

    /// Fine dof vector `Φ c`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        self.phi.apply(coeffs)
    }

    /// Reduced load `Φᵀ F(t)`.
    pub fn load(&self, data: &ProblemData, t: f64) -> Option<Vec<f64>> {
        self.fine.load(data, t).map(|f| self.phi.transpose_apply(&f))
    }

    /// `‖Φ c‖_{L²}`.
    pub fn l2_norm(&self, coeffs: &[f64]) -> f64 {
        let mc = self.mass.mul_vec(coeffs);
        coeffs.iter().zip(mc).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// `‖Φ c‖_a`.
    pub fn energy_norm(&self, coeffs: &[f64]) -> f64 {
        let ac = self.stiffness.mul_vec(coeffs);
        coeffs.iter().zip(ac).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    pub fn write_basis(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.phi.to_coordinate_text()).map_err(|e| Error::io(path, e))
    }

    pub fn write_chi(&self, coarse_node: usize, path: &Path) -> Result<()> {
        std::fs::write(path, self.pou.to_grid_text(self.grid(), coarse_node)).map_err(|e| Error::io(path, e))
    }
}

/// Trace-based projection `P_ℓ v = Σ_i χ_i P_{i,ℓ} v` over every coarse node,
/// boundary nodes included; requires `2^ℓ | r`.
#[derive(Debug)]
pub struct TraceProjector {
    grid: Arc<TwoLevelGrid>,
    level: u32,
    pou: PartitionOfUnity,
    locals: Vec<(LocalProblem, [EdgeWaveletBasis; 4])>,
}

impl TraceProjector {
    pub fn new(grid: Arc<TwoLevelGrid>, kappa: &CoefficientField, level: u32) -> Result<Self> {
        let pou = build_pou(&grid, kappa)?;
        let locals = grid
            .neighborhoods()
            .par_iter()
            .map(|nb| {
                let local = LocalProblem::new(&grid, kappa, nb.rect)?;
                let bases = [
                    EdgeWaveletBasis::for_edge(&nb.edges[0], level)?,
                    EdgeWaveletBasis::for_edge(&nb.edges[1], level)?,
                    EdgeWaveletBasis::for_edge(&nb.edges[2], level)?,
                    EdgeWaveletBasis::for_edge(&nb.edges[3], level)?,
                ];
                Ok((local, bases))
            })
            .collect::<Result<_>>()?;
        Ok(TraceProjector {
            grid,
            level,
            pou,
            locals,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn pou(&self) -> &PartitionOfUnity {
        &self.pou
    }

    /// `P_ℓ v` for `v` given at every fine node; returned on the dofs.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.grid;
        if v.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_nodes(),
                actual: v.len(),
            });
        }
        let parts: Vec<LocalField> = grid
            .neighborhoods()
            .par_iter()
            .zip(&self.locals)
            .map(|(nb, (local, bases))| {
                let mut g = vec![0.0; nb.rect.num_nodes()];
                for (edge, basis) in nb.edges.iter().zip(bases) {
                    let trace: Vec<f64> = edge.nodes.iter().map(|&n| v[n]).collect();
                    let coeffs = basis.inner_products(&trace)?;
                    edge_data(grid, &nb.rect, edge, &basis.synthesize_nodal(&coeffs), &mut g);
                }
                let ext = local.extend(&g);
                let chi = self.pou.field(grid.coarse_node_index(nb.node.0, nb.node.1));
                let values = ext.iter().zip(&chi.values).map(|(a, b)| a * b).collect();
                Ok(LocalField { rect: nb.rect, values })
            })
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; grid.num_nodes()];
        for part in &parts {
            for (l, (i, j)) in part.rect.nodes().enumerate() {
                out[grid.node_index(i, j)] += part.values[l];
            }
        }
        Ok(grid.nodes_to_dofs(&out))
    }
}

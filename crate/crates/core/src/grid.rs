//! Two-level structured mesh of the unit square.
//!
//! The coarse mesh has `Nc × Nc` square cells of size `H = 1/Nc`; each coarse
//! cell is split into `r × r` fine cells of size `h = H/r`. Fine nodes are
//! numbered row-major, `node = j * (n + 1) + i` with `n = Nc * r`, and fine
//! cells likewise `cell = j * n + i`. Interior fine nodes carry the degrees of
//! freedom; nodes on the boundary of the unit square are Dirichlet-masked.

use crate::error::{Error, Result};

/// Inclusive rectangle of fine nodes `[x0, x1] × [y0, y1]`. Also describes
/// the fine cells `x0..x1 × y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl NodeRect {
    pub fn cells_x(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn cells_y(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells_x() + 1) * (self.cells_y() + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    /// Local row-major index of the global node `(i, j)`.
    pub fn local(&self, i: usize, j: usize) -> usize {
        (j - self.y0) * (self.cells_x() + 1) + (i - self.x0)
    }

    /// Global node coordinates of a local index.
    pub fn global(&self, local: usize) -> (usize, usize) {
        let w = self.cells_x() + 1;
        (self.x0 + local % w, self.y0 + local / w)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.x0..=self.x1).contains(&i) && (self.y0..=self.y1).contains(&j)
    }

    pub fn on_boundary(&self, i: usize, j: usize) -> bool {
        i == self.x0 || i == self.x1 || j == self.y0 || j == self.y1
    }

    /// Iterates the global `(i, j)` pairs of all nodes in local order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..=self.y1).flat_map(move |j| (self.x0..=self.x1).map(move |i| (i, j)))
    }

    /// Iterates the global `(i, j)` lower-left corners of all cells.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |j| (self.x0..self.x1).map(move |i| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

/// One side of a coarse neighborhood boundary.
#[derive(Debug, Clone)]
pub struct Edge {
    pub side: Side,
    /// Global fine node indices along the edge, ordered by increasing coordinate.
    pub nodes: Vec<usize>,
    /// `owned[p]` is false for a corner node assigned to a lower-indexed edge.
    pub owned: Vec<bool>,
    pub length: f64,
}

impl Edge {
    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn segment_length(&self) -> f64 {
        self.length / self.segments() as f64
    }
}

/// Coarse neighborhood `ω_i`: the union of coarse cells sharing coarse node `O_i`.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    /// Coarse node `(I, J)`.
    pub node: (usize, usize),
    pub rect: NodeRect,
    pub edges: [Edge; 4],
    /// Number of coarse cells in the neighborhood (4 for interior nodes).
    pub coarse_cells: usize,
}

impl Neighborhood {
    /// Every node of `∂ω` exactly once, edge by edge, honouring corner ownership.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.edges
            .iter()
            .flat_map(|e| {
                e.nodes
                    .iter()
                    .zip(&e.owned)
                    .filter(|(_, &own)| own)
                    .map(|(&n, _)| n)
            })
            .collect()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn area(&self, h: f64) -> f64 {
        self.rect.num_cells() as f64 * h * h
    }
}

#[derive(Debug, Clone)]
pub struct TwoLevelGrid {
    coarse_cells: usize,
    refinement: usize,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
    neighborhoods: Vec<Neighborhood>,
}

impl TwoLevelGrid {
    pub fn new(coarse_cells: usize, refinement: usize) -> Result<Self> {
        if coarse_cells < 2 {
            return Err(Error::DegenerateMesh(format!(
                "need at least 2 coarse cells per axis, got {coarse_cells}"
            )));
        }
        if refinement < 2 {
            return Err(Error::DegenerateMesh(format!(
                "need refinement ratio at least 2, got {refinement}"
            )));
        }
        let n = coarse_cells * refinement;
        let mut dof_of_node = vec![None; (n + 1) * (n + 1)];
        let mut node_of_dof = Vec::with_capacity((n - 1) * (n - 1));
        for j in 1..n {
            for i in 1..n {
                let node = j * (n + 1) + i;
                dof_of_node[node] = Some(node_of_dof.len());
                node_of_dof.push(node);
            }
        }

        let mut grid = TwoLevelGrid {
            coarse_cells,
            refinement,
            dof_of_node,
            node_of_dof,
            neighborhoods: Vec::new(),
        };
        grid.neighborhoods = (0..=coarse_cells)
            .flat_map(|cj| (0..=coarse_cells).map(move |ci| (ci, cj)))
            .map(|(ci, cj)| grid.build_neighborhood(ci, cj))
            .collect();
        Ok(grid)
    }

    fn build_neighborhood(&self, ci: usize, cj: usize) -> Neighborhood {
        let r = self.refinement;
        let n = self.fine_cells();
        let rect = NodeRect {
            x0: ci.saturating_sub(1) * r,
            x1: ((ci + 1) * r).min(n),
            y0: cj.saturating_sub(1) * r,
            y1: ((cj + 1) * r).min(n),
        };
        let h = self.fine_size();
        let node = |i: usize, j: usize| self.node_index(i, j);
        let horizontal = |j: usize| -> Vec<usize> { (rect.x0..=rect.x1).map(|i| node(i, j)).collect() };
        let vertical = |i: usize| -> Vec<usize> { (rect.y0..=rect.y1).map(|j| node(i, j)).collect() };

        let make = |side: Side, nodes: Vec<usize>| {
            let len = nodes.len();
            let mut owned = vec![true; len];
            // Corners go to the lower edge index: BL, BR -> bottom; TR -> right; TL -> top.
            match side {
                Side::Bottom => {}
                Side::Right => owned[0] = false,
                Side::Top => owned[len - 1] = false,
                Side::Left => {
                    owned[0] = false;
                    owned[len - 1] = false;
                }
            }
            Edge {
                side,
                length: (len - 1) as f64 * h,
                nodes,
                owned,
            }
        };

        let edges = [
            make(Side::Bottom, horizontal(rect.y0)),
            make(Side::Right, vertical(rect.x1)),
            make(Side::Top, horizontal(rect.y1)),
            make(Side::Left, vertical(rect.x0)),
        ];
        Neighborhood {
            node: (ci, cj),
            rect,
            edges,
            coarse_cells: rect.cells_x() / r * (rect.cells_y() / r),
        }
    }

    /// Coarse cells per axis, `Nc`.
    pub fn coarse_cells(&self) -> usize {
        self.coarse_cells
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// Fine cells per axis, `n = Nc * r`.
    pub fn fine_cells(&self) -> usize {
        self.coarse_cells * self.refinement
    }

    pub fn coarse_size(&self) -> f64 {
        1.0 / self.coarse_cells as f64
    }

    pub fn fine_size(&self) -> f64 {
        1.0 / self.fine_cells() as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.fine_cells() + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis() * self.nodes_per_axis()
    }

    pub fn num_cells(&self) -> usize {
        self.fine_cells() * self.fine_cells()
    }

    pub fn num_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_axis() + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.nodes_per_axis(), node / self.nodes_per_axis())
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(node);
        let h = self.fine_size();
        (i as f64 * h, j as f64 * h)
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.fine_cells() + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.fine_size();
        ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    }

    /// Global node indices of fine cell `(i, j)` in counter-clockwise order
    /// starting at the lower-left corner.
    pub fn cell_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        [
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i + 1, j + 1),
            self.node_index(i, j + 1),
        ]
    }

    /// Coarse cell `(I, J)` containing fine cell `(i, j)`.
    pub fn coarse_cell_of(&self, i: usize, j: usize) -> (usize, usize) {
        (i / self.refinement, j / self.refinement)
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.dof_of_node[node].is_none()
    }

    pub fn coarse_node_index(&self, ci: usize, cj: usize) -> usize {
        cj * (self.coarse_cells + 1) + ci
    }

    pub fn num_coarse_nodes(&self) -> usize {
        (self.coarse_cells + 1) * (self.coarse_cells + 1)
    }

    pub fn is_interior_coarse_node(&self, ci: usize, cj: usize) -> bool {
        ci > 0 && cj > 0 && ci < self.coarse_cells && cj < self.coarse_cells
    }

    /// Row-major indices of all interior coarse nodes.
    pub fn interior_coarse_nodes(&self) -> Vec<usize> {
        (1..self.coarse_cells)
            .flat_map(|cj| (1..self.coarse_cells).map(move |ci| (ci, cj)))
            .map(|(ci, cj)| self.coarse_node_index(ci, cj))
            .collect()
    }

    pub fn neighborhood(&self, coarse_node: usize) -> &Neighborhood {
        &self.neighborhoods[coarse_node]
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    /// Fine-node rectangle of coarse cell `(I, J)`.
    pub fn coarse_cell_rect(&self, ci: usize, cj: usize) -> NodeRect {
        let r = self.refinement;
        NodeRect {
            x0: ci * r,
            x1: (ci + 1) * r,
            y0: cj * r,
            y1: (cj + 1) * r,
        }
    }

    /// Whole-domain rectangle.
    pub fn domain_rect(&self) -> NodeRect {
        let n = self.fine_cells();
        NodeRect {
            x0: 0,
            x1: n,
            y0: 0,
            y1: n,
        }
    }

    /// Scatter a dof vector into a full nodal vector (zero on the boundary).
    pub fn dofs_to_nodes(&self, dofs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes()];
        for (d, &node) in self.node_of_dof.iter().enumerate() {
            out[node] = dofs[d];
        }
        out
    }

    /// Gather the interior (dof) values of a full nodal vector.
    pub fn nodes_to_dofs(&self, nodes: &[f64]) -> Vec<f64> {
        self.node_of_dof.iter().map(|&n| nodes[n]).collect()
    }
}

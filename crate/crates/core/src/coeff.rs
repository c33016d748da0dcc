//! Cell-wise permeability fields.
//!
//! A field holds one value per fine cell. Inclusion fields start from the
//! background value 1 and overwrite every cell whose center lies inside an
//! inclusion with that inclusion's value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TwoLevelGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Open rectangle `(x0, x1) × (y0, y1)`.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Open disc.
    Disc { cx: f64, cy: f64, radius: f64 },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, x1, y0, y1 } => x > x0 && x < x1 && y > y0 && y < y1,
            Shape::Disc { cx, cy, radius } => (x - cx).powi(2) + (y - cy).powi(2) < radius * radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    pub value: f64,
}

impl Inclusion {
    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64, value: f64) -> Self {
        Inclusion {
            shape: Shape::Rect { x0, x1, y0, y1 },
            value,
        }
    }

    pub fn disc(cx: f64, cy: f64, radius: f64, value: f64) -> Self {
        Inclusion {
            shape: Shape::Disc { cx, cy, radius },
            value,
        }
    }
}

/// JSON document describing an inclusion field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InclusionSet {
    pub inclusions: Vec<Inclusion>,
}

impl InclusionSet {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Synthetic high-contrast field with contrast `10^4`: two long channels
    /// crossing many coarse edges plus blocks and discs of values `10^3..10^4`.
    pub fn synthetic_high_contrast() -> Self {
        InclusionSet {
            inclusions: vec![
                Inclusion::rect(0.05, 0.95, 0.205, 0.240, 1.0e4),
                Inclusion::rect(0.615, 0.650, 0.30, 0.92, 5.0e3),
                Inclusion::rect(0.12, 0.30, 0.55, 0.70, 2.0e3),
                Inclusion::rect(0.38, 0.50, 0.38, 0.50, 1.0e3),
                Inclusion::disc(0.82, 0.55, 0.07, 8.0e3),
                Inclusion::rect(0.72, 0.92, 0.80, 0.84, 3.0e3),
                Inclusion::disc(0.30, 0.85, 0.06, 1.0e4),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    fine_cells: usize,
    values: Vec<f64>,
    inclusions: Vec<Inclusion>,
    min: f64,
    max: f64,
}

impl CoefficientField {
    pub fn homogeneous(grid: &TwoLevelGrid) -> Self {
        Self::from_values(grid.fine_cells(), vec![1.0; grid.num_cells()]).expect("unit field is valid")
    }

    /// Field from row-major cell values (`cell = j * n + i`).
    pub fn from_values(fine_cells: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != fine_cells * fine_cells {
            return Err(Error::MeshMismatch(format!(
                "{} cell values for a {fine_cells}x{fine_cells} grid",
                values.len()
            )));
        }
        if let Some((c, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidCoefficient(format!(
                "cell ({}, {}) has non-positive or non-finite value {v}",
                c % fine_cells,
                c / fine_cells
            )));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(CoefficientField {
            fine_cells,
            values,
            inclusions: Vec::new(),
            min,
            max,
        })
    }

    pub fn from_inclusions(grid: &TwoLevelGrid, inclusions: &[Inclusion]) -> Result<Self> {
        for (k, inc) in inclusions.iter().enumerate() {
            if !(inc.value.is_finite() && inc.value >= 1.0) {
                return Err(Error::InvalidCoefficient(format!(
                    "inclusion {k} has value {} below the background value 1",
                    inc.value
                )));
            }
        }
        let n = grid.fine_cells();
        let mut values = vec![1.0; n * n];
        let mut owner: Vec<Option<usize>> = vec![None; n * n];
        for j in 0..n {
            for i in 0..n {
                let (x, y) = grid.cell_center(i, j);
                for (k, inc) in inclusions.iter().enumerate() {
                    if inc.shape.contains(x, y) {
                        let c = grid.cell_index(i, j);
                        if let Some(first) = owner[c] {
                            return Err(Error::OverlappingInclusions {
                                first,
                                second: k,
                                cell_x: i,
                                cell_y: j,
                            });
                        }
                        owner[c] = Some(k);
                        values[c] = inc.value;
                    }
                }
            }
        }
        let mut field = Self::from_values(n, values)?;
        field.inclusions = inclusions.to_vec();
        Ok(field)
    }

    pub fn fine_cells(&self) -> usize {
        self.fine_cells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn inclusions(&self) -> &[Inclusion] {
        &self.inclusions
    }

    /// Lower bound `α`.
    pub fn alpha(&self) -> f64 {
        self.min
    }

    /// Upper bound `β`.
    pub fn beta(&self) -> f64 {
        self.max
    }

    /// Contrast `Λ = β / α`.
    pub fn contrast(&self) -> f64 {
        self.max / self.min
    }

    pub fn check_grid(&self, grid: &TwoLevelGrid) -> Result<()> {
        if self.fine_cells != grid.fine_cells() {
            return Err(Error::MeshMismatch(format!(
                "coefficient has {} cells per axis, grid has {}",
                self.fine_cells,
                grid.fine_cells()
            )));
        }
        Ok(())
    }

    /// Plain-text cell grid: one line per cell row (bottom row first),
    /// whitespace-separated values in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 8);
        for row in self.values.chunks(self.fine_cells) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::parse("coefficient grid", format!("{t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = (values.len() as f64).sqrt().round() as usize;
        if n * n != values.len() || n == 0 {
            return Err(Error::parse(
                "coefficient grid",
                format!("{} values do not form a square grid", values.len()),
            ));
        }
        Self::from_values(n, values)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_inclusions_gives_unit_field() {
        let g = TwoLevelGrid::new(4, 4).unwrap();
        let k = CoefficientField::from_inclusions(&g, &[]).unwrap();
        assert!(k.values().iter().all(|&v| v == 1.0));
        assert_eq!(k.contrast(), 1.0);
    }

    #[test]
    fn disc_covering_quarter_of_cells() {
        let g = TwoLevelGrid::new(8, 8).unwrap();
        // radius chosen so that pi r^2 = 1/4
        let radius = (0.25 / std::f64::consts::PI).sqrt();
        let inc = Inclusion::disc(0.5, 0.5, radius, 1e4);
        let k = CoefficientField::from_inclusions(&g, &[inc.clone()]).unwrap();
        let n = g.fine_cells();
        let mut inside = 0;
        for j in 0..n {
            for i in 0..n {
                let (x, y) = g.cell_center(i, j);
                let expect = if inc.shape.contains(x, y) {
                    inside += 1;
                    1e4
                } else {
                    1.0
                };
                assert_eq!(k.value(g.cell_index(i, j)), expect);
            }
        }
        let fraction = inside as f64 / (n * n) as f64;
        assert!((fraction - 0.25).abs() < 0.01, "fraction {fraction}");
        assert_eq!(k.alpha(), 1.0);
        assert_eq!(k.beta(), 1e4);
        assert_eq!(k.contrast(), 1e4);
    }

    #[test]
    fn two_rectangles_take_cellwise_max() {
        let g = TwoLevelGrid::new(4, 4).unwrap();
        let incs = [
            Inclusion::rect(0.1, 0.3, 0.1, 0.3, 1e2),
            Inclusion::rect(0.6, 0.9, 0.6, 0.9, 1e3),
        ];
        let k = CoefficientField::from_inclusions(&g, &incs).unwrap();
        assert_eq!(k.beta(), 1e3);
        assert_eq!(k.alpha(), 1.0);
        assert!(k.values().contains(&1e2));
    }

    #[test]
    fn overlapping_inclusions_rejected() {
        let g = TwoLevelGrid::new(4, 4).unwrap();
        let incs = [
            Inclusion::rect(0.1, 0.5, 0.1, 0.5, 10.0),
            Inclusion::disc(0.45, 0.45, 0.1, 20.0),
        ];
        assert!(matches!(
            CoefficientField::from_inclusions(&g, &incs),
            Err(Error::OverlappingInclusions { first: 0, second: 1, .. })
        ));
    }

    #[test]
    fn small_inclusion_values_rejected() {
        let g = TwoLevelGrid::new(2, 2).unwrap();
        let incs = [Inclusion::rect(0.1, 0.5, 0.1, 0.5, 0.5)];
        assert!(matches!(
            CoefficientField::from_inclusions(&g, &incs),
            Err(Error::InvalidCoefficient(_))
        ));
        assert!(CoefficientField::from_values(2, vec![1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn synthetic_field_is_disjoint_with_contrast_1e4() {
        for (nc, r) in [(8, 4), (16, 8)] {
            let g = TwoLevelGrid::new(nc, r).unwrap();
            let k = CoefficientField::from_inclusions(&g, &InclusionSet::synthetic_high_contrast().inclusions)
                .unwrap();
            assert_eq!(k.alpha(), 1.0);
            assert_eq!(k.contrast(), 1e4);
        }
    }

    #[test]
    fn text_roundtrip_is_bit_exact() {
        let g = TwoLevelGrid::new(2, 3).unwrap();
        let values: Vec<f64> = (0..g.num_cells()).map(|c| 1.0 + (c as f64).sqrt() * 0.1 + 1e-17).collect();
        let k = CoefficientField::from_values(g.fine_cells(), values).unwrap();
        let back = CoefficientField::from_text(&k.to_text()).unwrap();
        for (a, b) in k.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(k.to_text(), back.to_text());
    }

    #[test]
    fn json_inclusion_config_roundtrip() {
        let set = InclusionSet::synthetic_high_contrast();
        let text = set.to_json().unwrap();
        assert_eq!(InclusionSet::from_json(&text).unwrap(), set);
        let parsed = InclusionSet::from_json(
            r#"{"inclusions": [{"shape": "disc", "cx": 0.5, "cy": 0.5, "radius": 0.1, "value": 100.0}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.inclusions[0], Inclusion::disc(0.5, 0.5, 0.1, 100.0));
    }

    #[test]
    fn rejects_non_square_text() {
        assert!(CoefficientField::from_text("1 1 1").is_err());
        assert!(CoefficientField::from_text("1 x 1 1").is_err());
    }
}

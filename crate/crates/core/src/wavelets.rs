//! `L²`-orthonormal Haar hierarchies on coarse edges.
//!
//! An edge with `s` fine segments supports levels `ℓ` with `2^ℓ | s`. The
//! level-`ℓ` basis holds the scaling function plus `2^j` wavelets for each
//! `j = 0..ℓ`, `2^ℓ` functions in total, all piecewise constant on the fine
//! segments.

use crate::error::{Error, Result};
use crate::grid::Edge;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaarKind {
    Scaling,
    /// Wavelet at dyadic scale `j` with translation `m ∈ 0..2^j`.
    Wavelet { scale: u32, shift: usize },
}

/// Piecewise-constant function on an edge: value `values[p]` on segments
/// `breaks[p]..breaks[p + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarFunction {
    pub kind: HaarKind,
    pub breaks: Vec<usize>,
    pub values: Vec<f64>,
}

impl HaarFunction {
    pub fn segment_value(&self, segment: usize) -> f64 {
        let p = self.breaks.partition_point(|&b| b <= segment) - 1;
        self.values[p]
    }

    /// Value on every segment.
    pub fn segment_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(*self.breaks.last().unwrap());
        for (w, &v) in self.breaks.windows(2).zip(&self.values) {
            out.extend(std::iter::repeat(v).take(w[1] - w[0]));
        }
        out
    }

    /// Nodal values for Dirichlet data; a node between two segments takes
    /// the value of the segment on its lower-coordinate side.
    pub fn to_nodal(&self) -> Vec<f64> {
        let seg = self.segment_values();
        let mut out = Vec::with_capacity(seg.len() + 1);
        out.push(seg[0]);
        out.extend_from_slice(&seg);
        out
    }
}

#[derive(Debug, Clone)]
pub struct EdgeWaveletBasis {
    pub level: u32,
    pub segments: usize,
    pub length: f64,
    pub functions: Vec<HaarFunction>,
}

/// Largest level admissible for an edge with `segments` segments.
pub fn max_level(segments: usize) -> u32 {
    segments.trailing_zeros()
}

impl EdgeWaveletBasis {
    pub fn new(segments: usize, length: f64, level: u32) -> Result<Self> {
        let pieces = 1usize.checked_shl(level).unwrap_or(0);
        if segments == 0 || pieces == 0 || segments % pieces != 0 {
            return Err(Error::WaveletAlignment {
                level,
                segments,
                max_level: max_level(segments),
            });
        }
        let mut functions = Vec::with_capacity(pieces);
        functions.push(HaarFunction {
            kind: HaarKind::Scaling,
            breaks: vec![0, segments],
            values: vec![length.powf(-0.5)],
        });
        for scale in 0..level {
            let count = 1usize << scale;
            let width = segments / count;
            let amp = (count as f64 / length).sqrt();
            for shift in 0..count {
                let a = shift * width;
                let mid = a + width / 2;
                let b = a + width;
                let mut breaks = Vec::with_capacity(5);
                let mut values = Vec::with_capacity(4);
                if a > 0 {
                    breaks.push(0);
                    values.push(0.0);
                }
                breaks.extend([a, mid]);
                values.extend([amp, -amp]);
                breaks.push(b);
                if b < segments {
                    values.push(0.0);
                    breaks.push(segments);
                }
                functions.push(HaarFunction {
                    kind: HaarKind::Wavelet { scale, shift },
                    breaks,
                    values,
                });
            }
        }
        Ok(EdgeWaveletBasis {
            level,
            segments,
            length,
            functions,
        })
    }

    pub fn for_edge(edge: &Edge, level: u32) -> Result<Self> {
        Self::new(edge.segments(), edge.length, level)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn segment_length(&self) -> f64 {
        self.length / self.segments as f64
    }

    /// Exact `∫_Γ v ψ_j ds` for a piecewise-linear `v` given at the edge nodes.
    pub fn inner_products(&self, trace: &[f64]) -> Result<Vec<f64>> {
        if trace.len() != self.segments + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.segments + 1,
                actual: trace.len(),
            });
        }
        let h = self.segment_length();
        let averages: Vec<f64> = trace.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).collect();
        Ok(self
            .functions
            .iter()
            .map(|f| {
                f.breaks
                    .windows(2)
                    .zip(&f.values)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(w, &v)| v * averages[w[0]..w[1]].iter().sum::<f64>())
                    .sum()
            })
            .collect())
    }

    /// Exact Gram matrix `∫_Γ ψ_j ψ_k ds`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let h = self.segment_length();
        let vals: Vec<Vec<f64>> = self.functions.iter().map(HaarFunction::segment_values).collect();
        vals.iter()
            .map(|a| {
                vals.iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| x * y * h).sum())
                    .collect()
            })
            .collect()
    }

    /// Nodal boundary values of `Σ_j c_j ψ_j`.
    pub fn synthesize_nodal(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.segments + 1];
        for (f, &c) in self.functions.iter().zip(coeffs) {
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(f.to_nodal()) {
                    *o += c * v;
                }
            }
        }
        out
    }
}

//! Backward Euler and Rannacher-started Crank–Nicolson time stepping for
//! `M u' + A u = F(t)`, on the fine space or on `span(Φ)`.
//!
//! Time levels are always computed as `m · δt` from a global step index `m`,
//! so composing propagators over consecutive intervals reproduces a single
//! run exactly.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FineOperators;
use crate::msfem::{grid_text, MultiscaleSpace};
use crate::problem::{nodal_interpolate, ProblemData};
use crate::solver::{CholeskyFactor, FactorCache};
use crate::sparse::CsrMatrix;

/// A symmetric Galerkin system `M u' + A u = F(t)`.
pub trait GalerkinSystem: Sync {
    fn dim(&self) -> usize;
    fn mass(&self) -> &CsrMatrix;
    fn stiffness(&self) -> &CsrMatrix;
    /// Load vector at time `t`, `None` for a vanishing source.
    fn load(&self, data: &ProblemData, t: f64) -> Option<Vec<f64>>;
    /// Cached factor of `M + τA`.
    fn step_factor(&self, tau: f64) -> Result<Arc<CholeskyFactor>>;
}

impl GalerkinSystem for MultiscaleSpace {
    fn dim(&self) -> usize {
        MultiscaleSpace::dim(self)
    }

    fn mass(&self) -> &CsrMatrix {
        MultiscaleSpace::mass(self)
    }

    fn stiffness(&self) -> &CsrMatrix {
        MultiscaleSpace::stiffness(self)
    }

    fn load(&self, data: &ProblemData, t: f64) -> Option<Vec<f64>> {
        MultiscaleSpace::load(self, data, t)
    }

    fn step_factor(&self, tau: f64) -> Result<Arc<CholeskyFactor>> {
        MultiscaleSpace::step_factor(self, tau)
    }
}

/// The fine Q1 system on the interior dofs.
#[derive(Debug)]
pub struct FineSystem {
    ops: Arc<FineOperators>,
    factors: FactorCache,
}

impl FineSystem {
    pub fn new(ops: Arc<FineOperators>) -> Self {
        FineSystem {
            ops,
            factors: FactorCache::default(),
        }
    }

    pub fn operators(&self) -> &Arc<FineOperators> {
        &self.ops
    }

    /// Nodal interpolant of `u0` on the dofs.
    pub fn initial(&self, data: &ProblemData) -> Result<Vec<f64>> {
        nodal_interpolate(&self.ops.grid, |x, y| (data.initial)(x, y))
    }
}

impl GalerkinSystem for FineSystem {
    fn dim(&self) -> usize {
        self.ops.grid.num_dofs()
    }

    fn mass(&self) -> &CsrMatrix {
        self.ops.mass.matrix()
    }

    fn stiffness(&self) -> &CsrMatrix {
        self.ops.stiffness.matrix()
    }

    fn load(&self, data: &ProblemData, t: f64) -> Option<Vec<f64>> {
        self.ops.load(data, t)
    }

    fn step_factor(&self, tau: f64) -> Result<Arc<CholeskyFactor>> {
        self.factors.get_or_factor(tau, self.mass(), self.stiffness())
    }
}

/// `[0, T]` split into `M_Δ` coarse intervals of `q` fine steps each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub final_time: f64,
    pub coarse_steps: usize,
    pub ratio: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, coarse_steps: usize, ratio: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidTimeGrid(format!("final time {final_time} must be positive")));
        }
        if coarse_steps == 0 {
            return Err(Error::InvalidTimeGrid("need at least one coarse step".into()));
        }
        if ratio < 2 {
            return Err(Error::InvalidTimeGrid(format!("fine steps per coarse step {ratio} must be at least 2")));
        }
        Ok(TimeGrid {
            final_time,
            coarse_steps,
            ratio,
        })
    }

    /// Builds the grid from step sizes, which must divide evenly.
    pub fn from_steps(final_time: f64, coarse_step: f64, fine_step: f64) -> Result<Self> {
        let m = whole_ratio(final_time, coarse_step, "final time", "coarse step")?;
        let q = whole_ratio(coarse_step, fine_step, "coarse step", "fine step")?;
        Self::new(final_time, m, q)
    }

    pub fn coarse_step(&self) -> f64 {
        self.final_time / self.coarse_steps as f64
    }

    pub fn fine_step(&self) -> f64 {
        self.final_time / self.fine_steps() as f64
    }

    pub fn fine_steps(&self) -> usize {
        self.coarse_steps * self.ratio
    }

    /// `T^n = n ΔT`.
    pub fn coarse_time(&self, n: usize) -> f64 {
        self.final_time * n as f64 / self.coarse_steps as f64
    }

    /// `t_m = m δt`.
    pub fn fine_time(&self, m: usize) -> f64 {
        self.final_time * m as f64 / self.fine_steps() as f64
    }
}

/// `a / b` as an integer, or an error when it is not one.
pub fn whole_ratio(a: f64, b: f64, what_a: &str, what_b: &str) -> Result<usize> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidTimeGrid(format!("{what_a} {a} and {what_b} {b} must be positive")));
    }
    let r = (a / b).round();
    if r < 1.0 || ((r * b - a).abs() > 1e-9 * a) {
        return Err(Error::InvalidTimeGrid(format!("{what_b} {b} does not divide {what_a} {a}")));
    }
    Ok(r as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BackwardEuler,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Backward Euler steps taken before Crank–Nicolson, counted from `t = 0`.
    pub startup_steps: usize,
}

impl SchemeConfig {
    pub fn backward_euler() -> Self {
        SchemeConfig {
            scheme: Scheme::BackwardEuler,
            startup_steps: 0,
        }
    }

    pub fn crank_nicolson() -> Self {
        SchemeConfig {
            scheme: Scheme::CrankNicolson,
            startup_steps: 3,
        }
    }

    /// Whether global step `m` (1-based) is a backward Euler step.
    pub fn is_implicit_euler(&self, m: usize) -> bool {
        self.scheme == Scheme::BackwardEuler || m <= self.startup_steps
    }
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self::backward_euler()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Advances `u` over global steps `first + 1 ..= first + steps` of size `dt`.
/// `on_step(m, u)` sees the state after each step.
pub fn advance<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    u: &[f64],
    first: usize,
    steps: usize,
    dt: f64,
    cfg: &SchemeConfig,
    mut on_step: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    if u.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            actual: u.len(),
        });
    }
    let time = |m: usize| m as f64 * dt;
    let mut u = u.to_vec();
    let mut prev_load = if cfg.scheme == Scheme::CrankNicolson {
        sys.load(data, time(first))
    } else {
        None
    };
    for m in first + 1..=first + steps {
        let load = sys.load(data, time(m));
        let step_err = |e| Error::StepFailed {
            step: m,
            source: Box::new(e),
        };
        if cfg.is_implicit_euler(m) {
            let mut rhs = sys.mass().mul_vec(&u);
            if let Some(f) = &load {
                axpy(&mut rhs, dt, f);
            }
            sys.step_factor(dt).map_err(step_err)?.solve_in_place(&mut rhs);
            u = rhs;
        } else {
            // Midpoint form: (M + δt/2 A) w = M u + δt/4 (F^m + F^{m−1}),
            // then u ← 2w − u. Avoids forming A u.
            let mut rhs = sys.mass().mul_vec(&u);
            for f in [&load, &prev_load].into_iter().flatten() {
                axpy(&mut rhs, 0.25 * dt, f);
            }
            sys.step_factor(0.5 * dt).map_err(step_err)?.solve_in_place(&mut rhs);
            u.iter_mut().zip(&rhs).for_each(|(u, w)| *u = 2.0 * w - *u);
        }
        if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(step_err(Error::InvalidConfig(format!("non-finite state entry {i}: {v}"))));
        }
        if cfg.scheme == Scheme::CrankNicolson {
            prev_load = load;
        }
        on_step(m, &u);
    }
    Ok(u)
}

/// States recorded at every `stride`-th step, starting with the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

fn recorded_run<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    u0: Vec<f64>,
    dt: f64,
    steps: usize,
    stride: usize,
    cfg: &SchemeConfig,
) -> Result<Trajectory> {
    if stride == 0 || steps % stride != 0 {
        return Err(Error::InvalidTimeGrid(format!("record stride {stride} must divide {steps} steps")));
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![u0.clone()],
    };
    advance(sys, data, &u0, 0, steps, dt, cfg, |m, u| {
        if m % stride == 0 {
            traj.times.push(m as f64 * dt);
            traj.states.push(u.to_vec());
        }
    })?;
    Ok(traj)
}

/// Fine-space solution with step `dt` up to `data.final_time`, recorded every
/// `stride` steps.
pub fn fine_reference_solve(
    sys: &FineSystem,
    data: &ProblemData,
    dt: f64,
    stride: usize,
    cfg: &SchemeConfig,
) -> Result<Trajectory> {
    let steps = whole_ratio(data.final_time, dt, "final time", "time step")?;
    recorded_run(sys, data, sys.initial(data)?, dt, steps, stride, cfg)
}

/// Reduced-space solution from the projected initial data, recorded at the
/// coarse times of `grid`.
pub fn multiscale_sequential_solve(
    space: &MultiscaleSpace,
    data: &ProblemData,
    grid: &TimeGrid,
    cfg: &SchemeConfig,
) -> Result<Trajectory> {
    let u0 = space.project_initial(data)?;
    recorded_run(space, data, u0, grid.fine_step(), grid.fine_steps(), grid.ratio, cfg)
}

/// `E(T^n, U)`: one backward Euler step of size `ΔT` with the load at `T^{n+1}`.
pub fn coarse_propagate<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    n: usize,
    u: &[f64],
) -> Result<Vec<f64>> {
    let dt = grid.coarse_step();
    advance(sys, data, u, n, 1, dt, &SchemeConfig::backward_euler(), |_, _| {})
}

/// `F(T^n, ΔT, U)`: `q` fine steps starting from `T^n`.
pub fn fine_propagate<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    n: usize,
    u: &[f64],
    cfg: &SchemeConfig,
) -> Result<Vec<f64>> {
    advance(sys, data, u, n * grid.ratio, grid.ratio, grid.fine_step(), cfg, |_, _| {})
}

/// `S(T^n, U) = F(T^n, ΔT, U) − E(T^n, U)`.
pub fn jump_operator<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    n: usize,
    u: &[f64],
    cfg: &SchemeConfig,
) -> Result<Vec<f64>> {
    let mut f = fine_propagate(sys, data, grid, n, u, cfg)?;
    let e = coarse_propagate(sys, data, grid, n, u)?;
    axpy(&mut f, -1.0, &e);
    Ok(f)
}

/// Writes a dof vector as a row-major nodal grid, rows bottom first.
pub fn write_snapshot(grid: &crate::grid::TwoLevelGrid, dofs: &[f64], path: &Path) -> Result<()> {
    let text = grid_text(grid.nodes_per_axis(), &grid.dofs_to_nodes(dofs));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;
    use crate::grid::TwoLevelGrid;

    fn fine(nc: usize, r: usize) -> FineSystem {
        let g = Arc::new(TwoLevelGrid::new(nc, r).unwrap());
        let k = Arc::new(CoefficientField::homogeneous(&g));
        FineSystem::new(Arc::new(FineOperators::new(g, k).unwrap()))
    }

    #[test]
    fn time_grid_arithmetic() {
        let g = TimeGrid::from_steps(1.0, 0.1, 1e-3).unwrap();
        assert_eq!((g.coarse_steps, g.ratio), (10, 100));
        assert_eq!(g.fine_time(100), g.coarse_time(1));
        assert!(TimeGrid::from_steps(1.0, 0.3, 1e-3).is_err());
        assert!(TimeGrid::from_steps(0.1, 0.01, 0.01).is_err());
        assert!(TimeGrid::new(0.0, 1, 2).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let sys = fine(2, 4);
        let data = ProblemData::new(|_, _| 0.0, None, 0.1);
        for cfg in [SchemeConfig::backward_euler(), SchemeConfig::crank_nicolson()] {
            let t = fine_reference_solve(&sys, &data, 0.01, 5, &cfg).unwrap();
            assert_eq!(t.states.len(), 3);
            assert!(t.states.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn startup_counts_from_time_zero() {
        let cfg = SchemeConfig::crank_nicolson();
        assert!(cfg.is_implicit_euler(1) && cfg.is_implicit_euler(3));
        assert!(!cfg.is_implicit_euler(4));
        assert!(SchemeConfig::backward_euler().is_implicit_euler(1000));
    }

    #[test]
    fn single_fine_step_equals_coarse_step() {
        let sys = fine(2, 4);
        let data = ProblemData::new(
            |x, y| x * (1.0 - x) * y * (1.0 - y),
            Some(Arc::new(|x: f64, y: f64, t: f64| x * y + t)),
            0.2,
        );
        let u0 = sys.initial(&data).unwrap();
        let g = TimeGrid::new(0.2, 4, 2).unwrap();
        // q = 1 in effect: a single fine step of size ΔT.
        let coarse = coarse_propagate(&sys, &data, &g, 1, &u0).unwrap();
        let one = advance(&sys, &data, &u0, 1, 1, g.coarse_step(), &SchemeConfig::backward_euler(), |_, _| {}).unwrap();
        assert_eq!(coarse, one);
    }

    #[test]
    fn backward_euler_contracts_in_mass_norm() {
        let sys = fine(2, 4);
        let data = ProblemData::new(|x, y| (7.0 * x).sin() * (3.0 * y).cos() * x * (1.0 - x) * y * (1.0 - y), None, 0.05);
        let t = fine_reference_solve(&sys, &data, 0.005, 1, &SchemeConfig::backward_euler()).unwrap();
        let norms: Vec<f64> = t.states.iter().map(|u| sys.operators().l2_norm(u)).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    }
}

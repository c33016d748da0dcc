//! Parareal iteration on the reduced space.
//!
//! The coarse sweep runs once to produce iterate 0. Each later iteration
//! propagates every interval with the fine solver in parallel, forms the
//! jumps `S_n = F(T^n, U_k^n) − E(T^n, U_k^n)` against the cached coarse
//! values of the same iterate, and then sweeps
//! `U_{k+1}^{n+1} = S_n + E(T^n, U_{k+1}^n)` sequentially.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemData;
use crate::time::{coarse_propagate, fine_propagate, GalerkinSystem, SchemeConfig, TimeGrid};

/// Norm used by the stopping criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopNorm {
    /// Euclidean norm of the coefficient vectors.
    #[default]
    Euclidean,
    /// `√(cᵀ (ΦᵀMΦ) c)`, the `L²` norm of the reconstructed function.
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PararealConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Worker count for the fine sweep; `None` uses the global pool.
    pub threads: Option<usize>,
    pub stop_norm: StopNorm,
}

impl PararealConfig {
    pub fn new(tolerance: f64, max_iterations: usize) -> Self {
        PararealConfig {
            tolerance,
            max_iterations,
            threads: None,
            stop_norm: StopNorm::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max iterations must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate `k`: the trajectory `U_k^n` and the coarse propagations
/// `E(T^n, U_k^n)` computed while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct PararealState {
    pub k: usize,
    pub trajectory: Vec<Vec<f64>>,
    pub coarse: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub err: f64,
    pub wall_coarse_ms: f64,
    pub wall_fine_ms: f64,
    pub wall_jump_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PararealReport {
    pub initial_coarse_ms: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub threads: usize,
    pub stop_norm: StopNorm,
}

impl PararealReport {
    pub fn final_k(&self) -> usize {
        self.iterations.len()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.err).collect()
    }

    pub fn fine_sweep_ms(&self) -> f64 {
        self.iterations.iter().map(|r| r.wall_fine_ms).sum()
    }

    /// CSV with columns `k, err, wall_coarse_ms, wall_fine_ms`; row 0 is the
    /// initial coarse sweep and has no error.
    pub fn convergence_csv(&self) -> String {
        let mut s = String::from("k,err,wall_coarse_ms,wall_fine_ms\n");
        s.push_str(&format!("0,,{:?},0.0\n", self.initial_coarse_ms));
        for r in &self.iterations {
            s.push_str(&format!("{},{:?},{:?},{:?}\n", r.k, r.err, r.wall_coarse_ms, r.wall_fine_ms));
        }
        s
    }

    pub fn write_convergence_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.convergence_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// All iterates `U_0, …, U_K` plus the run report.
#[derive(Debug, Clone)]
pub struct PararealRun {
    pub report: PararealReport,
    pub iterates: Vec<Vec<Vec<f64>>>,
}

impl PararealRun {
    pub fn final_trajectory(&self) -> &[Vec<f64>] {
        self.iterates.last().expect("at least the coarse iterate")
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Iterate 0: the sequential coarse trajectory from `u0`.
pub fn initial_coarse_sweep<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    u0: &[f64],
) -> Result<PararealState> {
    let mut trajectory = vec![u0.to_vec()];
    let mut coarse = Vec::with_capacity(grid.coarse_steps);
    for n in 0..grid.coarse_steps {
        let e = coarse_propagate(sys, data, grid, n, &trajectory[n]).map_err(|e| interval_err(n, e))?;
        coarse.push(e.clone());
        trajectory.push(e);
    }
    Ok(PararealState { k: 0, trajectory, coarse })
}

fn interval_err(interval: usize, e: Error) -> Error {
    Error::IntervalFailed {
        interval,
        source: Box::new(e),
    }
}

/// Fine propagations `F(T^n, ΔT, U_k^n)` of every interval, run on the
/// current rayon pool.
pub fn fine_sweep<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    scheme: &SchemeConfig,
    state: &PararealState,
) -> Result<Vec<Vec<f64>>> {
    (0..grid.coarse_steps)
        .into_par_iter()
        .map(|n| fine_propagate(sys, data, grid, n, &state.trajectory[n], scheme).map_err(|e| interval_err(n, e)))
        .collect()
}

/// Sequential correction sweep given the fine propagations of `state`.
pub fn correction_sweep<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    state: &PararealState,
    fine: &[Vec<f64>],
) -> Result<PararealState> {
    let mut trajectory = vec![state.trajectory[0].clone()];
    let mut coarse = Vec::with_capacity(grid.coarse_steps);
    for n in 0..grid.coarse_steps {
        let e = coarse_propagate(sys, data, grid, n, &trajectory[n]).map_err(|e| interval_err(n, e))?;
        let next = fine[n]
            .iter()
            .zip(&state.coarse[n])
            .zip(&e)
            .map(|((f, old), new)| (f - old) + new)
            .collect();
        coarse.push(e);
        trajectory.push(next);
    }
    Ok(PararealState {
        k: state.k + 1,
        trajectory,
        coarse,
    })
}

/// One parareal iteration `k → k + 1`.
pub fn parareal_iterate<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    scheme: &SchemeConfig,
    state: &PararealState,
) -> Result<PararealState> {
    let fine = fine_sweep(sys, data, grid, scheme, state)?;
    correction_sweep(sys, data, grid, state, &fine)
}

/// `(1/M_Δ) Σ_{n=1}^{M_Δ} ‖a^n − b^n‖`.
pub fn stopping_error<S: GalerkinSystem + ?Sized>(
    sys: &S,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    norm: StopNorm,
) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b).skip(1) {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        total += match norm {
            StopNorm::Euclidean => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            StopNorm::Mass => {
                let md = sys.mass().mul_vec(&d);
                d.iter().zip(&md).map(|(p, q)| p * q).sum::<f64>().max(0.0).sqrt()
            }
        };
    }
    Ok(total / (a.len() - 1) as f64)
}

/// Runs parareal from `u0` until `err ≤ ε` or `k = kmax`. The error starts
/// at 1, so a tolerance of at least 1 stops after the coarse sweep.
pub fn run_parareal<S: GalerkinSystem + ?Sized>(
    sys: &S,
    data: &ProblemData,
    grid: &TimeGrid,
    scheme: &SchemeConfig,
    cfg: &PararealConfig,
    u0: &[f64],
) -> Result<PararealRun> {
    cfg.validate()?;
    let pool = match cfg.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let threads = pool.as_ref().map_or_else(rayon::current_num_threads, |p| p.current_num_threads());

    let start = Instant::now();
    let mut state = initial_coarse_sweep(sys, data, grid, u0)?;
    let initial_coarse_ms = elapsed_ms(start);
    let mut iterates = vec![state.trajectory.clone()];
    let mut records = Vec::new();
    let mut err = 1.0;
    while err > cfg.tolerance && state.k < cfg.max_iterations {
        let t = Instant::now();
        let fine = match &pool {
            Some(p) => p.install(|| fine_sweep(sys, data, grid, scheme, &state))?,
            None => fine_sweep(sys, data, grid, scheme, &state)?,
        };
        let wall_fine_ms = elapsed_ms(t);
        let t = Instant::now();
        let next = correction_sweep(sys, data, grid, &state, &fine)?;
        let wall_coarse_ms = elapsed_ms(t);
        let t = Instant::now();
        err = stopping_error(sys, &next.trajectory, &state.trajectory, cfg.stop_norm)?;
        let wall_jump_ms = elapsed_ms(t);
        records.push(IterationRecord {
            k: next.k,
            err,
            wall_coarse_ms,
            wall_fine_ms,
            wall_jump_ms,
        });
        iterates.push(next.trajectory.clone());
        state = next;
    }
    Ok(PararealRun {
        report: PararealReport {
            initial_coarse_ms,
            iterations: records,
            converged: err <= cfg.tolerance,
            threads,
            stop_norm: cfg.stop_norm,
        },
        iterates,
    })
}

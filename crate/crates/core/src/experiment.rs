//! Experiment configuration, presets, relative error tables and run output.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, Inclusion, InclusionSet};
use crate::error::{Error, Result};
use crate::fem::FineOperators;
use crate::grid::TwoLevelGrid;
use crate::msfem::{assemble_multiscale_space, MultiscaleSpace};
use crate::parareal::{run_parareal, PararealConfig, PararealReport, PararealRun, StopNorm};
use crate::problem::ProblemData;
use crate::time::{
    fine_reference_solve, multiscale_sequential_solve, whole_ratio, write_snapshot, FineSystem, Scheme, SchemeConfig,
    TimeGrid, Trajectory,
};
use crate::wavelets::max_level;

/// `f(x, y, t) = 200π² sin(πx) sin(πy) sin(10πtx)`.
pub fn nonzero_source(x: f64, y: f64, t: f64) -> f64 {
    200.0 * PI * PI * (PI * x).sin() * (PI * y).sin() * (10.0 * PI * t * x).sin()
}

/// `u0 = x(1 − x) y(1 − y)`.
pub fn bubble(x: f64, y: f64) -> f64 {
    x * (1.0 - x) * y * (1.0 - y)
}

pub fn preset_nonzero_source() -> ProblemData {
    ProblemData::new(bubble, Some(Arc::new(nonzero_source)), 1.0)
}

pub fn preset_zero_source() -> ProblemData {
    ProblemData::new(bubble, None, 0.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourcePreset {
    Nonzero,
    Zero,
}

impl SourcePreset {
    pub fn problem(self, final_time: f64) -> ProblemData {
        let mut data = match self {
            SourcePreset::Nonzero => preset_nonzero_source(),
            SourcePreset::Zero => preset_zero_source(),
        };
        data.final_time = final_time;
        data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientSource {
    Homogeneous,
    /// The shipped high-contrast inclusion set.
    Synthetic,
    Inclusions { inclusions: Vec<Inclusion> },
    /// Whitespace-separated fine-cell values, row-major.
    File { path: PathBuf },
}

impl CoefficientSource {
    pub fn build(&self, grid: &TwoLevelGrid) -> Result<CoefficientField> {
        let field = match self {
            CoefficientSource::Homogeneous => CoefficientField::homogeneous(grid),
            CoefficientSource::Synthetic => {
                CoefficientField::from_inclusions(grid, &InclusionSet::synthetic_high_contrast().inclusions)?
            }
            CoefficientSource::Inclusions { inclusions } => CoefficientField::from_inclusions(grid, inclusions)?,
            CoefficientSource::File { path } => CoefficientField::read_text(path)?,
        };
        field.check_grid(grid)?;
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Exp1,
    Exp2,
    Exp3,
    ZeroBe,
    ZeroCn,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Exp1, Preset::Exp2, Preset::Exp3, Preset::ZeroBe, Preset::ZeroCn];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 => "exp2",
            Preset::Exp3 => "exp3",
            Preset::ZeroBe => "zero-be",
            Preset::ZeroCn => "zero-cn",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        let (scheme, coarse_step) = match self {
            Preset::Exp1 | Preset::ZeroBe => (Scheme::BackwardEuler, None),
            Preset::Exp2 | Preset::ZeroCn => (Scheme::CrankNicolson, None),
            Preset::Exp3 => (Scheme::BackwardEuler, Some(1e-2)),
        };
        let zero = matches!(self, Preset::ZeroBe | Preset::ZeroCn);
        ExperimentConfig {
            name: self.name().to_string(),
            coarse_cells: 16,
            refinement: 8,
            level: 2,
            final_time: if zero { 0.1 } else { 1.0 },
            coarse_step: coarse_step.unwrap_or(if zero { 1e-2 } else { 0.1 }),
            fine_step: 1e-3,
            reference_step: if zero { 1e-3 } else { 1e-4 },
            scheme,
            startup_steps: if scheme == Scheme::CrankNicolson { 3 } else { 0 },
            source: if zero { SourcePreset::Zero } else { SourcePreset::Nonzero },
            coefficient: CoefficientSource::Synthetic,
            tolerance: 1e-8,
            max_iterations: None,
            table_iterations: 4,
            threads: None,
            stop_norm: StopNorm::Euclidean,
            snapshot_times: if zero {
                vec![0.01, 0.03, 0.05, 0.1]
            } else {
                vec![0.1, 0.3, 0.5, 1.0]
            },
            seed: 0,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

fn default_startup() -> usize {
    3
}

fn default_table_iterations() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub coarse_cells: usize,
    pub refinement: usize,
    pub level: u32,
    pub final_time: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Step of the backward Euler fine-grid reference.
    pub reference_step: f64,
    pub scheme: Scheme,
    #[serde(default = "default_startup")]
    pub startup_steps: usize,
    pub source: SourcePreset,
    pub coefficient: CoefficientSource,
    pub tolerance: f64,
    /// Defaults to the number of coarse intervals.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    /// Largest `k` reported in the error tables.
    #[serde(default = "default_table_iterations")]
    pub table_iterations: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub stop_norm: StopNorm,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config file; a relative coefficient file path is taken
    /// relative to the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let CoefficientSource::File { path: file } = &mut cfg.coefficient {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_steps(self.final_time, self.coarse_step, self.fine_step)
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        SchemeConfig {
            scheme: self.scheme,
            startup_steps: if self.scheme == Scheme::CrankNicolson { self.startup_steps } else { 0 },
        }
    }

    pub fn problem(&self) -> ProblemData {
        self.source.problem(self.final_time)
    }

    pub fn max_iterations(&self) -> Result<usize> {
        Ok(self.max_iterations.unwrap_or(self.time_grid()?.coarse_steps))
    }

    pub fn parareal(&self) -> Result<PararealConfig> {
        let cfg = PararealConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations()?,
            threads: self.threads,
            stop_norm: self.stop_norm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reference steps per coarse interval.
    pub fn reference_stride(&self) -> Result<usize> {
        whole_ratio(self.coarse_step, self.reference_step, "coarse step", "reference step")
    }

    /// Coarse index of each snapshot time.
    pub fn snapshot_indices(&self) -> Result<Vec<usize>> {
        let grid = self.time_grid()?;
        self.snapshot_times
            .iter()
            .map(|&t| {
                let n = (t / grid.coarse_step()).round();
                if n < 1.0 || n > grid.coarse_steps as f64 || (n * grid.coarse_step() - t).abs() > 1e-9 * t.abs().max(1.0) {
                    Err(Error::InvalidConfig(format!("snapshot time {t} is not a coarse time level")))
                } else {
                    Ok(n as usize)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_cells < 2 || self.refinement < 2 {
            return Err(Error::DegenerateMesh(format!(
                "need at least 2 coarse cells and refinement 2, got {} and {}",
                self.coarse_cells, self.refinement
            )));
        }
        if self.level > max_level(self.refinement) {
            return Err(Error::WaveletAlignment {
                level: self.level,
                segments: self.refinement,
                max_level: max_level(self.refinement),
            });
        }
        self.time_grid()?;
        if self.reference_step > self.fine_step * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "reference step {} exceeds fine step {}",
                self.reference_step, self.fine_step
            )));
        }
        whole_ratio(self.fine_step, self.reference_step, "fine step", "reference step")?;
        self.reference_stride()?;
        self.parareal()?;
        self.snapshot_indices()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorNorm {
    L2,
    Energy,
}

impl ErrorNorm {
    pub fn file_stem(self) -> &'static str {
        match self {
            ErrorNorm::L2 => "errors_l2",
            ErrorNorm::Energy => "errors_energy",
        }
    }
}

/// Relative errors in percent, `L²` then energy; `None` where the reference
/// norm vanishes.
pub fn relative_errors(ops: &FineOperators, reference: &[f64], candidate: &[f64]) -> (Option<f64>, Option<f64>) {
    let d: Vec<f64> = reference.iter().zip(candidate).map(|(r, c)| r - c).collect();
    let rel = |num: f64, den: f64| (den > 0.0).then(|| num / den * 100.0);
    (
        rel(ops.l2_norm(&d), ops.l2_norm(reference)),
        rel(ops.energy_norm(&d), ops.energy_norm(reference)),
    )
}

/// Rows indexed by `T^n`, columns `Rel^EW, Rel^0, …, Rel^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub norm: ErrorNorm,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl ErrorTable {
    /// Number of parareal columns `K + 1`.
    pub fn iterations(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn header(&self) -> String {
        let mut h = String::from("t,rel_ew");
        for k in 0..self.iterations() {
            h.push_str(&format!(",rel_{k}"));
        }
        h
    }

    pub fn ew(&self, n: usize) -> Option<f64> {
        self.rows[n][0]
    }

    pub fn rel(&self, n: usize, k: usize) -> Option<f64> {
        self.rows[n][k + 1]
    }

    /// Values print in shortest round-trip form; missing entries as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            s.push_str(&format!("{t:?}"));
            for v in row {
                match v {
                    Some(v) => s.push_str(&format!(",{v:?}")),
                    None => s.push_str(",undefined"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(norm: ErrorNorm, text: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            what: "error table".into(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err("empty table".into()))?;
        let width = header.split(',').count();
        if width < 2 || !header.starts_with("t,rel_ew") {
            return Err(parse_err(format!("bad header {header:?}")));
        }
        let mut table = ErrorTable {
            norm,
            times: Vec::new(),
            rows: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(parse_err(format!("row {} has {} fields, expected {width}", i + 1, fields.len())));
            }
            let num = |f: &str| f.parse::<f64>().map_err(|e| parse_err(format!("row {}: {f:?}: {e}", i + 1)));
            table.times.push(num(fields[0])?);
            table.rows.push(
                fields[1..]
                    .iter()
                    .map(|f| if *f == "undefined" { Ok(None) } else { num(f).map(Some) })
                    .collect::<Result<_>>()?,
            );
        }
        Ok(table)
    }
}

/// Builds the `L²` and energy tables from fine-dof trajectories at the coarse
/// times `1..=M_Δ`. `reference[n]`, `sequential[n]` and `iterates[k][n]` all
/// refer to `T^n`.
pub fn error_tables(
    ops: &FineOperators,
    times: &[f64],
    reference: &[Vec<f64>],
    sequential: &[Vec<f64>],
    iterates: &[Vec<Vec<f64>>],
) -> [ErrorTable; 2] {
    let mut l2 = ErrorTable {
        norm: ErrorNorm::L2,
        times: Vec::new(),
        rows: Vec::new(),
    };
    let mut energy = ErrorTable {
        norm: ErrorNorm::Energy,
        ..l2.clone()
    };
    for n in 1..times.len() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for candidate in std::iter::once(&sequential[n]).chain(iterates.iter().map(|it| &it[n])) {
            let (x, y) = relative_errors(ops, &reference[n], candidate);
            a.push(x);
            b.push(y);
        }
        l2.times.push(times[n]);
        energy.times.push(times[n]);
        l2.rows.push(a);
        energy.rows.push(b);
    }
    [l2, energy]
}

/// Everything computed by one experiment, before any file is written.
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub space: MultiscaleSpace,
    pub time_grid: TimeGrid,
    pub reference: Trajectory,
    pub sequential: Trajectory,
    pub parareal: PararealRun,
    pub tables: [ErrorTable; 2],
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub space_ms: f64,
    pub reference_ms: f64,
    pub sequential_ms: f64,
    pub parareal_ms: f64,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    *slot = t.elapsed().as_secs_f64() * 1e3;
    out
}

/// Runs every stage in memory.
pub fn compute_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let mut stages = Stages::default();
    compute_stages(cfg, &mut stages)
}

#[derive(Default)]
struct Stages {
    completed: Vec<&'static str>,
    timings: StageTimings,
}

fn compute_stages(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<ExperimentResults> {
    cfg.validate()?;
    let time_grid = cfg.time_grid()?;
    let scheme = cfg.scheme_config();
    let data = cfg.problem();
    let grid = Arc::new(TwoLevelGrid::new(cfg.coarse_cells, cfg.refinement)?);
    data.check_compatibility(&grid)?;
    let kappa = Arc::new(cfg.coefficient.build(&grid)?);
    let ops = Arc::new(FineOperators::new(grid, kappa)?);

    let space = timed(&mut stages.timings.space_ms, || assemble_multiscale_space(ops.clone(), cfg.level))?;
    stages.completed.push("space");
    let reference = timed(&mut stages.timings.reference_ms, || {
        let sys = FineSystem::new(ops.clone());
        fine_reference_solve(&sys, &data, cfg.reference_step, cfg.reference_stride()?, &SchemeConfig::backward_euler())
    })?;
    stages.completed.push("reference");
    let sequential = timed(&mut stages.timings.sequential_ms, || {
        multiscale_sequential_solve(&space, &data, &time_grid, &scheme)
    })?;
    stages.completed.push("sequential");
    let parareal = timed(&mut stages.timings.parareal_ms, || {
        let u0 = space.project_initial(&data)?;
        run_parareal(&space, &data, &time_grid, &scheme, &cfg.parareal()?, &u0)
    })?;
    stages.completed.push("parareal");

    let times: Vec<f64> = (0..=time_grid.coarse_steps).map(|n| time_grid.coarse_time(n)).collect();
    let seq_fine: Vec<Vec<f64>> = sequential.states.iter().map(|c| space.reconstruct(c)).collect();
    let shown = parareal.iterates.len().min(cfg.table_iterations + 1);
    let it_fine: Vec<Vec<Vec<f64>>> = parareal.iterates[..shown]
        .iter()
        .map(|traj| traj.iter().map(|c| space.reconstruct(c)).collect())
        .collect();
    let tables = error_tables(&ops, &times, &reference.states, &seq_fine, &it_fine);
    stages.completed.push("tables");
    Ok(ExperimentResults {
        config: cfg.clone(),
        space,
        time_grid,
        reference,
        sequential,
        parareal,
        tables,
        timings: stages.timings,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    status: &'a str,
    error: Option<String>,
    completed_stages: &'a [&'static str],
    timings: StageTimings,
    time_grid: Option<TimeGrid>,
    space: Option<SpaceSummary>,
    parareal: Option<&'a PararealReport>,
    stopping_error: &'static str,
    undefined_entries: Vec<String>,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SpaceSummary {
    fine_dofs: usize,
    dimension: usize,
    dropped_columns: usize,
    skipped_source_functions: usize,
    contrast: f64,
}

/// Writes error tables, convergence history, snapshots and `manifest.json`
/// into `out`. The manifest is written even when a stage fails.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResults> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut stages = Stages::default();
    let computed = compute_stages(cfg, &mut stages);
    let mut files = Vec::new();
    let written = match &computed {
        Ok(res) => write_outputs(res, out, &mut files),
        Err(_) => Ok(()),
    };
    let failure = computed.as_ref().err().map(|e| e.to_string()).or_else(|| written.as_ref().err().map(|e| e.to_string()));
    let res = computed.as_ref().ok();
    let manifest = Manifest {
        config: cfg,
        status: if failure.is_none() { "ok" } else { "failed" },
        error: failure,
        completed_stages: &stages.completed,
        timings: stages.timings,
        time_grid: res.map(|r| r.time_grid),
        space: res.map(|r| SpaceSummary {
            fine_dofs: r.space.grid().num_dofs(),
            dimension: r.space.dim(),
            dropped_columns: r.space.dropped().len(),
            skipped_source_functions: r.space.skipped_sources().len(),
            contrast: r.space.fine().kappa.contrast(),
        }),
        parareal: res.map(|r| &r.parareal.report),
        stopping_error: "mean over coarse levels of the norm of multiscale coefficient differences",
        undefined_entries: res.map(undefined_entries).unwrap_or_default(),
        files,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    written?;
    computed
}

fn undefined_entries(res: &ExperimentResults) -> Vec<String> {
    let mut out = Vec::new();
    for table in &res.tables {
        for (t, row) in table.times.iter().zip(&table.rows) {
            for (c, v) in row.iter().enumerate() {
                if v.is_none() {
                    let col = if c == 0 { "rel_ew".to_string() } else { format!("rel_{}", c - 1) };
                    out.push(format!("{:?} t={t:?} {col}", table.norm));
                }
            }
        }
    }
    out
}

fn write_file(out: &Path, name: String, text: &str, files: &mut Vec<String>) -> Result<()> {
    let path = out.join(&name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(name);
    Ok(())
}

fn write_outputs(res: &ExperimentResults, out: &Path, files: &mut Vec<String>) -> Result<()> {
    for table in &res.tables {
        write_file(out, format!("{}.csv", table.norm.file_stem()), &table.to_csv(), files)?;
    }
    write_file(out, "convergence.csv".into(), &res.parareal.report.convergence_csv(), files)?;
    let snaps = out.join("snapshots");
    std::fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
    let grid = res.space.grid();
    let shown = res.parareal.iterates.len().min(res.config.table_iterations + 1);
    for n in res.config.snapshot_indices()? {
        let t = res.time_grid.coarse_time(n);
        let mut emit = |label: String, dofs: &[f64]| -> Result<()> {
            let name = format!("snapshots/{label}_t{t}.txt");
            write_snapshot(grid, dofs, &out.join(&name))?;
            files.push(name);
            Ok(())
        };
        emit("reference".into(), &res.reference.states[n])?;
        emit("multiscale".into(), &res.space.reconstruct(&res.sequential.states[n]))?;
        for (k, traj) in res.parareal.iterates[..shown].iter().enumerate() {
            emit(format!("parareal_k{k}"), &res.space.reconstruct(&traj[n]))?;
        }
    }
    Ok(())
}

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wemp::coeff::CoefficientField;
use wemp::experiment::{
    relative_errors, run_experiment, CoefficientSource, ErrorNorm, ErrorTable, ExperimentConfig, Preset,
};
use wemp::fem::FineOperators;
use wemp::grid::TwoLevelGrid;
use wemp::time::Scheme;

fn small(scheme: Scheme) -> ExperimentConfig {
    let mut c = Preset::Exp1.config();
    c.name = "small".into();
    c.coarse_cells = 4;
    c.refinement = 4;
    c.level = 1;
    c.final_time = 0.2;
    c.coarse_step = 0.05;
    c.fine_step = 5e-3;
    c.reference_step = 1e-3;
    c.scheme = scheme;
    c.startup_steps = 3;
    c.tolerance = 1e-300;
    c.snapshot_times = vec![0.1, 0.2];
    c
}

/// Closed-form Q1 element matrices, assembled densely on the interior nodes.
fn dense_operators(grid: &TwoLevelGrid, kappa: &CoefficientField) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = grid.fine_size();
    let mass = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
    let stiff = [[4.0, -1.0, -2.0, -1.0], [-1.0, 4.0, -1.0, -2.0], [-2.0, -1.0, 4.0, -1.0], [-1.0, -2.0, -1.0, 4.0]];
    let n = grid.num_dofs();
    let (mut m, mut a) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
    for j in 0..grid.fine_cells() {
        for i in 0..grid.fine_cells() {
            let nodes = grid.cell_nodes(i, j);
            let k = kappa.value(grid.cell_index(i, j));
            for p in 0..4 {
                for q in 0..4 {
                    if let (Some(r), Some(c)) = (grid.dof(nodes[p]), grid.dof(nodes[q])) {
                        m[(r, c)] += h * h / 36.0 * mass[p][q];
                        a[(r, c)] += k / 6.0 * stiff[p][q];
                    }
                }
            }
        }
    }
    (m, a)
}

#[test]
fn relative_errors_match_longhand_norms() {
    let g = Arc::new(TwoLevelGrid::new(2, 2).unwrap());
    let kappa = CoefficientField::from_values(4, (0..16).map(|c| 1.0 + c as f64).collect()).unwrap();
    let ops = FineOperators::new(g.clone(), Arc::new(kappa.clone())).unwrap();
    let (m, a) = dense_operators(&g, &kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r: Vec<f64> = (0..g.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..g.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (rv, dv) = (DVector::from_vec(r.clone()), DVector::from_vec(c.clone()) - DVector::from_vec(r.clone()));
    let longhand = |op: &DMatrix<f64>| (dv.dot(&(op * &dv)) / rv.dot(&(op * &rv))).sqrt() * 100.0;
    let (l2, energy) = relative_errors(&ops, &r, &c);
    assert!((l2.unwrap() - longhand(&m)).abs() <= 1e-12 * longhand(&m));
    assert!((energy.unwrap() - longhand(&a)).abs() <= 1e-12 * longhand(&a));

    assert_eq!(relative_errors(&ops, &r, &r), (Some(0.0), Some(0.0)));
    let scaled: Vec<f64> = r.iter().map(|v| 1.01 * v).collect();
    let (l2, energy) = relative_errors(&ops, &r, &scaled);
    assert!((l2.unwrap() - 1.0).abs() <= 1e-8 && (energy.unwrap() - 1.0).abs() <= 1e-8);
    let zero = vec![0.0; g.num_dofs()];
    assert_eq!(relative_errors(&ops, &zero, &r), (None, None));
}

#[test]
fn experiment_outputs_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Scheme::CrankNicolson);
    let res = run_experiment(&cfg, dir.path()).unwrap();
    let m = res.time_grid.coarse_steps;
    for table in &res.tables {
        assert_eq!(table.times.len(), m);
        assert_eq!(table.iterations(), cfg.table_iterations + 1);
        let path = dir.path().join(format!("{}.csv", table.norm.file_stem()));
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(&ErrorTable::from_csv(table.norm, &text).unwrap(), table);
        for n in 0..m {
            let ew = table.ew(n).unwrap();
            assert!(ew >= 0.0);
            // Level T^{n+1} is exact once k ≥ n + 1.
            for k in (n + 1)..=table.iterations() - 1 {
                let rel = table.rel(n, k).unwrap();
                assert!((rel - ew).abs() <= 1e-6, "{:?} n={} k={k}: {rel} vs {ew}", table.norm, n + 1);
            }
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["name"], "small");
    let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(conv.starts_with("k,err,wall_coarse_ms,wall_fine_ms\n"));
    for name in ["reference_t0.1.txt", "multiscale_t0.2.txt", "parareal_k0_t0.1.txt", "parareal_k4_t0.2.txt"] {
        let text = std::fs::read_to_string(dir.path().join("snapshots").join(name)).unwrap();
        assert_eq!(text.lines().count(), 17, "{name}");
    }

    let again = tempfile::tempdir().unwrap();
    run_experiment(&cfg, again.path()).unwrap();
    for stem in ["errors_l2.csv", "errors_energy.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join(stem)).unwrap(),
            std::fs::read(again.path().join(stem)).unwrap()
        );
    }
}

#[test]
fn huge_tolerance_gives_only_the_coarse_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Scheme::BackwardEuler);
    cfg.coefficient = CoefficientSource::Homogeneous;
    cfg.tolerance = 1e9;
    let res = run_experiment(&cfg, dir.path()).unwrap();
    for table in &res.tables {
        assert_eq!(table.header(), "t,rel_ew,rel_0");
    }
    assert!(res.parareal.report.iterations.is_empty());
}

#[test]
fn failed_stage_is_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Scheme::BackwardEuler);
    cfg.coefficient = CoefficientSource::File {
        path: dir.path().join("missing.txt"),
    };
    assert!(run_experiment(&cfg, dir.path()).is_err());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].as_str().unwrap().contains("missing.txt"));
}

#[test]
fn config_files_resolve_coefficient_paths() {
    let dir = tempfile::tempdir().unwrap();
    let g = TwoLevelGrid::new(4, 4).unwrap();
    let field = CoefficientField::from_values(16, (0..256).map(|c| if c % 7 == 0 { 1e3 } else { 1.0 }).collect())
        .unwrap();
    field.write_text(&dir.path().join("kappa.txt")).unwrap();
    let mut cfg = small(Scheme::BackwardEuler);
    cfg.coefficient = CoefficientSource::File { path: "kappa.txt".into() };
    std::fs::write(dir.path().join("cfg.json"), cfg.to_json().unwrap()).unwrap();
    let loaded = ExperimentConfig::load(&dir.path().join("cfg.json")).unwrap();
    assert_eq!(loaded.coefficient.build(&g).unwrap(), field);
    assert!(ExperimentConfig::from_json("{\"name\": 1}").is_err());
    assert_eq!(ErrorNorm::Energy.file_stem(), "errors_energy");
}

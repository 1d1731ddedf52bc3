use std::path::{Path, PathBuf};

use treg::harness::config::{ExperimentKind, RunConfig};
use treg::harness::experiments::{self, Aggregate};
use treg::harness::{io, Workspace};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_fixtures_match_their_generators() {
    for (name, bytes) in treg::fixtures::shipped_files().unwrap() {
        let shipped = std::fs::read(root().join("fixtures").join(name)).unwrap();
        assert!(shipped == bytes, "fixtures/{name} is stale; rerun the generate_fixtures example");
    }
    let notes = std::fs::read_to_string(root().join("fixtures/FIXTURES.md")).unwrap();
    for (name, _) in treg::fixtures::shipped_files().unwrap() {
        assert!(notes.contains(name), "FIXTURES.md does not describe {name}");
    }
}

#[test]
fn every_shipped_config_builds() {
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap();
        let ws = Workspace::build(cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(ws.truth.is_some());
        assert_eq!(ws.measurement.y.len(), ws.op.out_dim());
    }
}

#[test]
fn report_manifest_files_exist_and_roundtrip() {
    let mut cfg = RunConfig::load(&root().join("configs/convergence.cfg")).unwrap();
    cfg.experiment.restarts = 2;
    cfg.solver.nfe = 40;
    let ws = Workspace::build(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = experiments::run_experiment(ExperimentKind::Convergence, &ws, dir.path()).unwrap();
    assert!(matches!(report.aggregate, Aggregate::Convergence(_)));
    assert!(report.restarts.iter().all(|r| r.error.is_none()));
    for name in &report.manifest {
        let p = dir.path().join(name);
        assert!(p.exists(), "{name}");
        let ext = Path::new(name).extension().unwrap().to_str().unwrap();
        match ext {
            "pgm" => assert_eq!(io::read_pgm(&p).unwrap().0.len(), 1024),
            "f64" => assert_eq!(io::read_raw(&p).unwrap().data.len(), 1024),
            "csv" if name.starts_with("trace_mean") => {
                let text = std::fs::read_to_string(&p).unwrap();
                assert_eq!(text.lines().count(), 41);
                for line in text.lines().skip(1) {
                    let cols: Vec<f64> = line.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
                    assert!(cols[1] >= 0.0 && cols[3] >= 0.0 && cols[5] >= 0.0);
                }
            }
            "csv" => {
                let trace = io::read_trace(&p).unwrap();
                assert_eq!(trace.records.len(), 40);
                let last = trace.records.last().unwrap();
                let raw = io::read_raw(&dir.path().join(name.replace("trace_", "raw_").replace(".csv", ".f64"))).unwrap();
                assert!(last.data_consistency.is_finite() && raw.data.iter().all(|v| v.is_finite()));
            }
            other => panic!("unexpected file type {other}"),
        }
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "convergence");
}

#[test]
fn final_reconstruction_fits_no_worse_than_the_last_pivot() {
    let cfg = RunConfig::load(&root().join("configs/deblur.cfg")).unwrap();
    let ws = Workspace::build(cfg).unwrap();
    let solver = treg::sampler::SolverConfig { nfe: 20, ..ws.config.solver.clone() };
    let out = treg::sampler::run(&solver, &ws.problem(), &ws.measurement, Some("horizontal")).unwrap();
    let last = out.trace.records.last().unwrap();
    assert!(last.data_consistency.is_finite());
    let n = ws.measurement.y.len() as f64;
    let recon_mse = treg::harness::metrics::y_mse(&ws.op, &out.x_final, &ws.measurement.y).unwrap();
    // the last step ends at abar = 1, where the EMA keeps only the consistent solution
    assert!(recon_mse <= last.data_consistency / n * (1.0 + 1e-9));
}

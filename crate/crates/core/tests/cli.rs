use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn treg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treg")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = treg(&["solve", "--config", "/definitely/missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing.cfg"));
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = treg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "solver.nfe = lots\n").unwrap();
    assert_eq!(treg(&["show-config", "--config", p.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&p, format!("prior.path = {}\nexperiment.concept = nope\ntruth.concept = nope\n",
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ambiguity_prior.json").display())).unwrap();
    assert_eq!(treg(&["solve", "--config", p.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(treg(&["experiment", "--config", &config("deblur.cfg")]).status.code(), Some(2));
}

#[test]
fn show_config_prints_resolved_defaults() {
    let out = treg(&["show-config", "--seed", "5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in ["seed = 5", "solver.nfe = 200", "solver.gamma_mod = 3", "solver.gamma_tmax = 850", "solver.cg.lambda = 0.0001"] {
        assert!(text.lines().any(|l| l == line), "missing `{line}`");
    }
}

#[test]
fn validate_passes_on_the_shipped_fixture() {
    let out = treg(&["validate", "--config", &config("deblur.cfg")]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("cg_default_reduction") && !text.contains("FAIL"));
}

#[test]
fn solve_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> PathBuf {
        let out = dir.path().join(name);
        let o = treg(&["solve", "--config", &config("deblur.cfg"), "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["raw_solve.f64", "recon_solve.pgm", "report.json", "trace_solve.csv"]);
    let c = dir.path().join("c");
    treg(&["solve", "--config", &config("deblur.cfg"), "--seed", "8", "--out", c.to_str().unwrap()]);
    assert_ne!(files(&c), fa);
}

use std::path::Path;
use std::process::{Command, Output};

use levylab::config::{load_document, validate, Experiment};
use levylab_core::experiments::threshold;

const ALL: [Experiment; 8] = [
    Experiment::Sample,
    Experiment::Simulate,
    Experiment::Density,
    Experiment::Peano,
    Experiment::ThresholdSweep,
    Experiment::Krylov,
    Experiment::Scaling,
    Experiment::FlowDiagnostics,
];

fn levylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levylab"))
        .args(args)
        .env_remove("LEVYLAB_WORKERS")
        .output()
        .unwrap()
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let doc = load_document(Some(&path), &[]).unwrap();
        let name = doc["experiment"].as_str().unwrap().to_string();
        let experiment = ALL.into_iter().find(|e| e.name() == name).unwrap();
        validate(doc, experiment).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= ALL.len());
}

#[test]
fn missing_alpha_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for (experiment, set) in [
        ("peano", "peano.beta=0.3"),
        ("krylov", "krylov.paths=10"),
        ("density", "density.paths=10"),
        ("scaling", "scaling.paths=10"),
        ("flow-diagnostics", "flow.draws=1"),
        ("simulate", "simulation.paths=10"),
    ] {
        let out = levylab(&[experiment, "--out", out_dir, "--set", set]);
        assert_eq!(out.status.code(), Some(1), "{experiment}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("alpha"), "{experiment}: {err}");
    }
}

#[test]
fn unknown_keys_and_foreign_sections_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = levylab(&["scaling", "--out", out_dir, "--set", "scaling.alpha=1.5", "--set", "scaling.pathz=10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pathz"));
    let out = levylab(&["scaling", "--out", out_dir, "--set", "scaling.alpha=1.5", "--set", "peano.alpha=1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("peano"));
    let out = levylab(&["sample", "--out", out_dir, "--set", "experiment=peano"]);
    assert_eq!(out.status.code(), Some(1));
    let out = levylab(&["sample", "--out", out_dir, "--workers", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threshold_sweep_csv_matches_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    let out = levylab(&["threshold-sweep", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("threshold-sweep-thresholds.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (a, i, j, t) = (col("alpha"), col("i"), col("j"), col("direct"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let alpha: f64 = f[a].parse().unwrap();
        let (li, lj): (usize, usize) = (f[i].parse().unwrap(), f[j].parse().unwrap());
        let value: f64 = f[t].parse().unwrap();
        // Independent closed form of the threshold.
        let expected = (1.0 + alpha * (li as f64 - 2.0)) / (1.0 + alpha * (lj as f64 - 1.0));
        assert!((value - expected).abs() < 1e-14, "{line}");
        if let Ok(direct) = threshold(alpha, li, lj) {
            assert!((value - direct).abs() < 1e-15, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 250);
}

#[test]
fn seed_flag_overrides_the_file_and_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "seed = 3\n[noise]\nalpha = 1.5\n[simulation]\npaths = 20\nrecord_stride = 100\n").unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = levylab(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("ensemble.csv")).unwrap()
    };
    let file_seed = run("a", &[]);
    assert_eq!(file_seed, run("b", &["--seed", "3"]));
    assert_ne!(file_seed, run("c", &["--seed", "4"]));
}

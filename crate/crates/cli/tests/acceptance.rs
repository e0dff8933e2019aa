//! Acceptance suite: every criterion runs at its full configuration and prints one line.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use levylab_core::experiments::{
    density_experiment, flow_diagnostics, krylov_diagnostic, peano_experiment, sample_experiment, scaling_experiment,
    threshold, threshold_sweep, DensityConfig, FlowDiagnosticsConfig, KrylovConfig, PeanoConfig, SampleConfig,
    ScalingConfig, ThresholdSweepConfig,
};
use levylab_core::report::{ExperimentReport, Status};

const SEED: u64 = 7;

struct Verdict {
    id: usize,
    title: &'static str,
    ok: bool,
    detail: String,
}

/// Written past the test harness capture so the lines land in the test log.
fn announce(v: &Verdict) {
    let line = format!(
        "acceptance {:>2} [{}] {}: {}\n",
        v.id,
        if v.ok { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

/// Every named claim exists and passes; returns the failures.
fn failing(report: &ExperimentReport, names: &[String]) -> Vec<String> {
    names
        .iter()
        .filter(|n| report.find_claim(n).map(|c| c.status) != Some(Status::Pass))
        .cloned()
        .collect()
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn describe(fails: &[String], elapsed: Duration, limit_secs: u64) -> String {
    let runtime = format!("{:.1}s of {limit_secs}s", elapsed.as_secs_f64());
    if fails.is_empty() {
        format!("all claims pass, {runtime}")
    } else {
        format!("failing {fails:?}, {runtime}")
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn noise_criteria() -> [Verdict; 2] {
    let cfg = SampleConfig::default();
    assert_eq!(cfg.alphas, vec![1.2, 1.5, 1.8]);
    assert_eq!((cfg.draws, cfg.xi_points, cfg.ks_draws), (1_000_000, 20, 100_000));
    let (report, elapsed) = timed(|| sample_experiment(&cfg, SEED).unwrap());
    let names: Vec<String> = ["cf", "hill"]
        .iter()
        .flat_map(|kind| ["1.2", "1.5", "1.8"].map(|a| format!("{kind}-alpha-{a}")))
        .collect();
    let noise = failing(&report, &names);
    let ks = failing(&report, &["q-reduction-alpha-1.5".into()]);
    let ks_p = report.find_claim("q-reduction-alpha-1.5").map_or(f64::NAN, |c| c.estimate);
    [
        Verdict {
            id: 1,
            title: "noise characteristic function and tail index",
            ok: noise.is_empty() && within(elapsed, 60),
            detail: describe(&noise, elapsed, 60),
        },
        Verdict {
            id: 2,
            title: "Q-family reduction two-sample KS",
            ok: ks.is_empty() && within(elapsed, 60),
            detail: format!("p = {ks_p:.4}, {}", describe(&ks, elapsed, 60)),
        },
    ]
}

fn scaling_criterion() -> Verdict {
    let cfg = ScalingConfig::new(1.5);
    assert_eq!((cfg.levels, cfg.paths, cfg.moment, cfg.tolerance), (3, 100_000, 0.5, 0.05));
    let (report, elapsed) = timed(|| scaling_experiment(&cfg, SEED).unwrap());
    let fails = failing(&report, &(1..=3).map(|l| format!("exponent-level-{l}")).collect::<Vec<_>>());
    Verdict {
        id: 3,
        title: "iterated-integral time scaling",
        ok: fails.is_empty() && within(elapsed, 120),
        detail: describe(&fails, elapsed, 120),
    }
}

fn density_criteria() -> [Verdict; 2] {
    let cfg = DensityConfig::new(1.5);
    assert_eq!((cfg.paths, cfg.bins, cfg.chi_square_level), (100_000, 20, 0.01));
    assert_eq!((cfg.mass_tolerance, cfg.peak_tolerance, cfg.slope_tolerance), (1e-4, 1e-4, 0.05));
    let (report, elapsed) = timed(|| density_experiment(&cfg, SEED).unwrap());
    let inversion = failing(
        &report,
        &["cauchy-peak", "normalisation", "histogram-axis-1", "histogram-axis-2"].map(String::from),
    );
    let slopes = failing(
        &report,
        &[(1, 1), (1, 2), (2, 1), (2, 2)]
            .map(|(k, l)| format!("derivative-slope-k{k}-level{l}"))
            .to_vec(),
    );
    [
        Verdict {
            id: 4,
            title: "proxy density inversion",
            ok: inversion.is_empty() && within(elapsed, 180),
            detail: describe(&inversion, elapsed, 180),
        },
        Verdict {
            id: 5,
            title: "smoothing exponents of the derivative bounds",
            ok: slopes.is_empty() && within(elapsed, 180),
            detail: describe(&slopes, elapsed, 180),
        },
    ]
}

fn flow_criterion() -> Verdict {
    let cfg = FlowDiagnosticsConfig::new(1.5);
    assert_eq!(cfg.draws, 100);
    assert_eq!(cfg.tolerance_factor, 10.0);
    assert_eq!(cfg.gaps, vec![1.0, 0.1, 0.01, 0.001]);
    let (report, elapsed) = timed(|| flow_diagnostics(&cfg, SEED).unwrap());
    let mut names: Vec<String> = (1..=3).map(|k| format!("identity-{k}")).collect();
    for beta in &cfg.betas {
        let b = levylab_core::report::fmt_f64(*beta);
        names.push(format!("gap-bounded-beta-{b}"));
        names.push(format!("det-floor-beta-{b}"));
    }
    let fails = failing(&report, &names);
    Verdict {
        id: 6,
        title: "flow identities and mollified-flow controls",
        ok: fails.is_empty() && within(elapsed, 120),
        detail: describe(&fails, elapsed, 120),
    }
}

fn threshold_criterion() -> Verdict {
    let cfg = ThresholdSweepConfig::default();
    let (report, elapsed) = timed(|| threshold_sweep(&cfg, SEED).unwrap());
    let rows = report.table("thresholds").map_or(0, |t| t.rows.len());
    let mut fails = failing(&report, &["forms-agree", "diffusive-limit"].map(String::from));
    let limit = threshold(2.0, 2, 2).unwrap();
    if rows != 250 {
        fails.push(format!("grid has {rows} rows"));
    }
    if (limit - 1.0 / 3.0).abs() > 1e-15 {
        fails.push(format!("alpha = 2 limit {limit}"));
    }
    Verdict {
        id: 7,
        title: "threshold arithmetic",
        ok: fails.is_empty() && within(elapsed, 5),
        detail: format!("{rows} grid points, {}", describe(&fails, elapsed, 5)),
    }
}

fn peano_criterion() -> Verdict {
    let cfg = PeanoConfig::new(1.5, 0.3);
    assert_eq!((cfg.i, cfg.j, cfg.paths), (2, 2, 10_000));
    assert_eq!(cfg.starts, vec![10.0, 100.0, 1000.0, 10000.0]);
    assert_eq!(cfg.confidence, 0.99);
    let (report, elapsed) = timed(|| peano_experiment(&cfg, SEED).unwrap());
    let mut names: Vec<String> = cfg
        .starts
        .iter()
        .map(|m| format!("rho-certified-m{}", levylab_core::report::fmt_f64(*m)))
        .collect();
    names.extend(["start-uniform-rho", "rho-non-decreasing", "rho-stability", "sign-split"].map(String::from));
    let fails = failing(&report, &names);
    Verdict {
        id: 8,
        title: "Peano non-uniqueness signature",
        ok: fails.is_empty() && within(elapsed, 300),
        detail: describe(&fails, elapsed, 300),
    }
}

fn krylov_criterion() -> Verdict {
    let cfg = KrylovConfig::new(1.5);
    assert_eq!((cfg.pair.p, cfg.pair.q, cfg.paths), (10.0, 14.0, 100_000));
    let (report, elapsed) = timed(|| krylov_diagnostic(&cfg, SEED).unwrap());
    let fails = failing(&report, &["constant-growth-main".into()]);
    let ratio = report.find_claim("constant-growth-main").map_or(f64::NAN, |c| c.estimate);
    Verdict {
        id: 9,
        title: "Krylov constant across the bump family",
        ok: fails.is_empty() && within(elapsed, 300),
        detail: format!("finest/second ratio {ratio:.3}, {}", describe(&fails, elapsed, 300)),
    }
}

fn run_cli(dir: &Path, experiment: &str, workers: usize, overrides: &[&str]) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_levylab"));
    cmd.arg(experiment)
        .args(["--seed", "11", "--workers", &workers.to_string(), "--out"])
        .arg(dir);
    for o in overrides {
        cmd.args(["--set", o]);
    }
    let out = cmd.output().expect("levylab runs");
    assert!(
        out.status.code().is_some_and(|c| c != 1),
        "{experiment}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism_criterion() -> Verdict {
    let runs: [(&str, &[&str]); 5] = [
        ("sample", &["sample.draws=50000", "sample.ks_draws=20000", "sample.chunk=5000"]),
        ("simulate", &["noise.alpha=1.5", "simulation.paths=200", "simulation.record_stride=50"]),
        (
            "peano",
            &["peano.alpha=1.5", "peano.beta=0.3", "peano.paths=300", "peano.starts=[10.0, 100.0]", "peano.sign_paths=300"],
        ),
        ("density", &["density.alpha=1.5", "density.paths=3000", "density.dt=0.01"]),
        ("scaling", &["scaling.alpha=1.5", "scaling.paths=3000", "scaling.dt=0.01"]),
    ];
    let start = Instant::now();
    let mut fails = vec![];
    let mut compared = 0;
    for (experiment, overrides) in runs {
        let snaps: Vec<_> = [1, 1, 2]
            .iter()
            .map(|&w| {
                let dir = tempfile::tempdir().unwrap();
                run_cli(dir.path(), experiment, w, overrides);
                snapshot(dir.path())
            })
            .collect();
        compared += snaps[0].iter().filter(|(n, _)| n.ends_with(".csv")).count();
        if snaps[0].is_empty() || snaps[0] != snaps[1] || snaps[0] != snaps[2] {
            fails.push(experiment.to_string());
        }
    }
    Verdict {
        id: 10,
        title: "determinism across reruns and worker counts",
        ok: fails.is_empty(),
        detail: format!(
            "{compared} CSV artifacts compared over 3 runs each, differing: {fails:?}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    }
}

#[test]
fn acceptance_suite() {
    let _ = std::io::stderr().lock().write_all(b"\n");
    let mut verdicts = vec![];
    let mut record = |v: Verdict| {
        announce(&v);
        verdicts.push(v);
    };
    noise_criteria().into_iter().for_each(&mut record);
    record(scaling_criterion());
    density_criteria().into_iter().for_each(&mut record);
    record(flow_criterion());
    record(threshold_criterion());
    record(peano_criterion());
    record(krylov_criterion());
    record(determinism_criterion());
    drop(record);
    verdicts.sort_by_key(|v| v.id);
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.ok).map(|v| v.id).collect();
    assert_eq!(verdicts.len(), 10);
    assert!(failed.is_empty(), "failing acceptance criteria: {failed:?}");
}

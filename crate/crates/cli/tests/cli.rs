use std::path::Path;
use std::process::Command;

use kskdv_cli::{manifest_digests, run, ExperimentConfig, Subcommand, MANIFEST, REPORT};

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!("seed = 5\n[grid]\nn = 10\ndepth = 5\n[observability]\nsamples = 5\n[saddle]\ninequalities = 10\n{extra}");
    let mut c = ExperimentConfig::from_toml(&text).unwrap();
    c.output = dir.to_string_lossy().into_owned();
    c
}

fn csv_values(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn simulate_on_zero_data_writes_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "[initial]\nprofile = \"zero\"\n");
    let record = run(Subcommand::Simulate, &c, Path::new(".")).unwrap();
    for row in csv_values(&dir.path().join("state.csv")) {
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
    }
    for row in csv_values(&dir.path().join("energy.csv")) {
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(record.metric("energy_ratio"), Some(0.0));
}

#[test]
fn csv_numbers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "[simulate]\nsources = \"random\"\n");
    run(Subcommand::Simulate, &c, Path::new(".")).unwrap();
    for row in csv_values(&dir.path().join("state.csv")) {
        let v: f64 = row[4].parse().unwrap();
        assert_eq!(kskdv_cli::output::num(v), row[4]);
        assert_eq!(row[4].split('e').next().unwrap().trim_start_matches('-').len(), 18);
    }
}

#[test]
fn every_subcommand_is_deterministic() {
    for sub in Subcommand::ALL {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run(sub, &config(a.path(), ""), Path::new(".")).unwrap();
        let rb = run(sub, &config(b.path(), ""), Path::new(".")).unwrap();
        assert_eq!(ra.files, rb.files, "{}", sub.name());
        assert!(ra.digest_of(REPORT).is_some());
        let ma = std::fs::read_to_string(a.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest_digests(&ma), ra.files);
        let report = std::fs::read_to_string(a.path().join(REPORT)).unwrap();
        assert!(!report.contains("timing"));
    }
}

#[test]
fn seed_changes_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = config(a.path(), "");
    let mut cb = config(b.path(), "");
    cb.seed += 1;
    let ra = run(Subcommand::Simulate, &ca, Path::new(".")).unwrap();
    let rb = run(Subcommand::Simulate, &cb, Path::new(".")).unwrap();
    assert_ne!(ra.digest_of("state.csv"), rb.digest_of("state.csv"));
}

#[test]
fn stackelberg_reports_terminal_energy_per_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "[control]\nschedule = [1e-2, 1e-3]\nepsilon = 1e-3\n");
    let record = run(Subcommand::Stackelberg, &c, Path::new(".")).unwrap();
    let report = std::fs::read_to_string(dir.path().join(REPORT)).unwrap();
    assert!(report.contains("empirical C_T"));
    let sweep = csv_values(&dir.path().join("sweep.csv"));
    assert_eq!(sweep.len(), 2);
    assert!(record.metric("control_ratio").unwrap().is_finite());
}

#[test]
fn data_files_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = (0..10).map(|j| format!("{}", (j as f64 * 0.3).sin())).collect();
    std::fs::write(dir.path().join("y0.csv"), values.join(",")).unwrap();
    std::fs::write(dir.path().join("yd.csv"), "# order,level,node,index,value\n0,2,1,4,0.5\n").unwrap();
    let out = dir.path().join("out");
    let c = config(&out, "[initial]\nprofile = \"file\"\nfile = \"y0.csv\"\n[targets]\nkind = \"file\"\nfile = \"yd.csv\"\n");
    run(Subcommand::Saddle, &c, dir.path()).unwrap();
    let short = config(&out, "[initial]\nprofile = \"file\"\nfile = \"yd.csv\"\n");
    let err = run(Subcommand::Simulate, &short, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("initial.file"));
}

#[test]
fn solver_failure_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // constant targets have an infinite weighted norm next to t = T
    let c = config(dir.path(), "[targets]\nkind = \"constant\"\nvalue = 1.0\n");
    let err = run(Subcommand::Stackelberg, &c, Path::new(".")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("stage"));
    let report = std::fs::read_to_string(dir.path().join(REPORT)).unwrap();
    assert!(report.contains("FAILED"));
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert!(manifest.contains("status failed"));
}

fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kskdv")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(path("ok.toml"), "[grid]\nn = 10\ndepth = 3\n[initial]\nprofile = \"zero\"\n").unwrap();
    std::fs::write(path("bad.toml"), "[game]\ndelta2 = 0.0\n[regions]\no = [0.2, 0.7]\nd = [0.6, 0.8]\n").unwrap();
    std::fs::write(path("broken.toml"), "seed = 1\nseed = 2\n").unwrap();
    std::fs::write(path("fail.toml"), "[grid]\nn = 10\ndepth = 3\n[targets]\nkind = \"constant\"\nvalue = 1.0\n").unwrap();

    let out = path("out");
    let (code, _) = binary(&["simulate", "--config", &path("ok.toml"), "--out", &out, "--seed", "3", "--n", "12"]);
    assert_eq!(code, 0);
    let manifest = std::fs::read_to_string(dir.path().join("out").join(MANIFEST)).unwrap();
    assert!(manifest.contains("seed 3"));
    let (code, err) = binary(&["simulate", "--config", &path("bad.toml"), "--out", &out]);
    assert_eq!(code, 2);
    assert!(err.contains("game.delta2") && err.contains("regions"), "{err}");
    let (code, err) = binary(&["simulate", "--config", &path("broken.toml"), "--out", &out]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");
    let (code, _) = binary(&["simulate", "--config", &path("ok.toml"), "--out", &out, "--eps", "-1"]);
    assert_eq!(code, 2);
    let (code, err) = binary(&["stackelberg", "--config", &path("fail.toml"), "--out", &out]);
    assert_eq!(code, 3, "{err}");
}

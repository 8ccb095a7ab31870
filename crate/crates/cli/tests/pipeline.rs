//! End-to-end runs of the `dissem` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "synth.community_count=30",
    "synth.total_users=2000",
    "synth.total_population=600000",
    "synth.duration_minutes=43200",
    "synth.mean_departure_rate=0.0006",
    "synth.box_km=200",
];

fn dissem(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dissem"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("DISSEM_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = dissem(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr not empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn prepared(dir: &Path) {
    ok(dir, &with_small("synth", &[]));
    ok(dir, &["ingest"]);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    prepared(&out);
    ok(&out, &["steady-state"]);
    ok(&out, &["run", "origin=dense", "horizon=2880", "c=0.05"]);
    ok(&out, &["analyze"]);
    for f in [
        "communities.csv",
        "cdr.csv",
        "ground_truth.json",
        "nu.csv",
        "sigma.csv",
        "zeta.csv",
        "density.csv",
        "n_star.csv",
        "steady.csv",
        "timeseries.csv",
        "global.csv",
        "curve_I.dat",
        "summary.json",
        "graph.csv",
        "analysis.json",
        "manifest-synth.json",
        "manifest-ingest.json",
        "manifest-steady-state.json",
        "manifest-run.json",
        "manifest-analyze.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let nu = fs::read_to_string(out.join("nu.csv")).unwrap();
    assert!(nu.starts_with("community_id,0,1,2"), "{}", &nu[..40]);
    let m = json(&out.join("manifest-run.json"));
    assert_eq!(m["command"], "run");
    assert_eq!(m["outputs"].as_object().unwrap().len(), 4);
    assert!(m["inputs"]
        .as_object()
        .unwrap()
        .keys()
        .any(|k| k.ends_with("nu.csv")));
    let s = json(&out.join("summary.json"));
    assert!(s["summary"]["peak_time"].as_f64().unwrap() > 0.0);
    let a = json(&out.join("analysis.json"));
    assert!(a["jumps"].as_u64().unwrap() > 0);
    // nothing staged is left behind
    assert!(fs::read_dir(&out).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with('.')));
}

#[test]
fn invalid_jump_alpha_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dissem(tmp.path(), &["synth", "synth.jump_alpha=1"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"], "validation");
    assert!(e["field"].as_str().unwrap().contains("jump_alpha"), "{e}");
    assert!(!tmp.path().join("cdr.csv").exists());
}

#[test]
fn unknown_key_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dissem(tmp.path(), &["run", "horizn=10"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["field"], "horizn");
}

#[test]
fn corrupt_cdr_line_is_cited() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    ok(out, &with_small("synth", &[]));
    let cdr = out.join("cdr.csv");
    let mut lines: Vec<String> = fs::read_to_string(&cdr)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[4] = "u1,not-a-time,3".into();
    fs::write(&cdr, lines.join("\n") + "\n").unwrap();
    let o = dissem(out, &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_json(&o);
    assert_eq!(e["error"], "parse");
    assert_eq!(e["line"], 5);
    assert!(!out.join("nu.csv").exists());
}

#[test]
fn ingest_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    prepared(out);
    let names = [
        "nu.csv",
        "sigma.csv",
        "zeta.csv",
        "density.csv",
        "homes.csv",
        "manifest-ingest.json",
    ];
    let first: Vec<Vec<u8>> = names
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    ok(out, &["ingest"]);
    for (f, bytes) in names.iter().zip(first) {
        assert_eq!(fs::read(out.join(f)).unwrap(), bytes, "{f} changed");
    }
}

#[test]
fn replicas_get_derived_seeds_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    prepared(out);
    let args = [
        "run",
        "engine=stochastic",
        "replicas=8",
        "origin=dense",
        "c=0.05",
        "horizon=1440",
    ];
    let o = Command::new(env!("CARGO_BIN_EXE_dissem"))
        .args(["--out", out.to_str().unwrap(), "--seed", "900"])
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest-run.json"));
    let seeds: Vec<u64> = m["seeds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_u64().unwrap())
        .collect();
    assert_eq!(seeds, (900..908).collect::<Vec<u64>>());
    let first = fs::read(out.join("ensemble.csv")).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_dissem"))
        .args(["--out", out.to_str().unwrap(), "--seed", "900"])
        .args(args)
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(fs::read(out.join("ensemble.csv")).unwrap(), first);
}

#[test]
fn missing_output_directory_is_created() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a").join("b");
    ok(&out, &with_small("synth", &["synth.total_users=100"]));
    assert!(out.join("cdr.csv").is_file());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_dissem"))
        .args(with_small("synth", &["synth.total_users=100"]))
        .env("DISSEM_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest-synth.json").is_file());
}

#[test]
fn scenario_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let cfg = out.join("scenario.conf");
    fs::write(&cfg, "# tiny world\nsynth.community_count = 5\nsynth.total_users = 50\nsynth.total_population = 5000\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dissem"))
        .args([
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .args(["synth", "synth.total_users=60"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest-synth.json"));
    assert_eq!(m["config"]["synth"]["community_count"], 5);
    assert_eq!(m["stats"]["users"], 60);
}

#[test]
fn engines_agree_on_peak_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    prepared(out);
    // local R0 of the dense origin is about 2.7, so the outbreak unfolds over days
    let common = [
        "origin=dense",
        "c=0.0002",
        "horizon=28800",
        "sample_every=60",
    ];
    let mut det = vec!["run", "engine=deterministic"];
    det.extend(common);
    ok(out, &det);
    let t_det = json(&out.join("summary.json"))["summary"]["peak_time"]
        .as_f64()
        .unwrap();
    let mut sto = vec!["run", "engine=stochastic", "replicas=20"];
    sto.extend(common);
    ok(out, &sto);
    let t_sto = json(&out.join("summary.json"))["median_peak_time"]
        .as_f64()
        .unwrap();
    assert!(t_det > 1440.0, "deterministic peak {t_det}");
    assert!(
        (t_sto - t_det).abs() <= 0.1 * t_det,
        "stochastic {t_sto} vs deterministic {t_det}"
    );
}

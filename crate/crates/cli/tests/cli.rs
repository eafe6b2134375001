use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffsim"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Template with overrides applied line by line (`key = value` within the template).
fn config(dir: &Path, overrides: &[(&str, &str)]) -> PathBuf {
    let o = run(dir, &["init"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.join("diffsim.toml");
    let mut text = fs::read_to_string(&path).unwrap();
    for (from, to) in overrides {
        assert!(text.contains(from), "template lacks `{from}`");
        text = text.replacen(from, to, 1);
    }
    fs::write(&path, text).unwrap();
    path
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn init_refuses_to_overwrite() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["init"])), 0);
    let o = run(dir.path(), &["init"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    config(dir.path(), &[("path = \"out/tracks.csv\"", "path = \"nowhere.csv\"")]);
    let o = run(dir.path(), &["embed"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["embed", "--config", "absent.toml"])), 2);
    fs::write(dir.path().join("bad.toml"), "[model]\nm = \"three\"\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["embed", "--config", "bad.toml"])), 2);
}

#[test]
fn two_track_toy_embeds_two_rows() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("toy.csv"),
        "id,seq,lon,lat\nA,0,0,0\nA,1,1,0\nA,2,2,0\nB,0,0,1\nB,1,1,1.2\nB,2,2,1.5\n",
    )
    .unwrap();
    config(dir.path(), &[("path = \"out/tracks.csv\"", "path = \"toy.csv\"")]);
    let o = run(dir.path(), &["embed"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "embedding.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("id,d1"));
    assert!(lines[1].starts_with("A,") && lines[2].starts_with("B,"));
}

#[test]
fn full_sized_embedding_and_simulation() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        &[("# epsilon = 430.0", "epsilon = 430.0"), ("m = 3", "m = 2")],
    );
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    let o = run(dir.path(), &["embed"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path(), "embedding.csv").lines().count(), 609);

    let o = run(dir.path(), &["simulate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sim = read(dir.path(), "simulated.csv");
    assert_eq!(sim.lines().count(), 1 + 608 * 13);
}

#[test]
fn simulation_is_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    config(dir.path(), &[("n = 608", "n = 80"), ("# count = 608", "count = 1")]);
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    assert_eq!(code(&run(dir.path(), &["simulate", "--seed", "5"])), 0);
    let first = read(dir.path(), "simulated.csv");
    assert_eq!(first.lines().count(), 14);
    assert_eq!(code(&run(dir.path(), &["simulate", "--seed", "5", "--jobs", "1"])), 0);
    assert_eq!(read(dir.path(), "simulated.csv"), first);
    assert_eq!(code(&run(dir.path(), &["simulate", "--seed", "6"])), 0);
    assert_ne!(read(dir.path(), "simulated.csv"), first);

    // A larger simulated set goes back through the pipeline.
    fs::write(
        dir.path().join("diffsim.toml"),
        fs::read_to_string(dir.path().join("diffsim.toml")).unwrap().replace("count = 1", "count = 40"),
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["simulate"])), 0);
    fs::copy(dir.path().join("out/simulated.csv"), dir.path().join("again.csv")).unwrap();
    let text = fs::read_to_string(dir.path().join("diffsim.toml"))
        .unwrap()
        .replace("path = \"out/tracks.csv\"", "path = \"again.csv\"");
    fs::write(dir.path().join("diffsim.toml"), text).unwrap();
    let o = run(dir.path(), &["embed", "--out", "second"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let emb = fs::read_to_string(dir.path().join("second/embedding.csv")).unwrap();
    assert_eq!(emb.lines().count(), 41);
}

#[test]
fn validate_smoke_and_byte_identical_reruns() {
    let dir = TempDir::new().unwrap();
    config(dir.path(), &[("n = 608", "n = 60"), ("k = 1000", "k = 1")]);
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    let o = run(dir.path(), &["validate", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir.path(), &["validate", "--out", "b", "--jobs", "2"]);
    assert_eq!(code(&o), 0);
    for name in ["validation.json", "assessment.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/validation.json")).unwrap()).unwrap();
    assert_eq!(json["null_proportions"].as_array().unwrap().len(), 1);
    let assessment = fs::read_to_string(dir.path().join("a/assessment.csv")).unwrap();
    assert_eq!(assessment.lines().count(), 121);
}

#[test]
fn fail_on_reject_sets_exit_status() {
    let dir = TempDir::new().unwrap();
    // Only the longest stretch is allowed, so every simulated track is too long.
    config(
        dir.path(),
        &[
            ("n = 608", "n = 60"),
            ("k = 1000", "k = 19"),
            (
                "stretches = [0.75, 0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3, 1.35, 1.4, 1.45, 1.5]",
                "stretches = [1.5]",
            ),
        ],
    );
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    assert_eq!(code(&run(dir.path(), &["validate"])), 0);
    assert!(read(dir.path(), "validation.json").contains("\"rejected\": true"));
    assert_eq!(code(&run(dir.path(), &["validate", "--fail-on-reject"])), 1);
}

#[test]
fn coincident_embeddings_are_numerical_errors() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("id,seq,lon,lat\n");
    for i in 0..12 {
        let y = if i < 6 { 0.0 } else { 1.0 };
        for k in 0..3 {
            csv.push_str(&format!("T{i},{k},{k},{y}\n"));
        }
    }
    fs::write(dir.path().join("dup.csv"), csv).unwrap();
    config(
        dir.path(),
        &[
            ("path = \"out/tracks.csv\"", "path = \"dup.csv\""),
            ("# epsilon = 430.0", "epsilon = 1.0"),
            ("# k = 25", "k = 2"),
            ("m = 3", "m = 1"),
        ],
    );
    let o = run(dir.path(), &["fit"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cv_and_dim_reports() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        &[("n = 608", "n = 30"), ("epsilons = []", "epsilons = [40.0]"), ("steps = [1, 2, 3]", "steps = [2]"), ("sims = 100", "sims = 2"), ("candidates = [2, 3, 4]", "candidates = [2, 3]")],
    );
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    let o = run(dir.path(), &["cv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cv: serde_json::Value = serde_json::from_str(&read(dir.path(), "cv.json")).unwrap();
    assert_eq!(cv["best_epsilon"], 40.0);
    assert_eq!(cv["best_t"], 2);
    let c = &cv["candidates"][0];
    let sum: f64 = c["per_item"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(c["error"].as_f64().unwrap(), sum);

    let o = run(dir.path(), &["dim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dim: serde_json::Value = serde_json::from_str(&read(dir.path(), "dim.json")).unwrap();
    assert!([2, 3].contains(&dim["selected"].as_u64().unwrap()));
    assert_eq!(dim["candidates"].as_array().unwrap().len(), 2);
}

#[test]
fn cde_report_grids_and_field_average() {
    let dir = TempDir::new().unwrap();
    let mut sst = String::from("time,lon,lat,value\n");
    for time in [1, 2] {
        for lon in [-120, -80, -30] {
            for lat in [0, 20, 50] {
                sst.push_str(&format!("{time},{lon},{lat},{}\n", 25.0 + time as f64));
            }
        }
    }
    fs::write(dir.path().join("sst.csv"), sst).unwrap();
    config(
        dir.path(),
        &[("n = 608", "n = 200"), ("# sst = \"sst.csv\"", "sst = \"sst.csv\""), ("grid_resolution = 40", "grid_resolution = 8")],
    );
    assert_eq!(code(&run(dir.path(), &["synth"])), 0);
    let o = run(dir.path(), &["cde"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "cde.json")).unwrap();
    assert_eq!(report["hot"]["years"].as_array().unwrap().len(), 19);
    assert_eq!(report["region"]["bounds"][0][0], 2.4);
    assert_eq!(read(dir.path(), "hot_grid.csv").lines().count(), 1 + 8 * 8 * 8);
    let field = read(dir.path(), "sst_over_track.csv");
    assert_eq!(field.lines().count(), 1 + 2 * 200);
    assert!(field.lines().nth(1).unwrap().ends_with(",1,26"));
    let manifest = read(dir.path(), "cde.manifest.json");
    assert!(manifest.contains("\"sst_over_track.csv\""));
}

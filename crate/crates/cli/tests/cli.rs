//! Drives the `greenwave` binary end to end: help text, exit codes, every
//! subcommand on a small network, and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_greenwave");

fn greenwave(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

/// Runs a command that must succeed and parses its first stdout line.
fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = greenwave(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(out.stderr.is_empty(), "{args:?} wrote to stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().next().unwrap()).unwrap()
}

/// Runs a command that must fail; returns (exit code, parsed error line).
fn fails(dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = greenwave(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{args:?}: {stderr}");
    let err: Value = serde_json::from_str(stderr.trim_end()).unwrap_or_else(|e| panic!("{args:?}: {e}: {stderr}"));
    let code = out.status.code().unwrap();
    assert_eq!(err["error"]["code"], code);
    (code, err)
}

fn grid_net(dir: &Path, rows: usize, cols: usize) -> PathBuf {
    let name = format!("net{rows}x{cols}.json");
    ok(dir, &["net", "grid", "--rows", &rows.to_string(), "--cols", &cols.to_string(), "--segment-cells", "12", "--out", &name]);
    dir.join(name)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let commands: &[&[&str]] = &[
        &[],
        &["net"],
        &["net", "grid"],
        &["net", "osm-import"],
        &["net", "validate"],
        &["simulate"],
        &["gen-dataset"],
        &["train"],
        &["evaluate"],
        &["compare"],
        &["optimize"],
        &["gradcheck"],
    ];
    for c in commands {
        let mut args = c.to_vec();
        args.push("--help");
        let out = greenwave(dir.path(), &args);
        assert!(out.status.success(), "{args:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("Usage:"), "{args:?}");
        if !c.is_empty() && *c != ["net"] {
            assert!(text.contains("Exit codes:"), "{args:?} help lacks exit codes");
        }
    }
    assert!(greenwave(dir.path(), &["--version"]).status.success());
}

#[test]
fn reference_page_matches_the_binary() {
    let out = greenwave(Path::new("."), &["reference"]);
    assert!(out.status.success());
    let generated = String::from_utf8(out.stdout).unwrap();
    let page = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/cli.md");
    let committed = fs::read_to_string(&page).unwrap();
    assert!(generated == committed, "docs/cli.md is stale; regenerate with `greenwave reference > docs/cli.md`");
}

#[test]
fn grid_writes_rows_times_cols_intersections() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(dir.path(), &["net", "grid", "--rows", "3", "--cols", "7", "--out", "net.json"]);
    assert_eq!(s["intersections"], 21);
    let v = ok(dir.path(), &["net", "validate", "--net", "net.json"]);
    assert_eq!(v["intersections"], 21);
    assert_eq!(v["network_hash"], s["network_hash"]);
    assert!(dir.path().join("net.resolved.json").exists());
}

#[test]
fn osm_import_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let osm = r#"<osm>
  <node id="1" lat="0.0" lon="0.0"/>
  <node id="2" lat="0.0" lon="0.003"><tag k="highway" v="traffic_signals"/></node>
  <node id="3" lat="0.0" lon="0.006"/>
  <node id="4" lat="0.003" lon="0.003"/>
  <node id="5" lat="-0.003" lon="0.003"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="primary"/></way>
  <way id="11"><nd ref="4"/><nd ref="2"/><nd ref="5"/><tag k="highway" v="primary"/></way>
</osm>"#;
    fs::write(dir.path().join("map.osm"), osm).unwrap();
    let s = ok(dir.path(), &["net", "osm-import", "--input", "map.osm", "--out", "osm.json"]);
    assert_eq!(s["intersections"], 1);
    assert_eq!(ok(dir.path(), &["net", "validate", "--net", "osm.json"])["intersections"], 1);

    fs::write(dir.path().join("broken.osm"), "<osm><node").unwrap();
    assert_eq!(fails(dir.path(), &["net", "osm-import", "--input", "broken.osm", "--out", "x.json"]).0, 4);
}

#[test]
fn gradcheck_passes_and_reports_every_model() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["gradcheck"]);
    assert_eq!(r["pass"], true);
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4);
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["fcnn", "gcn", "gnn", "transformer"]);
}

#[test]
fn evaluate_identical_files_gives_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "row_index,prediction_s\n0,120.5\n3,99\n7,1000\n";
    fs::write(dir.path().join("p.csv"), csv).unwrap();
    fs::write(dir.path().join("t.csv"), csv).unwrap();
    let r = ok(dir.path(), &["evaluate", "--preds", "p.csv", "--targets", "t.csv", "--out", "eval"]);
    for key in ["rmse", "mape", "maxpe", "maxpe99"] {
        assert_eq!(r["metrics"][key], 0.0, "{key}");
    }
    assert_eq!(r["metrics"]["n"], 3);
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(written, r["metrics"]);
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let net = grid_net(d, 1, 2);
    let net = net.to_str().unwrap();

    let (code, err) = fails(d, &["simulate", "--no-such-flag"]);
    assert_eq!((code, err["error"]["kind"].as_str()), (2, Some("usage")));
    assert_eq!(fails(d, &["net", "grid", "--rows", "3"]).0, 2);
    assert_eq!(fails(d, &["simulate", "--net", net]).0, 2);
    assert_eq!(fails(d, &["train", "--data", "x.csv", "--model", "fcnn", "--model-config", "m.json"]).0, 2);

    let (code, err) = fails(d, &["net", "validate", "--net", "missing.json"]);
    assert_eq!((code, err["error"]["kind"].as_str()), (3, Some("io")));
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.json"));

    fs::write(d.join("garbage.json"), "{not json").unwrap();
    assert_eq!(fails(d, &["net", "validate", "--net", "garbage.json"]).0, 4);
    fs::write(d.join("bad.toml"), "sim = [").unwrap();
    assert_eq!(fails(d, &["simulate", "--config", "bad.toml", "--net", net, "--random-setting", "1"]).0, 4);
    fs::write(d.join("typo.toml"), "[sim]\nduraton_s = 5\n").unwrap();
    assert_eq!(fails(d, &["simulate", "--config", "typo.toml", "--net", net, "--random-setting", "1"]).0, 4);

    // six values for K = 2, but green 5 is below the minimum
    let (code, err) = fails(d, &["simulate", "--net", net, "--setting", "5,30,0,40,40,10"]);
    assert_eq!((code, err["error"]["kind"].as_str()), (5, Some("contract")));
    assert_eq!(fails(d, &["simulate", "--net", net, "--setting", "30,30,0"]).0, 5);
    assert_eq!(fails(d, &["gen-dataset", "--net", net, "--n", "20", "--demand", "1.5"]).0, 5);
    fs::write(d.join("missing_path.toml"), "[paths]\nnet = \"nowhere.json\"\n").unwrap();
    assert_eq!(fails(d, &["gen-dataset", "--config", "missing_path.toml"]).0, 3);
}

#[test]
fn simulate_with_config_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    grid_net(d, 2, 2);
    fs::write(
        d.join("exp.toml"),
        "[sim]\nduration_s = 200\ndemand_default = 0.2\n\n[paths]\nnet = \"net2x2.json\"\nruns_dir = \"runs\"\n",
    )
    .unwrap();
    let r = ok(d, &["simulate", "--config", "exp.toml", "--random-setting", "4", "--seed", "9", "--debug-checks", "--trace"]);
    let run = d.join(r["run_dir"].as_str().unwrap());
    assert!(run.starts_with(d.join("runs")));
    assert!(run.file_name().unwrap().to_str().unwrap().starts_with("simulate-"));
    let outcome: Value = serde_json::from_str(&fs::read_to_string(run.join("outcome.json")).unwrap()).unwrap();
    assert_eq!(outcome["total_wait_s"], r["total_wait_s"]);
    let resolved: Value = serde_json::from_str(&fs::read_to_string(run.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["sim"]["duration_s"], 200);
    assert_eq!(resolved["sim"]["rng_seed"], 9);
    let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert!(trace.lines().count() > 0);

    // a flag changes the resolved config and therefore the directory
    let other = ok(d, &["simulate", "--config", "exp.toml", "--random-setting", "4", "--seed", "10"]);
    assert_ne!(other["run_dir"], r["run_dir"]);
}

/// gen-dataset, train, evaluate, compare and optimize chained through files.
#[test]
fn pipeline_runs_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let net = grid_net(d, 1, 2);
    let net = net.to_str().unwrap();
    fs::write(
        d.join("fcnn.json"),
        r#"{"kind": "fcnn", "hidden": [16, 8], "train": {"epochs": 15, "batch_size": 32, "lr": 0.01}}"#,
    )
    .unwrap();

    let pipeline = |tag: &str, workers: &str| -> PathBuf {
        let root = d.join(tag);
        let out = |name: &str| root.join(name).to_str().unwrap().to_owned();
        let g = ok(
            d,
            &[
                "gen-dataset",
                "--net",
                net,
                "--n",
                "300",
                "--seed",
                "11",
                "--duration",
                "240",
                "--demand",
                "0.25",
                "--workers",
                workers,
                "--out",
                &out("data"),
            ],
        );
        assert_eq!(g["rows"], 300);
        let data = out("data/dataset.csv");
        let t = ok(d, &["train", "--data", &data, "--model-config", "fcnn.json", "--seed", "2", "--out", &out("fcnn")]);
        assert_eq!(t["model"], "fcnn");
        ok(d, &["train", "--data", &data, "--model", "gnn", "--net", net, "--epochs", "5", "--seed", "2", "--out", &out("gnn")]);
        let e = ok(d, &["evaluate", "--model", &out("fcnn/model"), "--data", &data, "--out", &out("eval")]);
        assert_eq!(e["metrics"], t["test"]);
        let pair = ok(d, &["evaluate", "--preds", &out("fcnn/predictions.csv"), "--targets", &data, "--out", &out("pair")]);
        assert_eq!(pair["metrics"], t["test"]);
        let c = greenwave(
            d,
            &[
                "compare",
                "--metrics",
                &format!("fcnn={}", out("fcnn/metrics.json")),
                &out("gnn/metrics.json"),
                "--baseline",
                &data,
                "--out",
                &out("cmp"),
            ],
        );
        assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
        let table = fs::read_to_string(root.join("cmp/comparison.txt")).unwrap();
        assert!(table.contains("fcnn") && table.contains("gnn") && table.contains("constant_mean"), "{table}");
        let o = ok(
            d,
            &[
                "optimize",
                "--fitness",
                "surrogate",
                "--model",
                &out("fcnn/model"),
                "--net",
                net,
                "--population",
                "10",
                "--generations",
                "4",
                "--seed",
                "3",
                "--verify-top",
                "2",
                "--sim-seeds",
                "2",
                "--duration",
                "240",
                "--demand",
                "0.25",
                "--out",
                &out("ga"),
            ],
        );
        assert!(o["median_elite_ape"].as_f64().unwrap().is_finite());
        let s = ok(
            d,
            &[
                "optimize",
                "--fitness",
                "simulator",
                "--net",
                net,
                "--population",
                "6",
                "--generations",
                "3",
                "--sim-seeds",
                "2",
                "--duration",
                "120",
                "--out",
                &out("ga_sim"),
            ],
        );
        assert!(s["best_fitness"].as_f64().unwrap() >= 0.0);
        ok(d, &["simulate", "--net", net, "--random-setting", "5", "--seed", "1", "--trace", "--out", &out("sim")]);
        root
    };

    let a = pipeline("a", "1");
    let b = pipeline("b", "3");
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for must in [
        "data/dataset.csv",
        "data/dataset.meta.json",
        "fcnn/model/params.json",
        "fcnn/model/manifest.json",
        "fcnn/metrics.json",
        "fcnn/predictions.csv",
        "ga/ga_result.json",
        "ga/curve.csv",
        "cmp/comparison.json",
    ] {
        assert!(files.contains(&PathBuf::from(must)), "missing {must}");
    }
    let mut compared = 0;
    for f in &files {
        // per-epoch wall-clock seconds are the only intended difference
        if f.file_name().unwrap().to_str().unwrap().ends_with("log.csv") {
            continue;
        }
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        // resolved configs embed the input paths, which differ by directory
        if f.file_name().unwrap() == "config.resolved.json" {
            let strip = |bytes: Vec<u8>, tag: &str| String::from_utf8(bytes).unwrap().replace(&format!("/{tag}/"), "/_/");
            assert_eq!(strip(x, "a"), strip(y, "b"), "{f:?}");
        } else {
            assert!(x == y, "{f:?} differs between reruns");
        }
        compared += 1;
    }
    assert!(compared >= 20, "{compared}");
}

#[test]
fn hashed_run_directories_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    grid_net(d, 1, 1);
    let args = ["gen-dataset", "--net", "net1x1.json", "--n", "40", "--seed", "1", "--duration", "60", "--runs-dir", "runs"];
    let first = ok(d, &args);
    let again = ok(d, &args);
    assert_eq!(first["run_dir"], again["run_dir"]);
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "4"]);
    assert_eq!(ok(d, &with_workers)["run_dir"], first["run_dir"]);
    let mut reseeded = args.to_vec();
    reseeded[6] = "2";
    assert_ne!(ok(d, &reseeded)["run_dir"], first["run_dir"]);
}

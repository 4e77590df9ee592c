use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use vitbench::output::{sha256_hex, RunManifest};
use vitbench::synthetic::{write_tree, SyntheticSpec, GROUP_REGEX};

const BIN: &str = env!("CARGO_BIN_EXE_vitbench");

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(extra: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_tree(&dir.path().join("images"), &SyntheticSpec { per_class: 4, size: 8, per_patient: 2, seed: 3 }).unwrap();
        let mut cfg = json!({
            "dataset": { "root": "images", "group_regex": GROUP_REGEX, "image_size": 8 },
            "folds": { "k": 2 },
            "model": { "image_size": 8, "patch_size": 4, "embed_dim": 8, "depth": 1, "num_heads": 2, "mlp_ratio": 1.0 },
            "train": {
                "hyper": { "batch_size": 8, "learning_rate": 0.003, "epochs": 1, "seed": 5 },
                "grid": { "batch_sizes": [8], "learning_rates": [0.003], "epoch_counts": [1] },
                "n_replications": 2,
                "experiments": [
                    { "name": "A", "batch_size": 4 },
                    { "name": "B", "batch_size": 8 },
                    { "name": "C", "batch_size": 16 },
                    { "name": "D", "learning_rate": 0.01 }
                ]
            },
            "augment_eval": { "strategies": [{ "name": "flip", "transforms": ["hflip"] }] },
            "weight_eval": { "train": false },
            "interpret": { "max_images": 2 }
        });
        merge(&mut cfg, extra);
        fs::write(dir.path().join("config.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(self.path("config.json"))
            .env_remove("VITBENCH_WORKERS")
            .output()
            .unwrap()
    }

    fn run_ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["results", "tables"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let fx = Fixture::new(json!({ "train": { "hyper": { "momentum": 0.9 } } }));
    let out = fx.run(&["grid", "--out", fx.path("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.hyper.momentum"));
    assert!(!fx.path("o").exists());
}

#[test]
fn runtime_failure_exits_1_with_run_id() {
    let fx = Fixture::new(json!({ "dataset": { "root": "nowhere" } }));
    let out = fx.run(&["prepare", "--out", fx.path("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run prepare") && err.contains("nowhere"), "{err}");
}

#[test]
fn prepare_and_weight_eval_emit_their_tables() {
    let fx = Fixture::new(json!({}));
    let o = fx.path("o");
    fx.run_ok(&["prepare", "--out", o.to_str().unwrap()]);
    fx.run_ok(&["weight-eval", "--out", o.to_str().unwrap()]);
    for f in ["manifest.json", "folds.json", "config.json", "tables/class_counts.csv", "tables/weight_eval.csv", "results/weight_eval.json"] {
        assert!(o.join(f).is_file(), "{f}");
    }
    let folds: Value = serde_json::from_slice(&fs::read(o.join("folds.json")).unwrap()).unwrap();
    assert_eq!(folds["assignment"].as_array().unwrap().len(), 28);
    // 12 normal, 16 abnormal: base weights 28/24 and 28/32
    let rows = read_csv(&o.join("tables/weight_eval.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][1..4], ["1.0×1.0", "0.88", "1.17"]);
    assert_eq!(rows[3][1..4], ["0.7×1.3", "0.61", "1.52"]);
    assert!(rows[0][4].is_empty());

    let m = RunManifest::load(&o).unwrap().unwrap();
    assert_eq!(m.commands.iter().map(|c| c.command.as_str()).collect::<Vec<_>>(), ["prepare", "weight-eval"]);
    assert!(m.orphans(&o).unwrap().is_empty());
    for (rel, entry) in &m.files {
        assert_eq!(sha256_hex(&fs::read(o.join(rel)).unwrap()), entry.sha256, "{rel}");
    }
}

#[test]
fn replicate_is_byte_identical_and_compares_all_pairs() {
    let fx = Fixture::new(json!({}));
    let (a, b) = (fx.path("a"), fx.path("b"));
    fx.run_ok(&["replicate", "--out", a.to_str().unwrap(), "--workers", "1"]);
    fx.run_ok(&["replicate", "--out", b.to_str().unwrap(), "--workers", "3"]);
    assert_eq!(snapshot(&a), snapshot(&b));
    for t in ["pairwise_accuracy", "pairwise_f1"] {
        let rows = read_csv(&a.join(format!("tables/{t}.csv")));
        let pairs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(pairs, ["A vs B", "A vs C", "A vs D", "B vs C", "B vs D", "C vs D"]);
    }
    let rep = read_csv(&a.join("tables/replicate_A.csv"));
    assert_eq!(rep.len(), 3);
    assert_eq!(rep[2][0], "mean ± std");
    assert!(rep[2][5].contains(" ± "));
    let summary = read_csv(&a.join("tables/replicate_summary.csv"));
    assert_eq!(summary.len(), 8);

    let m = RunManifest::load(&a).unwrap().unwrap();
    let seeds = &m.commands[0].seeds;
    assert!(seeds.contains_key("replicate/A/rep1/fold0") && seeds.contains_key("replicate/D/rep0/app"));
    // replicate seeds are shared across configurations
    assert_eq!(seeds["replicate/A/rep1/fold1"], seeds["replicate/C/rep1/fold1"]);

    let c = fx.path("c");
    fx.run_ok(&["replicate", "--out", c.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(snapshot(&a), snapshot(&c));
}

#[test]
fn grid_and_augment_eval_rows() {
    let fx = Fixture::new(json!({ "train": { "grid": { "batch_sizes": [16, 8], "epoch_counts": [1, 2] } } }));
    let o = fx.path("o");
    fx.run_ok(&["grid", "--out", o.to_str().unwrap()]);
    fx.run_ok(&["augment-eval", "--out", o.to_str().unwrap()]);
    let grid = read_csv(&o.join("tables/grid.csv"));
    let cells: Vec<(&str, &str, &str)> = grid.iter().map(|r| (r[0].as_str(), r[1].as_str(), r[3].as_str())).collect();
    assert_eq!(cells, [("1", "8", "1"), ("2", "8", "2"), ("3", "16", "1"), ("4", "16", "2")]);
    let aug = read_csv(&o.join("tables/augment_eval.csv"));
    assert_eq!(aug.len(), 1);
    assert_eq!(aug[0][0], "flip");
}

#[test]
fn cam_writes_overlays_sidecars_and_a_checkpoint() {
    let fx = Fixture::new(json!({}));
    let o = fx.path("o");
    fx.run_ok(&["cam", "--out", o.to_str().unwrap()]);
    let rows = read_csv(&o.join("tables/cam_focus.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let png = o.join(format!("cams/{}_cam_{}.png", r[0], r[3]));
        let side: Value = serde_json::from_slice(&fs::read(png.with_extension("json")).unwrap()).unwrap();
        assert_eq!(image::image_dimensions(&png).unwrap(), (8, 8));
        assert_eq!(side["grid"].as_array().unwrap().len(), 2);
        let (center, rest): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(center + rest == 0.0 || (center + rest - 1.0).abs() < 2e-4);
    }
    assert!(o.join("checkpoints/fold0.vitw").is_file());

    // explaining the saved checkpoint gives the same maps
    let cfg_path = fx.path("config.json");
    let mut cfg: Value = serde_json::from_slice(&fs::read(&cfg_path).unwrap()).unwrap();
    cfg["interpret"]["checkpoint"] = json!("o/checkpoints/fold0.vitw");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let p = fx.path("p");
    fx.run_ok(&["cam", "--out", p.to_str().unwrap()]);
    assert_eq!(fs::read(o.join("tables/cam_focus.csv")).unwrap(), fs::read(p.join("tables/cam_focus.csv")).unwrap());
}

#[test]
fn disabled_cam_is_a_config_error() {
    let fx = Fixture::new(json!({ "interpret": { "enabled": false } }));
    let out = fx.run(&["cam", "--out", fx.path("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_only_output_skips_tables() {
    let fx = Fixture::new(json!({ "output": { "formats": ["json"] }, "weight_eval": { "train": false } }));
    let o = fx.path("o");
    fx.run_ok(&["weight-eval", "--out", o.to_str().unwrap()]);
    assert!(o.join("results/weight_eval.json").is_file());
    assert!(!o.join("tables").exists());
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_reward-lens");

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_in(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(BIN).current_dir(dir).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = run_in(dir, args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r
}

fn schema(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validate(name: &str, v: &Value) {
    let s = schema(name);
    let compiled = jsonschema::JSONSchema::compile(&s).unwrap();
    let msgs: Vec<String> = match compiled.validate(v) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{name}: {msgs:?}");
}

/// Validate a run summary and its report against the command's schema.
fn check_summary(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    validate("run_summary", &v);
    let cmd = v["command"].as_str().unwrap().replace('-', "_");
    validate(&cmd, &v["report"]);
    v
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        ok(f.path(), &["build-toy", "--dir", "m1", "--out", "build.json"]);
        ok(f.path(), &["build-toy", "--dir", "m2", "--layers", "4", "--seed", "1"]);
        ok(f.path(), &["build-toy", "--dir", "mo", "--head", "multi_objective:4"]);
        ok(
            f.path(),
            &["build-toy", "--dir", "mp", "--vocab", "24", "--layers", "3", "--plant-token", "e", "--plant-layer", "1", "--plant-gain", "2"],
        );
        f.write("probes.jsonl", concat!(
            "{\"dimension\": \"a\", \"prompt\": \"x\", \"variant_a\": \"b c\", \"variant_b\": \"d\"}\n",
            "{\"dimension\": \"b\", \"prompt\": \"x\", \"variant_a\": \"e\", \"variant_b\": \"f g h\"}\n",
            "{\"dimension\": \"a,b\", \"prompt\": \"y\", \"variant_a\": \"i\", \"variant_b\": \"j\"}\n",
        ));
        f.write("planted.jsonl", concat!(
            "{\"prompt\": \"a\", \"preferred\": \"b e\", \"dispreferred\": \"b f\"}\n",
            "{\"prompt\": \"c d\", \"preferred\": \"g h e\", \"dispreferred\": \"g h i\"}\n",
        ));
        f
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path().join(name), text).unwrap();
    }

    fn json(&self, name: &str) -> Value {
        check_summary(&self.path().join(name))
    }
}

#[test]
fn every_command_emits_a_valid_summary() {
    let f = Fixture::new();
    let p = f.path();
    f.json("build.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["score", "--model", "m1", "--prompt", "a", "--response", "b c", "--out", "o.json"],
        vec!["lens", "--model", "m1", "--out", "o.json"],
        vec!["attribute", "--model", "m1", "--top-k", "3", "--out", "o.json"],
        vec!["patch", "--model", "m1", "--mode", "zero", "--out", "o.json"],
        vec!["divergence-patch", "--model", "m1", "--mode", "zero", "--out", "o.json"],
        vec!["hack", "--model", "m1", "--out", "o.json"],
        vec!["cascade", "--model", "m1", "--hacking-probes", "default", "--out", "o.json"],
        vec!["distortion", "--model", "m1", "--probes", "probes.jsonl", "--dimensions", "a,b,c", "--tool-count", "3", "--out", "o.json"],
        vec!["conflict", "--model", "mo", "--out", "o.json"],
        vec!["concepts", "--model", "m1", "--out", "o.json"],
        vec!["dose-response", "--model", "m1", "--concept", "verbosity", "--prompt", "a", "--response", "b c", "--out", "o.json"],
        vec!["sae-collect", "--model", "m1", "--layer", "1", "--dir", "shards", "--out", "o.json"],
        vec!["sae-train", "--shards", "shards", "--features", "16", "--k", "2", "--epochs", "2", "--save", "sae.bin", "--out", "o.json"],
        vec!["sae-analyze", "--model", "m1", "--sae", "sae.bin", "--shards", "shards", "--out", "o.json"],
        vec!["compare", "--model", "m1", "--model", "m2", "--overlap-k", "3", "--out", "o.json"],
    ];
    for args in cases {
        ok(p, &args);
        let v = f.json("o.json");
        assert_eq!(v["command"], args[0]);
        assert_eq!(v["schema"], "reward-lens/run-summary/v1");
    }
}

#[test]
fn plain_score_and_attribution_agree() {
    let f = Fixture::new();
    let p = f.path();
    let r = ok(p, &["score", "--model", "mp", "--prompt", "a", "--response", "b e"]);
    let reward: f64 = r.stdout.trim().parse().unwrap();
    ok(p, &["attribute", "--model", "mp", "--pairs", "planted.jsonl", "--out", "a.json"]);
    let v = f.json("a.json");
    let first = &v["report"]["results"][0];
    let sum: f64 = first["contributions_preferred"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    let bias = first["bias"].as_f64().unwrap();
    // the planted model has no final norm, so the projection is the reward
    assert!((sum + bias - reward).abs() < 1e-9);
    let diff = first["differential_contributions"].as_array().unwrap();
    let planted = diff[4].as_f64().unwrap();
    assert!(planted.abs() > 1e-3);
    for (i, d) in diff.iter().enumerate() {
        // weights are stored as f32, so orthogonality holds to ~1e-7
        if i != 4 {
            assert!(d.as_f64().unwrap().abs() < 1e-6 * planted.abs());
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let f = Fixture::new();
    let p = f.path();
    let cases: Vec<Vec<&str>> = vec![
        vec!["lens", "--model", "m1", "--plot-kind", "trajectory"],
        vec!["attribute", "--model", "m1", "--plot-kind", "heatmap"],
        vec!["patch", "--model", "m1", "--mode", "zero", "--plot-kind", "topk-bar"],
        vec!["dose-response", "--model", "m1", "--concept", "verbosity", "--prompt", "a", "--response", "b"],
        vec!["compare", "--model", "m1", "--model", "m2"],
    ];
    for args in cases {
        let mut outputs = Vec::new();
        for (i, threads) in ["1", "4"].iter().enumerate() {
            let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            full.extend(["--out".into(), format!("r{i}.json"), "--plot".into(), format!("r{i}.svg")]);
            let out = Command::new(BIN)
                .current_dir(p)
                .env("REWARD_LENS_THREADS", threads)
                .args(&full)
                .output()
                .unwrap();
            assert!(out.status.success(), "{full:?}: {}", String::from_utf8_lossy(&out.stderr));
            let json = std::fs::read(p.join(format!("r{i}.json"))).unwrap();
            let svg = std::fs::read(p.join(format!("r{i}.svg"))).unwrap();
            assert!(String::from_utf8(svg.clone()).unwrap().starts_with("<svg"));
            outputs.push((json, svg));
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn toy_models_are_reproducible_on_disk() {
    let f = Fixture::new();
    let p = f.path();
    ok(p, &["build-toy", "--dir", "again"]);
    for file in ["config.txt", "tensors.bin"] {
        assert_eq!(std::fs::read(p.join("m1").join(file)).unwrap(), std::fs::read(p.join("again").join(file)).unwrap());
    }
    ok(p, &["build-toy", "--dir", "other", "--seed", "5"]);
    assert_ne!(std::fs::read(p.join("m1/tensors.bin")).unwrap(), std::fs::read(p.join("other/tensors.bin")).unwrap());
}

#[test]
fn seed_and_config_land_in_the_summary() {
    let f = Fixture::new();
    let p = f.path();
    ok(p, &["--seed", "3", "lens", "--model", "m1", "--out", "a.json"]);
    ok(p, &["lens", "--model", "m1", "--out", "b.json", "--seed", "3"]);
    ok(p, &["lens", "--model", "m2", "--out", "c.json"]);
    let (a, b, c) = (f.json("a.json"), f.json("b.json"), f.json("c.json"));
    assert_eq!(a["seed"], 3);
    assert_eq!(a, b);
    assert_ne!(a["config_hash"], c["config_hash"]);
    assert_eq!(a["model"]["n_layers"], 2);
    assert_eq!(c["model"]["n_layers"], 4);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let p = f.path();
    assert_eq!(run_in(p, &["no-such-command"]).code, 2);
    assert_eq!(run_in(p, &["score", "--model", "m1"]).code, 2);
    assert_eq!(run_in(p, &["patch", "--model", "m1", "--mode", "swap"]).code, 2);
    assert_eq!(run_in(p, &["lens", "--model", "m1", "--plot", "x.svg", "--plot-kind", "pie"]).code, 2);
    assert_eq!(run_in(p, &["hack", "--model", "m1", "--plot", "x.svg"]).code, 2);
    assert_eq!(run_in(p, &["conflict", "--model", "m1"]).code, 2);

    f.write("bad.jsonl", "{\"prompt\": \"a\"}\n");
    let r = run_in(p, &["lens", "--model", "m1", "--pairs", "bad.jsonl"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    f.write("m1/config.txt", "format = something-else\n");
    assert_eq!(run_in(p, &["score", "--model", "m1", "--prompt", "a", "--response", "b"]).code, 3);

    let r = run_in(p, &["score", "--model", "missing", "--prompt", "a", "--response", "b"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("missing"));
}

#[test]
fn strict_turns_warnings_into_exit_4() {
    let f = Fixture::new();
    let p = f.path();
    // the prefix splice leaves every effect at zero, so faithfulness is undefined
    let loose = ok(p, &["patch", "--model", "mp", "--pairs", "planted.jsonl", "--out", "loose.json"]);
    assert!(loose.stderr.is_empty() || !loose.stderr.contains("strict"));
    let v = f.json("loose.json");
    assert!(!v["warnings"].as_array().unwrap().is_empty());
    let r = run_in(p, &["--strict", "patch", "--model", "mp", "--pairs", "planted.jsonl", "--out", "strict.json"]);
    assert_eq!(r.code, 4);
    assert!(p.join("strict.json").exists());

    let r = run_in(p, &["--strict", "patch", "--model", "mp", "--pairs", "planted.jsonl", "--splice", "positional", "--out", "s2.json"]);
    let v = f.json("s2.json");
    assert_eq!(r.code, i32::from(!v["warnings"].as_array().unwrap().is_empty()) * 4);
}

//! Helpers for driving the `spanfuse` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn spanfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanfuse"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch spanfuse")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = spanfuse(args, cwd);
    assert!(
        out.status.success(),
        "spanfuse {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Synth spec TOML for independent models given as `(id, accuracy)`.
pub fn spec_toml(n: usize, seed: u64, prefix: &str, models: &[(&str, f64)]) -> String {
    let mut s = format!("n_questions = {n}\nseed = {seed}\nquestion_prefix = \"{prefix}\"\n");
    for (id, acc) in models {
        s.push_str(&format!("\n[[models]]\nmodel_id = \"{id}\"\naccuracy = {acc}\npeak_mass = 0.7\n"));
    }
    s
}

/// Write `spec` to `<dir>/<name>.toml` and synthesize it into `<dir>/<name>/`.
pub fn synth(dir: &Path, name: &str, spec: &str) -> PathBuf {
    let spec_path = dir.join(format!("{name}.toml"));
    fs::write(&spec_path, spec).unwrap();
    ok(
        &["synth", "--spec", spec_path.to_str().unwrap(), "--out-dir", name],
        dir,
    );
    dir.join(name)
}

/// `--pred <file>` pairs for every model file in a synth output directory.
pub fn pred_args(pool: &Path, models: &[&str]) -> Vec<String> {
    models
        .iter()
        .flat_map(|m| ["--pred".to_string(), pool.join(format!("{m}.jsonl")).display().to_string()])
        .collect()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn read_tsv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

pub const FIVE: [&str; 5] = ["m0", "m1", "m2", "m3", "m4"];

/// Five-model test and estimation pools (disjoint question ids) in `dir`.
pub fn five_model_fixture(dir: &Path, n_test: usize, n_est: usize) -> (PathBuf, PathBuf) {
    let models: Vec<(&str, f64)> = FIVE.iter().copied().zip([0.2, 0.3, 0.35, 0.4, 0.55]).collect();
    let test = synth(dir, "test", &spec_toml(n_test, 1, "t", &models));
    let est = synth(dir, "est", &spec_toml(n_est, 2, "e", &models));
    (test, est)
}

/// One invocation of every subcommand against the five-model fixture, each
/// writing under `<dir>/<out>/<command>`.
pub fn run_every_command(dir: &Path, test: &Path, est: &Path, out: &str) {
    let s = |p: PathBuf| p.display().to_string();
    let preds = pred_args(test, &FIVE);
    let est_preds: Vec<String> = pred_args(est, &FIVE)
        .into_iter()
        .map(|a| if a == "--pred" { "--est-pred".into() } else { a })
        .collect();
    let gold = ["--gold".to_string(), s(test.join("gold.jsonl"))];
    let est_gold = ["--est-gold".to_string(), s(est.join("gold.jsonl"))];
    let run = |cmd: &str, extra: &[&str], with_est: bool| {
        let mut args: Vec<String> = vec![cmd.into()];
        args.extend(preds.iter().cloned());
        args.extend(gold.iter().cloned());
        if with_est {
            args.extend(est_preds.iter().cloned());
            args.extend(est_gold.iter().cloned());
        }
        args.extend(["--out-dir".into(), format!("{out}/{cmd}")]);
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs, dir);
    };
    run(
        "eval",
        &["--method", "mean,multiply,max,min,geomean,unequal-auto,unequal-fixed", "--per-sample"],
        true,
    );
    run("diag", &[], false);
    run("sweep", &["--sizes", "20,50"], true);
    run("stack-train", &["--epochs", "3", "--trunk", "16,8", "--branch", "8"], false);
    ok(
        &["synth", "--spec", "test.toml", "--out-dir", &format!("{out}/synth")],
        dir,
    );
}

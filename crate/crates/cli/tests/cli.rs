mod support;

use std::fs;

use support::*;
use tempfile::tempdir;

#[test]
fn eval_reports_base_models_and_methods() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 150, 10);
    let mut args = vec!["eval".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(["--gold", "test/gold.jsonl", "--method", "mean,multiply", "--out-dir", "out"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(&refs, dir.path());
    let rows = read_tsv(&dir.path().join("out/summary.tsv"));
    assert_eq!(rows.len(), 8, "header plus 7 rows");
    let methods: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["base:m0", "base:m1", "base:m2", "base:m3", "base:m4", "mean", "multiply"]);
    for r in &rows[1..] {
        let (em, f1): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((0.0..=f1).contains(&em) && f1 <= 100.0, "{r:?}");
        assert_eq!((r[1].as_str(), r[4].as_str()), ("gold", "150"));
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("multiply"));
}

#[test]
fn unequal_modes_need_an_estimation_set() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 20, 10);
    let mut args = vec!["eval".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(["--gold", "test/gold.jsonl", "--method", "unequal-auto", "--out-dir", "out"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = spanfuse(&refs, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("auto mode requires estimation set"), "{}", stderr(&out));
}

#[test]
fn exit_codes_separate_usage_and_io_failures() {
    let dir = tempdir().unwrap();
    let missing = spanfuse(&["eval", "--pred", "nope.jsonl", "--gold", "g.jsonl", "--method", "mean", "--out-dir", "o"], dir.path());
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));
    assert!(stderr(&missing).contains("nope.jsonl"));
    assert_eq!(spanfuse(&["eval", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(spanfuse(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(spanfuse(&["--help"], dir.path()).status.code(), Some(0));
    let bad_method = spanfuse(&["eval", "--pred", "a", "--gold", "g", "--method", "median", "--out-dir", "o"], dir.path());
    assert_eq!(bad_method.status.code(), Some(1));
}

#[test]
fn every_command_is_reproducible() {
    let dir = tempdir().unwrap();
    let (test, est) = five_model_fixture(dir.path(), 80, 60);
    run_every_command(dir.path(), &test, &est, "first");
    run_every_command(dir.path(), &test, &est, "second");
    let a = snapshot(&dir.path().join("first"));
    let b = snapshot(&dir.path().join("second"));
    for cmd in ["eval", "diag", "sweep", "stack-train", "synth"] {
        assert!(a.keys().any(|k| k.starts_with(cmd)), "no output from {cmd}");
    }
    assert!(a.keys().any(|k| k.starts_with("eval/per_sample")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between runs", k.display());
    }
}

#[test]
fn stacked_checkpoint_evaluates_like_any_method() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 60, 10);
    let preds = pred_args(&test, &FIVE);
    let with = |extra: &[&str]| {
        let mut a = vec![extra[0].to_string()];
        a.extend(preds.iter().cloned());
        a.extend(["--gold".into(), "test/gold.jsonl".into()]);
        a.extend(extra[1..].iter().map(|s| s.to_string()));
        a
    };
    let train = with(&["stack-train", "--epochs", "2", "--trunk", "8", "--branch", "4", "--out-dir", "st"]);
    ok(&train.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let eval = with(&["eval", "--method", "mean,stack:st/stack.json", "--out-dir", "ev"]);
    ok(&eval.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let rows = read_tsv(&dir.path().join("ev/summary.tsv"));
    assert_eq!(rows.last().unwrap()[0], "stack:st/stack.json");

    // A checkpoint for a different number of models is refused.
    let three = with(&["eval", "--method", "stack:st/stack.json", "--out-dir", "ev3"]);
    let mut three: Vec<String> = three;
    three.drain(1..5);
    let out = spanfuse(&three.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn stack_train_history_and_patience() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 60, 10);
    let mut args = vec!["stack-train".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(
        ["--gold", "test/gold.jsonl", "--epochs", "40", "--patience", "1", "--lr", "0.05", "--trunk", "8", "--branch", "4", "--out-dir", "st"]
            .map(String::from),
    );
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let rows = read_tsv(&dir.path().join("st/history.tsv"));
    assert_eq!(rows[0].join("\t"), "epoch\ttrain_loss\tval_loss\tval_exact\tbest");
    let epochs = rows.len() - 1;
    assert!((1..=40).contains(&epochs));
    assert_eq!(rows[1..].iter().filter(|r| r[4] == "1").count(), 1);
    if epochs < 40 {
        // Stopped early: the final epoch failed to improve on the best one.
        let losses: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
        let best = losses[..epochs - 1].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(losses[epochs - 1] >= best);
    }
    assert!(dir.path().join("st/stack.json").is_file());
}

#[test]
fn unwritable_checkpoint_is_an_io_error_without_partial_output() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 30, 10);
    let mut args = vec!["stack-train".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(
        ["--gold", "test/gold.jsonl", "--epochs", "1", "--trunk", "4", "--branch", "4", "--out-dir", "st", "--checkpoint", "no/such/dir/ck.json"]
            .map(String::from),
    );
    let out = spanfuse(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("no").exists());
    let st = dir.path().join("st");
    assert!(!st.exists() || snapshot(&st).is_empty(), "{:?}", snapshot(&st).keys());
}

#[test]
fn sweep_clamps_oversized_requests() {
    let dir = tempdir().unwrap();
    let (test, est) = five_model_fixture(dir.path(), 40, 50);
    let mut args = vec!["sweep".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(pred_args(&est, &FIVE).into_iter().map(|a| if a == "--pred" { "--est-pred".into() } else { a }));
    args.extend(["--gold", "test/gold.jsonl", "--est-gold", "est/gold.jsonl", "--sizes", "100", "--out-dir", "sw"].map(String::from));
    let out = ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    assert!(stderr(&out).contains("size 100 exceeds estimation source gold (50 questions); clamped to 50"), "{}", stderr(&out));
    let rows = read_tsv(&dir.path().join("sw/sweep.tsv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[1][0].as_str(), rows[1][1].as_str()), ("100", "50"));
}

#[test]
fn sweep_pools_disjoint_sources() {
    let dir = tempdir().unwrap();
    let models: Vec<(&str, f64)> = vec![("a", 0.6), ("b", 0.3)];
    let test = synth(dir.path(), "test", &spec_toml(50, 1, "t", &models));
    // Same models over two sources, written as separate prediction files per source.
    synth(dir.path(), "src1", &spec_toml(40, 2, "x", &models));
    synth(dir.path(), "src2", &spec_toml(40, 3, "y", &models));
    let mut args = vec!["sweep".to_string()];
    args.extend(pred_args(&test, &["a", "b"]));
    for src in ["src1", "src2"] {
        for m in ["a", "b"] {
            args.extend(["--est-pred".to_string(), format!("{src}/{m}.jsonl")]);
        }
        args.extend(["--est-gold".to_string(), format!("{src}/gold.jsonl")]);
    }
    args.extend(["--gold", "test/gold.jsonl", "--sizes", "10,40", "--out-dir", "sw"].map(String::from));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let rows = read_tsv(&dir.path().join("sw/sweep.tsv"));
    let n_est: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(n_est, ["20", "80"]);
    assert!(rows[1..].iter().all(|r| r[2].parse::<u32>().is_ok()));
}

#[test]
fn stationary_accuracies_give_a_flat_sweep() {
    let dir = tempdir().unwrap();
    let (test, est) = five_model_fixture(dir.path(), 1000, 2000);
    let mut args = vec!["sweep".to_string()];
    args.extend(pred_args(&test, &FIVE));
    args.extend(pred_args(&est, &FIVE).into_iter().map(|a| if a == "--pred" { "--est-pred".into() } else { a }));
    args.extend(["--gold", "test/gold.jsonl", "--est-gold", "est/gold.jsonl", "--sizes", "500,1000,2000", "--out-dir", "sw"].map(String::from));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let f1: Vec<f64> = read_tsv(&dir.path().join("sw/sweep.tsv"))[1..].iter().map(|r| r[4].parse().unwrap()).collect();
    let (lo, hi) = f1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    assert!(hi - lo <= 4.0, "{f1:?}");
}

#[test]
fn identical_models_have_unit_jaccard() {
    let dir = tempdir().unwrap();
    let spec = "n_questions = 100\nseed = 4\n\n[[models]]\nmodel_id = \"a\"\naccuracy = 0.4\npeak_mass = 0.7\ngroup = \"g\"\n\n[[models]]\nmodel_id = \"b\"\naccuracy = 0.4\npeak_mass = 0.7\ngroup = \"g\"\n";
    let pool = synth(dir.path(), "dup", spec);
    let mut args = vec!["diag".to_string()];
    args.extend(pred_args(&pool, &["a", "b"]));
    args.extend(["--gold", "dup/gold.jsonl", "--out-dir", "d"].map(String::from));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    let j = read_tsv(&dir.path().join("d/jaccard.tsv"));
    for row in &j[1..] {
        for v in &row[1..] {
            assert_eq!(v, "1.000000");
        }
    }
    let stats = fs::read_to_string(dir.path().join("d/diagnostics.tsv")).unwrap();
    assert!(stats.contains("jaccard_off_diagonal_mean\t1.000000"), "{stats}");
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempdir().unwrap();
    let (test, _) = five_model_fixture(dir.path(), 5, 5);
    let clean = spanfuse(&["validate", "test/m0.jsonl", "test/m1.jsonl", "--gold", "test/gold.jsonl"], dir.path());
    assert_eq!(clean.status.code(), Some(0), "{}", stderr(&clean));
    assert!(String::from_utf8_lossy(&clean.stdout).contains("test/m0.jsonl: 5 records, 0 errors"));

    let text = fs::read_to_string(test.join("m0.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = lines[1].replace("\"start_probs\":[", "\"start_probs\":[-1.0,");
    lines[3] = "{not json".into();
    fs::write(dir.path().join("broken.jsonl"), lines.join("\n") + "\n").unwrap();
    let bad = spanfuse(&["validate", "broken.jsonl"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let err = stderr(&bad);
    assert!(err.contains("broken.jsonl:2") && err.contains("broken.jsonl:4"), "{err}");
    assert_eq!(spanfuse(&["validate", "absent.jsonl"], dir.path()).status.code(), Some(2));
}

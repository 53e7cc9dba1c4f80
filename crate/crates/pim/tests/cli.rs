use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pim_core::dataset::generate_synthetic;
use pim_core::SynthSpec;
use serde_json::Value;

fn pim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pim"))
        .args(args)
        .env_remove("PIM_THREADS")
        .output()
        .expect("spawn pim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--k", "4", "--k-old", "2", "--dim", "4", "--samples-per-class", "20", "-o", s(dir)];
    args.extend_from_slice(extra);
    let o = pim(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.to_path_buf()
}

const FAST: [&str; 4] = ["--epochs", "30", "--lambda-grid", "0.2,0.6,1"];

#[test]
fn synth_writes_three_files() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    let o = pim(&["synth", "--k", "6", "--k-old", "3", "--dim", "8", "--tail", "uniform", "--seed", "7", "-o", s(&d)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["features.fmat", "truth.json", "manifest.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    assert!(o.stdout.is_empty());
    let truth = json(&d.join("truth.json"));
    assert_eq!(truth["k_total"], 6);
    assert_eq!(truth["labels"].as_array().unwrap().len(), 600);
}

#[test]
fn synth_rejects_k_old_equal_k() {
    let t = tempfile::tempdir().unwrap();
    let o = pim(&["synth", "--k-old", "6", "--k", "6", "-o", s(t.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("k_old < k_total required"), "{}", stderr(&o));
}

#[test]
fn synth_is_byte_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let a = synth(&t.path().join("a"), &["--seed", "5", "--tail", "power"]);
    let b = synth(&t.path().join("b"), &["--seed", "5", "--tail", "power"]);
    for f in ["features.fmat", "truth.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = synth(&t.path().join("c"), &["--seed", "6", "--tail", "power"]);
    assert_ne!(std::fs::read(a.join("features.fmat")).unwrap(), std::fs::read(c.join("features.fmat")).unwrap());
}

#[test]
fn fmat_round_trip_is_bit_exact() {
    let t = tempfile::tempdir().unwrap();
    let (fs, _) = generate_synthetic(&SynthSpec { seed: 3, ..SynthSpec::default() }).unwrap();
    for name in ["x.fmat", "x.csv"] {
        let p = t.path().join(name);
        pim::format::save_features(&p, &fs).unwrap();
        let back = pim::format::load_features(&p).unwrap();
        let bits = |m: &pim_core::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.features()), bits(fs.features()), "{name}");
        assert_eq!(back.labels(), fs.labels());
    }
}

#[test]
fn partition_default_grid_has_nineteen_rows() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let (feat, tr) = (d.join("features.fmat"), d.join("truth.json"));
    let out = t.path().join("p");
    let o = pim(&[
        "partition", "--input", s(&feat), "--k", "4", "--epochs", "20",
        "--truth", s(&tr), "-o", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("report.json"));
    assert_eq!(r["per_lambda"].as_array().unwrap().len(), 19);
    assert_eq!(serde_json::from_slice::<Value>(&o.stdout).unwrap(), r);
    let acc = r["eval"]["acc_all"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let labels = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + r["n"].as_u64().unwrap() as usize);
}

#[test]
fn single_lambda_and_ablation_are_echoed() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let feat = d.join("features.fmat");
    let out = t.path().join("p");
    let o = pim(&[
        "partition", "--input", s(&feat), "--k", "4", "--epochs", "20", "--lambda", "0.3",
        "--ablate", "ce_off,marginal_zu", "-o", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("report.json"));
    assert_eq!(r["per_lambda"].as_array().unwrap().len(), 1);
    assert_eq!(r["lambda_opt"], 0.3);
    assert_eq!(r["manifest"]["args"]["ablate"], serde_json::json!(["ce_off", "marginal_zu"]));
    assert_eq!(r["manifest"]["config"]["flags"], serde_json::json!({"marginal": "unlabeled", "constraint": "off"}));
    assert_eq!(r["final_loss"]["cross_entropy"], Value::Null);
}

#[test]
fn reports_match_the_schema() {
    let schema: Value = serde_json::from_str(include_str!("../../../schemas/report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let (feat, tr) = (d.join("features.fmat"), d.join("truth.json"));
    for (i, extra) in [vec!["--k", "4"], vec!["--estimate-k", "--k-max", "6", "--epochs-ksearch", "10"]].into_iter().enumerate() {
        let out = t.path().join(format!("p{i}"));
        let mut args = vec!["partition", "--input", s(&feat), "--truth", s(&tr), "-o", s(&out)];
        args.extend(FAST);
        args.extend(extra);
        let o = pim(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let r = json(&out.join("report.json"));
        let errors: Vec<String> = validator.iter_errors(&r).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
}

#[test]
fn partition_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let input = d.join("features.fmat");
    let out = t.path().join("p");
    assert_eq!(code(&pim(&["partition", "--input", s(&input), "-o", s(&out)])), 2);
    assert_eq!(code(&pim(&["partition", "--input", s(&input), "--k", "4", "--k-old", "3", "-o", s(&out)])), 2);
    assert_eq!(code(&pim(&["partition", "--input", s(&input), "--k", "2", "-o", s(&out)])), 2);
    assert_eq!(code(&pim(&["partition", "--input", s(&input), "--k", "4", "--lambda", "0", "-o", s(&out)])), 2);
    assert_eq!(code(&pim(&["partition", "--input", s(&input), "--k", "4", "--ablate", "bogus", "-o", s(&out)])), 2);
    let missing = t.path().join("nope.fmat");
    assert_eq!(code(&pim(&["partition", "--input", s(&missing), "--k", "4", "-o", s(&out)])), 3);

    let nan = t.path().join("nan.csv");
    std::fs::write(&nan, "d=2,k_old=1\n0.5,1,0\n1,NaN,_\n").unwrap();
    let o = pim(&["partition", "--input", s(&nan), "--k", "2", "-o", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let big = t.path().join("big.csv");
    std::fs::write(&big, "d=2,k_old=1\n1e200,1e200,0\n-1e200,1e200,0\n1e200,-1e200,_\n-1e200,-1e200,_\n").unwrap();
    for init in ["sskm", "ssrdm"] {
        let o = pim(&[
            "partition", "--input", s(&big), "--k", "2", "--no-normalize", "--epochs", "5", "--lambda", "0.5",
            "--init", init, "-o", s(&out),
        ]);
        assert_eq!(code(&o), 4, "{init}: {}", stderr(&o));
        assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
    }
}

fn write(p: &Path, text: &str) -> PathBuf {
    std::fs::write(p, text).unwrap();
    p.to_path_buf()
}

#[test]
fn eval_scores_predictions() {
    let t = tempfile::tempdir().unwrap();
    let truth = write(
        &t.path().join("truth.json"),
        r#"{"k_total": 200, "k_old": 1, "labels": [0, 0, 1, 2, 1], "labeled": [true, false, false, false, false]}"#,
    );
    let pred = write(&t.path().join("pred.csv"), "row,cluster\n0,5\n1,5\n2,7\n3,9\n4,7\n");
    let o = pim(&["eval", "--pred", s(&pred), "--truth", s(&truth)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["acc_all"], 1.0);
    assert_eq!(r["err"], Value::Null);

    let khat = write(&t.path().join("khat.json"), r#"{"k_hat": 227}"#);
    let o = pim(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--khat", s(&khat)]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["k_hat"], 227);
    assert!((r["err"].as_f64().unwrap() - 0.135).abs() < 1e-12);

    let bad = write(&t.path().join("bad.json"), "{\n  \"k_hat\": 227,,\n}");
    let o = pim(&["eval", "--pred", s(&pred), "--truth", s(&truth), "--khat", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2 column"), "{}", stderr(&o));

    let short = write(&t.path().join("short.csv"), "row,cluster\n0,1\n1,1\n");
    assert_eq!(code(&pim(&["eval", "--pred", s(&short), "--truth", s(&truth)])), 2);
}

#[test]
fn eval_reproduces_partition_report() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let (feat, tr) = (d.join("features.fmat"), d.join("truth.json"));
    let out = t.path().join("p");
    let mut args = vec![
        "partition", "--input", s(&feat), "--estimate-k", "--k-max", "7", "--epochs-ksearch", "10",
        "--truth", s(&tr), "-o", s(&out),
    ];
    args.extend(FAST);
    assert_eq!(code(&pim(&args)), 0);
    let (labels, report) = (out.join("labels.csv"), out.join("report.json"));
    let o = pim(&["eval", "--pred", s(&labels), "--truth", s(&tr), "--khat", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let report = json(&report);
    let mut expected = report["eval"].clone();
    expected["labeled_acc"] = Value::Null;
    assert_eq!(r, expected);
}

#[test]
fn replay_is_byte_identical_across_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(&t.path().join("d"), &[]);
    let (feat, tr) = (d.join("features.fmat"), d.join("truth.json"));
    let first = t.path().join("first");
    let mut args = vec![
        "partition", "--input", s(&feat), "--k", "4", "--truth", s(&tr),
        "--trace", "--save-model", "--threads", "1", "-o", s(&first),
    ];
    args.extend(FAST);
    assert_eq!(code(&pim(&args)), 0);
    for (i, threads) in ["1", "3"].into_iter().enumerate() {
        let again = t.path().join(format!("again{i}"));
        let manifest = first.join("manifest.json");
        let o = pim(&["replay", "--manifest", s(&manifest), "--threads", threads, "-o", s(&again)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for f in ["report.json", "labels.csv", "manifest.json", "trace.csv", "model.pmod"] {
            assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
        }
    }
    let model = pim::format::load_model(&first.join("model.pmod")).unwrap();
    assert_eq!(model.k(), 4);
}

#[test]
fn replay_rejects_foreign_json() {
    let t = tempfile::tempdir().unwrap();
    let m = write(&t.path().join("m.json"), r#"{"hello": 1}"#);
    assert_eq!(code(&pim(&["replay", "--manifest", s(&m), "-o", s(t.path())])), 2);
}

mod common;

use std::fs;
use std::path::Path;

use common::*;
use oodkit::detectors::{Registry, SampleSet, Scorer};
use oodkit::io::{read_features, read_model, read_scores, Model};
use serde_json::Value;

fn ok(args: &[&str]) -> Value {
    let out = oodkit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = oodkit(args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn gen_toy(dir: &Path, seed: &str, extra: &[&str]) {
    let mut args = vec!["gen-toy", "--seed", seed, "--out", path_str(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn file_set(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_toy_is_deterministic_and_tags_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_toy(&a, "7", &[]);
    gen_toy(&b, "7", &[]);
    let files = file_set(&a);
    assert_eq!(files, file_set(&b));
    assert_eq!(files.len(), 8);
    for tag in ["A", "B", "C"] {
        let ds = read_features(a.join(format!("ood-{tag}.csv"))).unwrap();
        assert!(!ds.is_empty());
        assert!(ds.cluster.unwrap().iter().all(|c| c == tag));
        assert!(ds.labels.iter().all(|&l| l == -1));
    }
    gen_toy(&b, "8", &[]);
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(b.join("train.csv")).unwrap());
}

#[test]
fn invalid_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = path_str(tmp.path());
    assert_eq!(exit_code(&["gen-toy", "--out", d, "--n-id", "0"]).0, 2);
    assert_eq!(exit_code(&["gen-toy", "--out", d, "--noise", "-1"]).0, 2);
    assert_eq!(exit_code(&["gen-toy", "-o", d]).0, 2);
    assert_eq!(exit_code(&["eval", "--id", "a.csv", "--ood", "b.csv", "--tpr", "1.5"]).0, 2);
    assert_eq!(exit_code(&["fit", "--detector", "nope", "--data", "x.csv", "--out", "y.json"]).0, 2);
}

#[test]
fn train_and_extract() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_toy(&data, "3", &["--n-id", "300"]);
    let train = data.join("train.csv");
    let (m1, m2) = (tmp.path().join("m1.json"), tmp.path().join("m2.json"));
    let report =
        ok(&["train", "--data", path_str(&train), "--seed", "3", "--arch", "2,50,2,2", "--out", path_str(&m1)]);
    assert!(report["accuracy"].as_f64().unwrap() >= 0.99, "{report}");
    ok(&["train", "--data", path_str(&train), "--seed", "3", "--out", path_str(&m2)]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    let (code, err) = exit_code(&["train", "--data", path_str(&train), "--arch", "3,50,2,2", "--out", path_str(&m2)]);
    assert_eq!(code, 3);
    assert!(err.contains("input columns"), "{err}");

    let (f1, f2) = (tmp.path().join("f1.csv"), tmp.path().join("f2.csv"));
    let test = data.join("test-id.csv");
    ok(&["extract", "--model", path_str(&m1), "--data", path_str(&test), "--out", path_str(&f1)]);
    ok(&["extract", "--model", path_str(&m1), "--data", path_str(&test), "--out", path_str(&f2)]);
    assert_eq!(fs::read(&f1).unwrap(), fs::read(&f2).unwrap());
    let input = read_features(&test).unwrap();
    let feats = read_features(&f1).unwrap();
    assert_eq!(feats.len(), input.len());
    assert_eq!(feats.ids, input.ids);
    assert_eq!(feats.dim(), 2);
    let sm = feats.softmax.unwrap();
    assert!(sm.iter_rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
}

#[test]
fn gradient_commands_refuse_without_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("x.csv");
    fs::write(&data, external_features_csv(1, 20, 5)).unwrap();
    let out = path_str(tmp.path()).to_string() + "/o";
    let (code, err) = exit_code(&["fit", "--detector", "odin", "--data", path_str(&data), "--out", &out]);
    assert_eq!(code, 2);
    assert!(err.contains("needs --model"), "{err}");
    let (code, err) = exit_code(&["attack-fgsm", "--data", path_str(&data), "--out", &out]);
    assert_eq!(code, 2);
    assert!(err.contains("needs --model"), "{err}");
}

#[test]
fn missing_input_is_a_named_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.csv");
    let (code, err) = exit_code(&["eval", "--id", path_str(&missing), "--ood", path_str(&missing)]);
    assert_eq!(code, 3);
    assert!(err.contains("absent.csv"), "{err}");
}

#[test]
fn every_command_prints_resolved_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oodkit(&["gen-toy", "--out", path_str(tmp.path()), "--n-id", "20", "--n-ood", "5"]);
    let err = String::from_utf8_lossy(&out.stderr);
    let cfg: Value = serde_json::from_str(&err).unwrap();
    assert_eq!(cfg["command"], "gen-toy");
    assert_eq!(cfg["settings"]["pipeline"]["toy"]["n_id_per_class"], 20);
    assert_eq!(cfg["settings"]["pipeline"]["odin_temperature"], 10.0);
    assert_eq!(cfg["settings"]["pipeline"]["retained_fraction"], 0.4);
}

#[test]
fn eval_reports_the_five_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (id, ood, rep) = (tmp.path().join("id.csv"), tmp.path().join("ood.csv"), tmp.path().join("r.json"));
    fs::write(&id, "id,score\na,0.1\nb,0.2\nc,0.3\nd,0.4\n").unwrap();
    fs::write(&ood, "id,score\ne,0.35\nf,0.5\n").unwrap();
    let report = ok(&["eval", "--id", path_str(&id), "--ood", path_str(&ood), "--out", path_str(&rep)]);
    for key in ["tnr_at_tpr", "auroc", "dtacc", "aupr_in", "aupr_out"] {
        assert!(report[key].is_number(), "{key} missing in {report}");
    }
    assert_eq!(report["auroc"], 0.875);
    assert_eq!(report["tpr_target"], 0.95);
    assert!(report["orientation"].as_str().unwrap().contains("higher score = more OOD"));
    let written: Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(written, report);
}

/// Fit, compose, score and evaluate on a feature CSV that did not come from the
/// built-in classifier.
#[test]
fn external_features_run_through_fit_score_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    fs::write(p("train.csv"), external_features_csv(11, 200, 0)).unwrap();
    fs::write(p("val-id.csv"), external_features_csv(12, 40, 0)).unwrap();
    fs::write(p("val-ood.csv"), external_features_csv(13, 0, 60)).unwrap();
    fs::write(p("test-id.csv"), external_features_csv(14, 100, 0)).unwrap();
    fs::write(p("test-ood.csv"), external_features_csv(15, 0, 150)).unwrap();
    let before = file_set(tmp.path());
    let s = |name: &str| path_str(tmp.path()).to_string() + "/" + name;

    for kind in ["mahalanobis", "pca", "entropy", "knn_entropy"] {
        ok(&["fit", "--detector", kind, "--data", &s("train.csv"), "--out", &s(&format!("{kind}.json"))]);
    }
    let sel = ok(&[
        "fit",
        "--detector",
        "conformance",
        "--data",
        &s("train.csv"),
        "--val-id",
        &s("val-id.csv"),
        "--val-ood",
        &s("val-ood.csv"),
        "--out",
        &s("conformance.json"),
    ]);
    assert_eq!(sel["k_selection"].as_array().unwrap().len(), 5);
    let proxy = ["--id".to_string(), s("val-id.csv"), "--ood".into(), s("val-ood.csv"), "--proxy".into(), "ood".into()];
    let fit_with_proxy = |head: &[&str]| {
        let args: Vec<String> = head.iter().map(|a| a.to_string()).chain(proxy.iter().cloned()).collect();
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    fit_with_proxy(&["detector", "--au", &s("entropy.json"), "--eu", &s("mahalanobis.json"), "--out", &s("d1.json")]);
    fit_with_proxy(&["detector", "--au", &s("conformance.json"), "--eu", &s("pca.json"), "--out", &s("d2.json")]);
    fit_with_proxy(&["ensemble", "--detector", &s("d1.json"), "--detector", &s("d2.json"), "--out", &s("ens.json")]);

    let registry = Registry::builtin();
    let test_id = SampleSet::from_features(read_features(p("test-id.csv")).unwrap());
    for name in ["mahalanobis", "pca", "conformance", "d1", "d2", "ens"] {
        let model = s(&format!("{name}.json"));
        for split in ["test-id", "test-ood"] {
            let out = s(&format!("{name}-{split}-scores.csv"));
            ok(&["score", "--detector", &model, "--data", &s(&format!("{split}.csv")), "--out", &out]);
        }
        let report = ok(&[
            "eval",
            "--id",
            &s(&format!("{name}-test-id-scores.csv")),
            "--ood",
            &s(&format!("{name}-test-ood-scores.csv")),
        ]);
        assert!(report["tnr_at_tpr"].as_f64().unwrap() > 0.9, "{name}: {report}");

        // The CLI scores are exactly what the library computes from the saved model.
        let (ids, scores) = read_scores(s(&format!("{name}-test-id-scores.csv"))).unwrap();
        assert_eq!(ids, test_id.data.ids);
        let lib = match read_model(&model, &registry).unwrap() {
            Model::Indicator(i) => i.score_set(&test_id).unwrap(),
            Model::Detector(d) => d.score_set(&test_id).unwrap(),
            Model::Ensemble(e) => e.score_set(&test_id).unwrap(),
            Model::Mlp(_) => unreachable!(),
        };
        assert_eq!(scores, lib, "{name}");
    }

    let after = file_set(tmp.path());
    for (name, bytes) in &before {
        assert_eq!(after.iter().find(|(n, _)| n == name).map(|(_, b)| b), Some(bytes), "{name} was modified");
    }
}

#[test]
fn mahalanobis_scores_are_minimal_at_class_means() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train.csv");
    fs::write(&train, external_features_csv(2, 50, 0)).unwrap();
    let model = tmp.path().join("m.json");
    ok(&["fit", "--detector", "mahalanobis", "--data", path_str(&train), "--out", path_str(&model)]);

    let ds = read_features(&train).unwrap();
    let mut csv = String::from("id,label");
    (0..ds.dim()).for_each(|j| csv.push_str(&format!(",f{j}")));
    csv.push('\n');
    for c in 0..3 {
        let rows: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.labels[i] == c).map(|i| ds.row(i)).collect();
        let mean: Vec<f64> =
            (0..ds.dim()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
        csv.push_str(&format!("mean{c},{c}"));
        mean.iter().for_each(|v| csv.push_str(&format!(",{v:?}")));
        csv.push('\n');
    }
    for i in 0..20 {
        csv.push_str(&format!("row{i},0"));
        ds.row(i * 7).iter().for_each(|v| csv.push_str(&format!(",{v:?}")));
        csv.push('\n');
    }
    let probe = tmp.path().join("probe.csv");
    fs::write(&probe, csv).unwrap();
    let scores = tmp.path().join("s.csv");
    ok(&["score", "--detector", path_str(&model), "--data", path_str(&probe), "--out", path_str(&scores)]);
    let (_, s) = read_scores(&scores).unwrap();
    for m in &s[..3] {
        assert!(m.abs() < 1e-9, "score at a class mean: {m}");
    }
    assert!(s[3..].iter().all(|&v| v > s[0]));
}

#[test]
fn reproduce_toy_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let small = ["--seeds", "2", "--n-id", "200", "--n-ood", "50", "--seed", "4"];
    for dir in [&a, &b] {
        let mut args = vec!["reproduce-toy", "--out", path_str(dir)];
        args.extend_from_slice(&small);
        let out = oodkit(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = file_set(&a);
    assert_eq!(
        files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        ["results.csv", "summary.json", "summary.txt"]
    );
    assert_eq!(files, file_set(&b));

    let table = String::from_utf8(files[2].1.clone()).unwrap();
    let stages: Vec<&str> = table.lines().skip(2).map(|l| l.split_whitespace().next().unwrap()).collect();
    let first = |s: &str| stages.iter().position(|x| *x == s).unwrap();
    let last = |s: &str| stages.iter().rposition(|x| *x == s).unwrap();
    assert!(last("indicator") < first("detector") && last("detector") < first("ensemble"));
    assert!(table.contains('±'));
}

/// The shipped shell pipeline reproduces the in-process study for one seed.
#[test]
fn toy_script_matches_reproduce_toy() {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/toy_pipeline.sh");
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = std::process::Command::new("bash")
        .arg(&script)
        .arg(&run)
        .arg("2")
        .env("OODKIT", env!("CARGO_BIN_EXE_oodkit"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let script_table = String::from_utf8(out.stdout).unwrap();

    let rt = tmp.path().join("rt");
    ok(&["reproduce-toy", "--seeds", "1", "--seed", "2", "--out", path_str(&rt)]);
    let summary: Value = serde_json::from_str(&fs::read_to_string(rt.join("summary.json")).unwrap()).unwrap();
    let rows = summary["summary"].as_array().unwrap();
    let lookup = |stage: &str, name: &str, proxy: &str| {
        let r = rows.iter().find(|r| r["stage"] == stage && r["name"] == name && r["proxy"] == proxy).unwrap();
        ["tnr", "tnr_a", "tnr_b", "tnr_c"].map(|k| format!("{:.2}", 100.0 * r["mean"][k].as_f64().unwrap()))
    };
    let mut checked = 0;
    for line in script_table.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        let expected = match cols[0] {
            "d1-ood" => lookup("detector", "odin+mahalanobis", "ood"),
            "d2-ood" => lookup("detector", "conformance+pca", "ood"),
            "d1-fgsm" => lookup("detector", "odin+mahalanobis", "fgsm"),
            "d2-fgsm" => lookup("detector", "conformance+pca", "fgsm"),
            "ensemble-ood" => lookup("ensemble", "ensemble", "ood"),
            "ensemble-fgsm" => lookup("ensemble", "ensemble", "fgsm"),
            kind => lookup("indicator", kind, "-"),
        };
        assert_eq!(cols[1..].to_vec(), expected.iter().map(String::as_str).collect::<Vec<_>>(), "{line}");
        checked += 1;
    }
    assert_eq!(checked, 13);
}

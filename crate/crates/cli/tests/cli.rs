use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dravida(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dravida"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dravida(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small corpus and a config small enough to train in seconds.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--train-per-language",
        "30",
        "--dev-per-language",
        "10",
        "--out",
        s(&data),
    ]);
    let config = dir.join("config.json");
    fs::write(
        &config,
        r#"{"learning_rate": 0.003, "dropout": 0.1, "batch_size": 8, "epochs": 2, "min_word_count": 1,
            "max_len": 32, "encoder": {"hidden": 16, "layers": 1, "heads": 2, "ffn": 32, "max_len": 32, "init_std": 0.1},
            "perturbation": {"epsilon": 0.05, "alpha_specific": 1.5, "alpha_other": 1.0}}"#,
    )
    .unwrap();
    (data.join("manifest.json"), config)
}

fn error_record(out: &Output) -> serde_json::Value {
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn synth_and_stats() {
    let dir = TempDir::new().unwrap();
    let (manifest, _) = setup(dir.path());
    let md = ok(&["stats", "--data", s(&manifest)]);
    assert!(md.contains("ta") && md.contains("Positive"));
    let out = dir.path().join("stats");
    ok(&["stats", "--data", s(&manifest), "--out", s(&out)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert!(json.is_object() || json.is_array());
}

#[test]
fn train_evaluate_predict() {
    let dir = TempDir::new().unwrap();
    let (manifest, config) = setup(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&manifest),
        "--config",
        s(&config),
        "--recognizer-epochs",
        "1",
        "--out",
        s(&run),
    ]);
    for f in ["best", "last", "epochs.jsonl", "report.json", "report.md", "lexicon.tsv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let epochs = fs::read_to_string(run.join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 2);

    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("best")),
        "--data",
        s(&manifest),
        "--out",
        s(&eval),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    let avg = report["average"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&avg));

    let tsv = dir.path().join("pred.tsv");
    ok(&[
        "predict",
        "--checkpoint",
        s(&run.join("best")),
        "--data",
        s(&manifest),
        "--out",
        s(&tsv),
    ]);
    let text = fs::read_to_string(&tsv).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn extract_lexicon_then_sweep() {
    let dir = TempDir::new().unwrap();
    let (manifest, config) = setup(dir.path());
    let lex = dir.path().join("lex");
    ok(&[
        "extract-lexicon",
        "--data",
        s(&manifest),
        "--config",
        s(&config),
        "--epochs",
        "1",
        "--out",
        s(&lex),
    ]);
    let tsv = fs::read_to_string(lex.join("lexicon.tsv")).unwrap();
    for line in tsv.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        assert!(cols[2].parse::<f64>().unwrap() > 0.0);
    }
    assert!(lex.join("saliency.jsonl").exists());

    let sweep = dir.path().join("sweep");
    let md = ok(&[
        "sweep-alpha",
        "--data",
        s(&manifest),
        "--config",
        s(&config),
        "--epochs",
        "1",
        "--lexicon",
        s(&lex.join("lexicon.tsv")),
        "--alphas",
        "1.1,1.5",
        "--out",
        s(&sweep),
    ]);
    assert!(md.contains("| Threshold | ta | ml | kn | Average |"));
    assert!(md.contains("| 1.1 |") && md.contains("| 1.5 |"));
    assert!(sweep.join("sweep.json").exists() && sweep.join("sweep_last.md").exists());
}

#[test]
fn report_renders_fixture() {
    let dir = TempDir::new().unwrap();
    let fixture = dir.path().join("table7.json");
    fs::write(
        &fixture,
        r#"{"title": "Alpha", "row_header": "Threshold", "columns": ["Mal", "Kannada", "Tamil"],
            "rows": [{"label": "1.1", "values": [0.7562, 0.6655, 0.7099]},
                     {"label": "1.5", "values": [0.7567, 0.6849, 0.6958]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["report", "--input", s(&fixture), "--out", s(&out)]);
    let md = fs::read_to_string(out.join("table7.md")).unwrap();
    assert!(md.contains("| 1.1 | 0.7562 | 0.6655 | 0.7099 | 0.7105 |"), "{md}");
    assert!(md.contains("| 1.5 | 0.7567 | 0.6849 | 0.6958 | 0.7125 |"), "{md}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("table7.json")).unwrap()).unwrap();
    assert_eq!(json["rows"][0]["average"].as_f64(), Some(0.7105));
}

#[test]
fn errors_are_json_with_exit_code_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let missing = dravida(&["report", "--input", s(&dir.path().join("nope.json")), "--out", s(&out)]);
    assert_eq!(error_record(&missing)["error"], "load");

    let fixture = dir.path().join("t.json");
    fs::write(&fixture, r#"{"title": "", "row_header": "Model", "columns": ["a"], "rows": []}"#).unwrap();
    let bad = dravida(&["report", "--input", s(&fixture), "--format", "pdf", "--out", s(&out)]);
    let record = error_record(&bad);
    assert_eq!(record["error"], "unknown_format");
    assert!(record["message"].as_str().unwrap().contains("pdf"));

    let no_data = dravida(&["stats", "--data", s(&dir.path().join("missing.json"))]);
    assert_eq!(no_data.status.code(), Some(2));
}

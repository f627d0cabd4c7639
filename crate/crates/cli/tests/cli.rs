use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causeway::corpus::{write_corpus, CorpusFormat};
use causeway::harness::{generate_synthetic_corpus, SyntheticSpec};
use causeway::model::{Matrix, PretrainedEmbeddings, Vocab};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn causeway(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causeway"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"
seed = 3
[data]
corpus = "corpus.jsonl"
split = [0.6, 0.2, 0.2]
[model]
embed_dim = 8
model_dim = 8
filters = 4
heads = 2
hidden = 8
windows = [2, 3]
[train]
epochs = 3
use_pretrained_encoder = false
[mining]
clusters = 2
fraction = 0.5
"#;

/// A temp dir holding a 60-sentence synthetic corpus and the small config.
fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 60, 5).unwrap();
    write_corpus(
        dir.path().join("corpus.jsonl"),
        &corpus,
        CorpusFormat::Jsonl,
    )
    .unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn missing_corpus_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = causeway(dir.path(), &["stats", "nowhere.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.jsonl"), "{}", stderr(&o));
}

#[test]
fn stats_on_the_fixture_match_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture("stats3.jsonl");
    let o = causeway(dir.path(), &["stats", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&dir.path().join("out/stats.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["sentences"], 3);
    assert_eq!(v["avg_sentence_length"].as_f64().unwrap(), 22.0 / 3.0);
    assert_eq!(v["mean_causal_distance"].as_f64().unwrap(), 4.0 / 3.0);
    assert_eq!(v["cause_length_mode"]["length"], 2);
    assert_eq!(v["cause_length_mode"]["proportion"].as_f64().unwrap(), 1.0);
    assert_eq!(v["effect_length_mode"]["length"], 3);
    assert_eq!(v["effect_length_mode"]["proportion"].as_f64().unwrap(), 0.5);
    assert_eq!(v["avg_cause_length"].as_f64().unwrap(), 2.0);
    assert_eq!(v["avg_effect_length"].as_f64().unwrap(), 2.25);
}

#[test]
fn conll_twin_gives_the_same_stats() {
    let dir = tempfile::tempdir().unwrap();
    let j = causeway(
        dir.path(),
        &[
            "stats",
            fixture("stats3.jsonl").to_str().unwrap(),
            "--out",
            "j",
        ],
    );
    let t = causeway(
        dir.path(),
        &[
            "stats",
            fixture("stats3.tsv").to_str().unwrap(),
            "--format",
            "conll-tsv",
            "--out",
            "t",
        ],
    );
    assert!(
        j.status.success() && t.status.success(),
        "{}{}",
        stderr(&j),
        stderr(&t)
    );
    let mut a = read_json(&dir.path().join("j/stats.json"));
    let mut b = read_json(&dir.path().join("t/stats.json"));
    a.as_object_mut().unwrap().remove("corpus");
    b.as_object_mut().unwrap().remove("corpus");
    assert_eq!(a, b);
}

#[test]
fn unknown_config_keys_are_all_listed() {
    let dir = workspace("sed = 1\n[model]\nembedding = 3\n[train]\nepochz = 2\n");
    let o = causeway(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["sed", "model.embedding", "train.epochz"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
}

#[test]
fn missing_config_paths_are_validation_errors() {
    let dir = workspace(&SMALL.replace("corpus.jsonl", "absent.jsonl"));
    let o = causeway(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.jsonl"));
}

#[test]
fn mining_with_too_few_ngrams_exits_3_naming_the_pool() {
    let dir = workspace(SMALL);
    let o = causeway(dir.path(), &["mine", "--config", "run.toml", "--k", "5000"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("window 2 cause pool"), "{}", stderr(&o));
}

#[test]
fn mining_writes_a_plan() {
    let dir = workspace(SMALL);
    let o = causeway(dir.path(), &["mine", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("window 3 effect"), "{stdout}");
    let plan = read_json(&dir.path().join("out/plan.json"));
    assert_eq!(plan["header"]["filters"], 4);
    let summary = read_json(&dir.path().join("out/mining.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["infused_filters"], 4);

    let o = causeway(
        dir.path(),
        &[
            "mine", "--config", "run.toml", "--rho", "0", "--out", "zero",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_json(&dir.path().join("zero/mining.json"))["infused_filters"],
        0
    );
}

#[test]
fn train_eval_extract_round_trip() {
    let dir = workspace(SMALL);
    let p = dir.path();
    let a = causeway(p, &["train", "--config", "run.toml", "--out", "a"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = causeway(p, &["train", "--config", "run.toml", "--out", "b"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let csv_a = fs::read(p.join("a/convergence.csv")).unwrap();
    assert_eq!(csv_a, fs::read(p.join("b/convergence.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("epoch,train_loss,dev_precision,dev_recall,dev_f1,seconds\n"));

    let report = read_json(&p.join("a/report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["seed"], 3);
    assert!(report["stage_seeds"]["dropout"].is_u64());

    // The test split is rebuilt from the same seed; re-evaluating the saved
    // checkpoint on it must reproduce the recorded test numbers.
    let corpus =
        causeway::corpus::load_corpus(p.join("corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    let seed = causeway::harness::derive_seed(3, "split");
    let splits = causeway::corpus::split_corpus(&corpus, (0.6, 0.2, 0.2), seed).unwrap();
    write_corpus(p.join("test.jsonl"), &splits.test, CorpusFormat::Jsonl).unwrap();
    let e = causeway(
        p,
        &[
            "eval",
            "--checkpoint",
            "a/checkpoint.json",
            "test.jsonl",
            "--out",
            "a",
        ],
    );
    assert!(e.status.success(), "{}", stderr(&e));
    let eval = read_json(&p.join("a/eval.json"));
    for k in ["precision", "recall", "f1"] {
        assert_eq!(eval[k], report["test"][k], "{k}");
    }

    fs::write(p.join("empty.txt"), "").unwrap();
    let x = causeway(
        p,
        &[
            "extract",
            "--checkpoint",
            "a/checkpoint.json",
            "empty.txt",
            "--out",
            "x",
        ],
    );
    assert!(x.status.success(), "{}", stderr(&x));
    assert_eq!(fs::read(p.join("x/extractions.jsonl")).unwrap(), b"");

    fs::write(
        p.join("raw.txt"),
        "cz1 cz2 leads to ef3 ef4\n\n w1 because of cz0 \n",
    )
    .unwrap();
    let x = causeway(
        p,
        &[
            "extract",
            "--checkpoint",
            "a/checkpoint.json",
            "raw.txt",
            "--out",
            "x",
        ],
    );
    assert!(x.status.success(), "{}", stderr(&x));
    let lines: Vec<Value> = fs::read_to_string(p.join("x/extractions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["line"], 1);
    assert_eq!(lines[1]["line"], 3);
    assert_eq!(lines[1]["tokens"].as_array().unwrap().len(), 4);
    assert_eq!(lines[0]["tags"].as_array().unwrap().len(), 6);
}

#[test]
fn damaged_checkpoint_exits_4() {
    let dir = workspace(SMALL);
    let p = dir.path();
    let o = causeway(p, &["train", "--config", "run.toml", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut ckpt = read_json(&p.join("out/checkpoint.json"));
    ckpt["tagger"]["config"]["hidden"] = Value::from(9);
    fs::write(p.join("bad.json"), ckpt.to_string()).unwrap();
    fs::write(p.join("raw.txt"), "a b c\n").unwrap();
    let x = causeway(p, &["extract", "--checkpoint", "bad.json", "raw.txt"]);
    assert_eq!(x.status.code(), Some(4), "{}", stderr(&x));

    ckpt["version"] = Value::from(99);
    fs::write(p.join("old.json"), ckpt.to_string()).unwrap();
    let x = causeway(p, &["extract", "--checkpoint", "old.json", "raw.txt"]);
    assert_eq!(x.status.code(), Some(4));
}

#[test]
fn plan_for_another_model_exits_4() {
    let dir = workspace(SMALL);
    let p = dir.path();
    let o = causeway(p, &["mine", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = SMALL
        .replace("filters = 4", "filters = 6")
        .replace("[data]", "[data]\nplan = \"out/plan.json\"");
    fs::write(p.join("wide.toml"), cfg).unwrap();
    let o = causeway(p, &["train", "--config", "wide.toml"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn ablation_table_has_every_variant() {
    let dir = workspace(
        &SMALL
            .replace("epochs = 3", "epochs = 1")
            .replace("use_pretrained_encoder = false", ""),
    );
    let p = dir.path();
    let corpus =
        causeway::corpus::load_corpus(p.join("corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    let vocab = Vocab::from_corpus(corpus.iter().map(|s| s.tokens.as_slice()));
    let table = Matrix::from_shape_fn((vocab.len(), 8), |(i, j)| {
        ((i * 7 + j) % 5) as f64 * 0.1 - 0.2
    });
    PretrainedEmbeddings { vocab, table }
        .save(p.join("vectors.txt"))
        .unwrap();
    let cfg = fs::read_to_string(p.join("run.toml"))
        .unwrap()
        .replace("[data]", "[data]\npretrained = \"vectors.txt\"");
    fs::write(p.join("run.toml"), cfg).unwrap();
    let o = causeway(p, &["ablate", "--config", "run.toml", "--seeds", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&p.join("out/ablation.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    assert_eq!(v["partial"], false);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn langvec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langvec"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
# tiny synthetic run
registry = data/registry.tsv
corpus = data/corpus.txt
features = data/features.csv
work_dir = work
seed = 11
num_merges = 40
embed_size = 8
hidden_size = 8
epochs = 1
batch_size = 16
lr = 0.01
dropout = 0.0
methods = None,MTVec,MTCell,MTBoth
folds = 4
bootstrap_resamples = 1000
traj_sentences = 2
synth_languages = 8
synth_sentences = 12
synth_lexicon = 12
";

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), config).unwrap();
    dir
}

#[test]
fn predict_before_extract_names_the_missing_stage() {
    let dir = setup(SMALL);
    assert!(langvec(dir.path(), &["synth", "--config", "run.cfg"]).status.success());
    assert!(langvec(dir.path(), &["ingest", "--config", "run.cfg"]).status.success());
    let out = langvec(dir.path(), &["predict", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run stage `extract` first"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let dir = setup(SMALL);
    assert_eq!(langvec(dir.path(), &["ingest"]).status.code(), Some(1));
    assert_eq!(langvec(dir.path(), &["nonsense", "--config", "run.cfg"]).status.code(), Some(1));
    assert_eq!(
        langvec(dir.path(), &["ingest", "--stage", "report", "--config", "run.cfg"]).status.code(),
        Some(1)
    );
    let out = langvec(dir.path(), &["ingest", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn missing_seed_is_a_validation_error_unless_given() {
    let dir = setup(&SMALL.replace("seed = 11\n", ""));
    assert_eq!(langvec(dir.path(), &["synth", "--config", "run.cfg"]).status.code(), Some(1));
    let out = langvec(dir.path(), &["--stage", "synth", "--config", "run.cfg", "--seed", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let eff = fs::read_to_string(dir.path().join("work/config.effective")).unwrap();
    assert!(eff.contains("seed = 4\n"));
}

#[test]
fn held_lock_is_a_runtime_error() {
    let dir = setup(SMALL);
    fs::create_dir_all(dir.path().join("work")).unwrap();
    fs::write(dir.path().join("work/.lock"), "").unwrap();
    let out = langvec(dir.path(), &["synth", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("locked"));
}

#[test]
fn full_chain_is_resumable_and_deterministic() {
    let a = setup(SMALL);
    let b = setup(SMALL);
    for dir in [&a, &b] {
        assert!(langvec(dir.path(), &["synth", "--config", "run.cfg"]).status.success());
        let out = langvec(dir.path(), &["run", "--config", "run.cfg"]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(!dir.path().join("work/.lock").exists());
    }
    for file in [
        "extract/vectors.tsv",
        "predict/instances.tsv",
        "report/table1.md",
        "report/table1.tsv",
        "report/gains.md",
        "bootstrap/bootstrap.tsv",
        "traj/trajectory.csv",
    ] {
        let x = fs::read(a.path().join("work").join(file)).unwrap();
        let y = fs::read(b.path().join("work").join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let table = fs::read_to_string(a.path().join("work/report/table1.md")).unwrap();
    assert!(table.starts_with("| Method | Syntax -Aux | Syntax +Aux |"));
    assert!(table.contains("| MTBoth |"));

    let again = langvec(a.path(), &["run", "--config", "run.cfg"]);
    assert!(again.status.success());
    let log = stderr(&again);
    assert!(log.contains("train-nmt: up to date") && !log.contains(": done"), "{log}");

    // A changed setting reruns only the stages that depend on it.
    let cfg = fs::read_to_string(a.path().join("run.cfg"))
        .unwrap()
        .replace("bootstrap_resamples = 1000", "bootstrap_resamples = 2000");
    fs::write(a.path().join("run.cfg"), cfg).unwrap();
    let log = stderr(&langvec(a.path(), &["run", "--config", "run.cfg"]));
    assert!(log.contains("bootstrap: done") && log.contains("predict: up to date"), "{log}");
}

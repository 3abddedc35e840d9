//! Work-directory orchestration of the full pipeline.
//!
//! Each stage reads artifacts of earlier stages, writes its own under
//! `<work_dir>/<stage>/`, and records a manifest of input hashes, the config
//! keys it depends on, the seed and the tool version. Rerunning a stage whose
//! manifest still matches is a no-op.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::bpe::{build_vocab, encode_corpus, learn_bpe, EncodedPair, MergeTable, SubwordVocab};
use crate::corpus::{load_parallel, load_registry, CorpusStore, Registry};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::kv::KeyValues;
use crate::nn::{examples, train_lm, train_nmt, RnnLm, Seq2Seq, TrainConfig};
use crate::predict::{
    describe_condition, evaluate, export_trajectory, make_folds, paired_bootstrap, paired_instances, render_gains, render_table1,
    render_tsv, top_gains, train_logreg, trajectory_csv, EvalConfig, EvalReport, FoldAssignment, KnnTable, Predictor, Standardizer,
};
use crate::repr::{
    cluster_vectors, combine_mtboth, extract_lmvec, extract_mtcell, extract_mtvec, CellOptions, Method, Selection, VectorStore,
};
use crate::synth::generate_suite_with;
use crate::typology::{load_features, Category, DistanceContext, FeatureMatrix, KnnConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    BpeLearn,
    TrainLm,
    TrainNmt,
    Extract,
    Baseline,
    Predict,
    Report,
    Bootstrap,
    Traj,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::BpeLearn,
        Stage::TrainLm,
        Stage::TrainNmt,
        Stage::Extract,
        Stage::Baseline,
        Stage::Predict,
        Stage::Report,
        Stage::Bootstrap,
        Stage::Traj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::BpeLearn => "bpe-learn",
            Stage::TrainLm => "train-lm",
            Stage::TrainNmt => "train-nmt",
            Stage::Extract => "extract",
            Stage::Baseline => "baseline",
            Stage::Predict => "predict",
            Stage::Report => "report",
            Stage::Bootstrap => "bootstrap",
            Stage::Traj => "traj",
        }
    }

    /// Config keys whose values change the stage's output.
    fn config_keys(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &["synth_languages", "synth_sentences", "synth_lexicon", "seed"],
            Stage::Ingest => &[],
            Stage::BpeLearn => &["num_merges"],
            Stage::TrainLm => &[
                "embed_size", "hidden_size", "lr", "dropout", "epochs", "batch_size", "clip_norm", "lm_lang_token", "seed",
            ],
            Stage::TrainNmt => &[
                "embed_size", "hidden_size", "lr", "dropout", "epochs", "batch_size", "clip_norm", "attention", "seed",
            ],
            Stage::Extract => &["methods", "max_sentences", "seed", "lm_lang_token"],
            Stage::Baseline => &["knn_k", "geodesic_weight", "genetic_weight"],
            Stage::Predict => &["methods", "l2", "folds", "seed"],
            Stage::Report => &[],
            Stage::Bootstrap => &["bootstrap_resamples", "seed"],
            Stage::Traj => &["traj_feature", "traj_sentences", "l2"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
    pub registry: PathBuf,
    pub corpus: PathBuf,
    pub features: PathBuf,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub num_merges: usize,
    pub train: TrainConfig,
    pub knn: KnnConfig,
    pub predictors: Vec<Predictor>,
    pub l2: f64,
    pub folds: usize,
    pub max_sentences: Option<usize>,
    pub bootstrap_resamples: usize,
    pub traj_feature: String,
    pub traj_sentences: usize,
    pub synth_languages: usize,
    pub synth_sentences: usize,
    pub synth_lexicon: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "registry",
    "corpus",
    "features",
    "work_dir",
    "seed",
    "num_merges",
    "embed_size",
    "hidden_size",
    "lr",
    "dropout",
    "epochs",
    "batch_size",
    "clip_norm",
    "attention",
    "lm_lang_token",
    "knn_k",
    "geodesic_weight",
    "genetic_weight",
    "methods",
    "l2",
    "folds",
    "max_sentences",
    "bootstrap_resamples",
    "traj_feature",
    "traj_sentences",
    "synth_languages",
    "synth_sentences",
    "synth_lexicon",
];

impl PipelineConfig {
    /// Parses a config file body; `seed` overrides the file's seed.
    pub fn parse(text: &str, origin: &str, base_dir: &Path, seed: Option<u64>) -> Result<Self> {
        let kv = KeyValues::parse(text, origin)?;
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::validation(format!("unknown config key `{k}`")));
        }
        let path = |key: &str| -> Result<PathBuf> {
            kv.get(key)
                .map(PathBuf::from)
                .ok_or_else(|| Error::validation(format!("config key `{key}` is required")))
        };
        let seed = match seed {
            Some(s) => s,
            None => kv
                .get_parsed("seed")?
                .ok_or_else(|| Error::validation("config key `seed` is required"))?,
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            embed_size: kv.get_parsed("embed_size")?.unwrap_or(d.embed_size),
            hidden_size: kv.get_parsed("hidden_size")?.unwrap_or(d.hidden_size),
            lr: kv.get_parsed("lr")?.unwrap_or(d.lr),
            dropout: kv.get_parsed("dropout")?.unwrap_or(d.dropout),
            epochs: kv.get_parsed("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.get_parsed("batch_size")?.unwrap_or(d.batch_size),
            seed,
            clip_norm: kv.get_parsed("clip_norm")?.unwrap_or(d.clip_norm),
            attention: kv.get_parsed("attention")?.unwrap_or(d.attention),
            use_lang_token: kv.get_parsed("lm_lang_token")?.unwrap_or(d.use_lang_token),
        };
        train.validate()?;
        let k = KnnConfig::default();
        let knn = KnnConfig {
            k: kv.get_parsed("knn_k")?.unwrap_or(k.k),
            geodesic_weight: kv.get_parsed("geodesic_weight")?.unwrap_or(k.geodesic_weight),
            genetic_weight: kv.get_parsed("genetic_weight")?.unwrap_or(k.genetic_weight),
        };
        knn.validate()?;
        let predictors = match kv.get("methods") {
            Some(list) => list
                .split(',')
                .map(|m| m.trim().parse::<Predictor>())
                .collect::<Result<Vec<_>>>()?,
            None => Predictor::TABLE_ROWS.to_vec(),
        };
        if predictors.is_empty() {
            return Err(Error::validation("`methods` must list at least one method"));
        }
        let max_sentences = match kv.get("max_sentences") {
            None | Some("all") => None,
            Some(_) => Some(kv.get_parsed::<usize>("max_sentences")?.expect("present")),
        };
        let config = PipelineConfig {
            base_dir: base_dir.to_path_buf(),
            registry: path("registry")?,
            corpus: path("corpus")?,
            features: path("features")?,
            work_dir: path("work_dir")?,
            seed,
            num_merges: kv.get_parsed("num_merges")?.unwrap_or(1000),
            train,
            knn,
            predictors,
            l2: kv.get_parsed("l2")?.unwrap_or(1.0),
            folds: kv.get_parsed("folds")?.unwrap_or(10),
            max_sentences,
            bootstrap_resamples: kv.get_parsed("bootstrap_resamples")?.unwrap_or(10_000),
            traj_feature: kv.get("traj_feature").unwrap_or("S_OBJECT_BEFORE_VERB").to_string(),
            traj_sentences: kv.get_parsed("traj_sentences")?.unwrap_or(5),
            synth_languages: kv.get_parsed("synth_languages")?.unwrap_or(40),
            synth_sentences: kv.get_parsed("synth_sentences")?.unwrap_or(500),
            synth_lexicon: kv.get_parsed("synth_lexicon")?.unwrap_or(20),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&read_to_string(path)?, &path.display().to_string(), &base, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.num_merges == 0 {
            return Err(Error::validation("num_merges must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::validation("l2 must be non-negative"));
        }
        if self.folds < 2 {
            return Err(Error::validation("folds must be at least 2"));
        }
        if self.max_sentences == Some(0) {
            return Err(Error::validation("max_sentences must be positive or `all`"));
        }
        if self.traj_sentences == 0 {
            return Err(Error::validation("traj_sentences must be positive"));
        }
        Ok(())
    }

    /// Every setting, defaults included, in config-file form.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("registry", self.registry.display());
        kv.set("corpus", self.corpus.display());
        kv.set("features", self.features.display());
        kv.set("work_dir", self.work_dir.display());
        kv.set("seed", self.seed);
        kv.set("num_merges", self.num_merges);
        kv.set("embed_size", self.train.embed_size);
        kv.set("hidden_size", self.train.hidden_size);
        kv.set("lr", self.train.lr);
        kv.set("dropout", self.train.dropout);
        kv.set("epochs", self.train.epochs);
        kv.set("batch_size", self.train.batch_size);
        kv.set("clip_norm", self.train.clip_norm);
        kv.set("attention", self.train.attention);
        kv.set("lm_lang_token", self.train.use_lang_token);
        kv.set("knn_k", self.knn.k);
        kv.set("geodesic_weight", self.knn.geodesic_weight);
        kv.set("genetic_weight", self.knn.genetic_weight);
        let methods: Vec<String> = self.predictors.iter().map(|p| p.to_string()).collect();
        kv.set("methods", methods.join(","));
        kv.set("l2", self.l2);
        kv.set("folds", self.folds);
        match self.max_sentences {
            Some(n) => kv.set("max_sentences", n),
            None => kv.set("max_sentences", "all"),
        }
        kv.set("bootstrap_resamples", self.bootstrap_resamples);
        kv.set("traj_feature", &self.traj_feature);
        kv.set("traj_sentences", self.traj_sentences);
        kv.set("synth_languages", self.synth_languages);
        kv.set("synth_sentences", self.synth_sentences);
        kv.set("synth_lexicon", self.synth_lexicon);
        kv
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work(&self) -> PathBuf {
        self.resolve(&self.work_dir)
    }

    fn needs_lm(&self) -> bool {
        self.predictors.contains(&Predictor::Repr(Method::LmVec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Inputs and settings unchanged since the last run.
    Skipped,
}

/// Exclusive handle on a work directory; the lock file is removed on drop.
#[derive(Debug)]
struct WorkLock {
    path: PathBuf,
}

impl WorkLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Runtime(format!(
                "work directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    work: PathBuf,
    _lock: WorkLock,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// An input file and the stage that produces it (`None` for user-supplied files).
struct Input {
    name: &'static str,
    path: PathBuf,
    producer: Option<Stage>,
}

impl Pipeline {
    /// Locks the work directory and records the effective config there.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        let work = config.work();
        let lock = WorkLock::acquire(&work)?;
        write_file(&work.join("config.effective"), config.to_kv().to_text())?;
        Ok(Pipeline {
            config,
            work,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn work_dir(&self) -> &Path {
        &self.work
    }

    pub fn artifact(&self, stage: Stage, name: &str) -> PathBuf {
        self.work.join(stage.name()).join(name)
    }

    /// Stages of the full chain, in order.
    pub fn chain(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|&s| s != Stage::Synth && (s != Stage::TrainLm || self.config.needs_lm()))
            .collect()
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageOutcome)>> {
        self.chain().into_iter().map(|s| self.run_stage(s).map(|o| (s, o))).collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.inputs(stage);
        let outputs = self.outputs(stage);
        for input in &inputs {
            if !input.path.exists() {
                return Err(match input.producer {
                    Some(p) => Error::MissingArtifact {
                        path: input.path.clone(),
                        stage: p.name(),
                    },
                    None => Error::validation(format!("input file {} does not exist", input.path.display())),
                });
            }
        }
        let mut manifest = KeyValues::new();
        manifest.set("stage", stage);
        manifest.set("tool_version", TOOL_VERSION);
        manifest.set("seed", self.config.seed);
        let effective = self.config.to_kv();
        for key in stage.config_keys() {
            manifest.set(&format!("config.{key}"), effective.get(key).unwrap_or(""));
        }
        for input in &inputs {
            manifest.set(&format!("input.{}", input.name), sha256_file(&input.path)?);
        }
        let manifest_path = self.artifact(stage, "manifest.txt");
        if self.is_current(&manifest, &manifest_path, &outputs)? {
            return Ok(StageOutcome::Skipped);
        }
        match stage {
            Stage::Synth => self.synth()?,
            Stage::Ingest => self.ingest()?,
            Stage::BpeLearn => self.bpe_learn()?,
            Stage::TrainLm => self.train_lm()?,
            Stage::TrainNmt => self.train_nmt()?,
            Stage::Extract => self.extract()?,
            Stage::Baseline => self.baseline()?,
            Stage::Predict => self.predict()?,
            Stage::Report => self.report()?,
            Stage::Bootstrap => self.bootstrap()?,
            Stage::Traj => self.traj()?,
        }
        for (name, path) in &outputs {
            manifest.set(&format!("output.{name}"), sha256_file(path)?);
        }
        write_file(&manifest_path, manifest.to_text())?;
        Ok(StageOutcome::Ran)
    }

    fn is_current(&self, fresh: &KeyValues, manifest_path: &Path, outputs: &[(&'static str, PathBuf)]) -> Result<bool> {
        if !manifest_path.exists() {
            return Ok(false);
        }
        let old = KeyValues::parse(&read_to_string(manifest_path)?, &manifest_path.display().to_string())?;
        let mut old_inputs = KeyValues::new();
        for k in old.keys().filter(|k| !k.starts_with("output.")) {
            old_inputs.set(k, old.get(k).expect("listed key"));
        }
        if &old_inputs != fresh {
            return Ok(false);
        }
        for (name, path) in outputs {
            let recorded = old.get(&format!("output.{name}"));
            if !path.exists() || recorded != Some(sha256_file(path)?.as_str()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn inputs(&self, stage: Stage) -> Vec<Input> {
        let user = |name, p: &Path| Input {
            name,
            path: self.config.resolve(p),
            producer: None,
        };
        let art = |name, st: Stage, file: &str| Input {
            name,
            path: self.artifact(st, file),
            producer: Some(st),
        };
        match stage {
            Stage::Synth => vec![],
            Stage::Ingest => vec![
                user("registry", &self.config.registry),
                user("corpus", &self.config.corpus),
                user("features", &self.config.features),
            ],
            Stage::BpeLearn => vec![art("registry", Stage::Ingest, "registry.tsv"), art("corpus", Stage::Ingest, "corpus.txt")],
            Stage::TrainLm | Stage::TrainNmt => vec![
                art("registry", Stage::Ingest, "registry.tsv"),
                art("corpus", Stage::Ingest, "corpus.txt"),
                art("merges", Stage::BpeLearn, "merges.txt"),
                art("vocab", Stage::BpeLearn, "vocab.tsv"),
            ],
            Stage::Extract => {
                let mut v = vec![
                    art("registry", Stage::Ingest, "registry.tsv"),
                    art("corpus", Stage::Ingest, "corpus.txt"),
                    art("merges", Stage::BpeLearn, "merges.txt"),
                    art("vocab", Stage::BpeLearn, "vocab.tsv"),
                    art("nmt", Stage::TrainNmt, "model.ckpt"),
                ];
                if self.config.needs_lm() {
                    v.push(art("lm", Stage::TrainLm, "model.ckpt"));
                }
                v
            }
            Stage::Baseline => vec![art("registry", Stage::Ingest, "registry.tsv"), art("features", Stage::Ingest, "features.csv")],
            Stage::Predict => vec![
                art("features", Stage::Ingest, "features.csv"),
                art("vectors", Stage::Extract, "vectors.tsv"),
                art("knn", Stage::Baseline, "knn.tsv"),
            ],
            Stage::Report | Stage::Bootstrap => vec![art("instances", Stage::Predict, "instances.tsv")],
            Stage::Traj => vec![
                art("registry", Stage::Ingest, "registry.tsv"),
                art("corpus", Stage::Ingest, "corpus.txt"),
                art("features", Stage::Ingest, "features.csv"),
                art("merges", Stage::BpeLearn, "merges.txt"),
                art("vocab", Stage::BpeLearn, "vocab.tsv"),
                art("nmt", Stage::TrainNmt, "model.ckpt"),
                art("vectors", Stage::Extract, "vectors.tsv"),
            ],
        }
    }

    fn outputs(&self, stage: Stage) -> Vec<(&'static str, PathBuf)> {
        let a = |name: &'static str| (name, self.artifact(stage, name));
        match stage {
            Stage::Synth => vec![
                ("registry", self.config.resolve(&self.config.registry)),
                ("corpus", self.config.resolve(&self.config.corpus)),
                ("features", self.config.resolve(&self.config.features)),
            ],
            Stage::Ingest => vec![a("registry.tsv"), a("corpus.txt"), a("features.csv"), a("stats.tsv")],
            Stage::BpeLearn => vec![a("merges.txt"), a("vocab.tsv")],
            Stage::TrainLm | Stage::TrainNmt => vec![a("model.ckpt"), a("model.txt")],
            Stage::Extract => vec![a("vectors.tsv"), a("clusters.nwk")],
            Stage::Baseline => vec![a("knn.tsv"), a("distances.tsv")],
            Stage::Predict => vec![a("instances.tsv"), a("folds.tsv")],
            Stage::Report => vec![a("table1.tsv"), a("table1.md"), a("gains.md")],
            Stage::Bootstrap => vec![a("bootstrap.tsv")],
            Stage::Traj => vec![a("trajectory.csv"), a("node.txt")],
        }
    }

    fn synth(&self) -> Result<()> {
        let c = &self.config;
        let suite = generate_suite_with(c.synth_languages, c.synth_sentences, c.synth_lexicon, c.seed)?;
        write_file(&c.resolve(&c.registry), suite.registry.to_tsv())?;
        write_file(&c.resolve(&c.corpus), suite.corpus.to_text())?;
        write_file(&c.resolve(&c.features), suite.features.to_csv())
    }

    fn ingest(&self) -> Result<()> {
        let c = &self.config;
        let registry = load_registry(&c.resolve(&c.registry))?;
        let corpus = load_parallel(&c.resolve(&c.corpus), &registry)?;
        let features = load_features(&c.resolve(&c.features), &registry)?;
        let mut stats = String::from("kind\tname\tcount\n");
        for (lang, n) in corpus.counts() {
            stats.push_str(&format!("sentences\t{lang}\t{n}\n"));
        }
        for (cat, n) in features.category_counts() {
            stats.push_str(&format!("features\t{cat}\t{n}\n"));
        }
        write_file(&self.artifact(Stage::Ingest, "registry.tsv"), registry.to_tsv())?;
        write_file(&self.artifact(Stage::Ingest, "corpus.txt"), corpus.to_text())?;
        write_file(&self.artifact(Stage::Ingest, "features.csv"), features.to_csv())?;
        write_file(&self.artifact(Stage::Ingest, "stats.tsv"), stats)
    }

    fn registry(&self) -> Result<Registry> {
        load_registry(&self.artifact(Stage::Ingest, "registry.tsv"))
    }

    fn corpus(&self, registry: &Registry) -> Result<CorpusStore> {
        load_parallel(&self.artifact(Stage::Ingest, "corpus.txt"), registry)
    }

    fn features(&self, registry: &Registry) -> Result<FeatureMatrix> {
        load_features(&self.artifact(Stage::Ingest, "features.csv"), registry)
    }

    fn bpe_learn(&self) -> Result<()> {
        let registry = self.registry()?;
        let corpus = self.corpus(&registry)?;
        let merges = learn_bpe(&corpus, self.config.num_merges)?;
        let vocab = build_vocab(&corpus, &merges, &registry);
        write_file(&self.artifact(Stage::BpeLearn, "merges.txt"), merges.to_text())?;
        write_file(&self.artifact(Stage::BpeLearn, "vocab.tsv"), vocab.to_text())
    }

    fn encoded(&self) -> Result<(Registry, SubwordVocab, Vec<EncodedPair>)> {
        let registry = self.registry()?;
        let corpus = self.corpus(&registry)?;
        let merges = MergeTable::load(&self.artifact(Stage::BpeLearn, "merges.txt"))?;
        let vocab = SubwordVocab::load(&self.artifact(Stage::BpeLearn, "vocab.tsv"))?;
        let pairs = encode_corpus(&corpus, &merges, &vocab);
        Ok((registry, vocab, pairs))
    }

    fn model_manifest(&self, stage: Stage, loss_curve: &[f64]) -> Result<KeyValues> {
        let t = &self.config.train;
        let mut kv = KeyValues::new();
        kv.set("vocab_sha256", sha256_file(&self.artifact(Stage::BpeLearn, "vocab.tsv"))?);
        kv.set("embed_size", t.embed_size);
        kv.set("hidden_size", t.hidden_size);
        kv.set("lr", t.lr);
        kv.set("dropout", t.dropout);
        kv.set("batch_size", t.batch_size);
        kv.set("clip_norm", t.clip_norm);
        kv.set("seed", t.seed);
        kv.set("epochs", loss_curve.len());
        match stage {
            Stage::TrainLm => kv.set("lm_lang_token", t.use_lang_token),
            _ => kv.set("attention", t.attention),
        }
        let curve: Vec<String> = loss_curve.iter().map(|x| x.to_string()).collect();
        kv.set("loss_curve", curve.join(" "));
        Ok(kv)
    }

    fn train_lm(&self) -> Result<()> {
        let (_, vocab, pairs) = self.encoded()?;
        let ex = examples(&pairs, &vocab)?;
        let trained = train_lm::<f64>(&ex, vocab.len(), &self.config.train)?;
        trained.model.save(&self.artifact(Stage::TrainLm, "model.ckpt"), self.config.seed)?;
        let kv = self.model_manifest(Stage::TrainLm, &trained.loss_curve)?;
        write_file(&self.artifact(Stage::TrainLm, "model.txt"), kv.to_text())
    }

    fn train_nmt(&self) -> Result<()> {
        let (_, vocab, pairs) = self.encoded()?;
        let ex = examples(&pairs, &vocab)?;
        let trained = train_nmt::<f64>(&ex, vocab.len(), &self.config.train)?;
        trained.model.save(&self.artifact(Stage::TrainNmt, "model.ckpt"), self.config.seed)?;
        let kv = self.model_manifest(Stage::TrainNmt, &trained.loss_curve)?;
        write_file(&self.artifact(Stage::TrainNmt, "model.txt"), kv.to_text())
    }

    fn selection(&self) -> Selection {
        match self.config.max_sentences {
            Some(max) => Selection::Cap {
                max,
                seed: self.config.seed,
            },
            None => Selection::All,
        }
    }

    fn extract(&self) -> Result<()> {
        let (registry, vocab, pairs) = self.encoded()?;
        let nmt = Seq2Seq::<f64>::load(&self.artifact(Stage::TrainNmt, "model.ckpt"))?;
        let lm = if self.config.needs_lm() {
            Some(RnnLm::<f64>::load(&self.artifact(Stage::TrainLm, "model.ckpt"), self.config.train.use_lang_token)?)
        } else {
            None
        };
        let wants = |m: Method| self.config.predictors.contains(&Predictor::Repr(m));
        let languages: Vec<&str> = registry.codes().filter(|c| pairs.iter().any(|p| p.lang == *c)).collect();
        let selection = self.selection();
        let mut store = VectorStore::new();
        for lang in &languages {
            if let Some(lm) = &lm {
                store.push(extract_lmvec(lm, &vocab, lang)?)?;
            }
            let mtvec = extract_mtvec(&nmt, &vocab, lang)?;
            let mtcell = extract_mtcell(&nmt, &vocab, &pairs, lang, &selection, CellOptions::default())?;
            if wants(Method::MtBoth) {
                store.push(combine_mtboth(&mtvec, &mtcell)?)?;
            }
            store.push(mtvec)?;
            store.push(mtcell)?;
        }
        store.save(&self.artifact(Stage::Extract, "vectors.tsv"))?;
        let method = if wants(Method::MtBoth) { Method::MtBoth } else { Method::MtCell };
        let vecs: Vec<_> = store.of_method(method).cloned().collect();
        let newick = if vecs.len() >= 2 { cluster_vectors(&vecs)?.to_newick() } else { String::from(";") };
        write_file(&self.artifact(Stage::Extract, "clusters.nwk"), newick + "\n")
    }

    fn baseline(&self) -> Result<()> {
        let registry = self.registry()?;
        let features = self.features(&registry)?;
        let ctx = DistanceContext::new(&registry, &self.config.knn)?;
        let table = KnnTable::build(&features, &ctx, &self.config.knn)?;
        write_file(&self.artifact(Stage::Baseline, "knn.tsv"), knn_to_text(&table))?;
        write_file(&self.artifact(Stage::Baseline, "distances.tsv"), ctx.dump())
    }

    fn predict(&self) -> Result<()> {
        let registry = self.registry()?;
        let features = self.features(&registry)?;
        let vectors = VectorStore::load(&self.artifact(Stage::Extract, "vectors.tsv"))?;
        let knn_path = self.artifact(Stage::Baseline, "knn.tsv");
        let knn = knn_from_text(&read_to_string(&knn_path)?, &knn_path.display().to_string())?;
        let folds = make_folds(features.languages(), self.config.folds, self.config.seed)?;
        let cfg = EvalConfig {
            predictors: self.config.predictors.clone(),
            aux: vec![false, true],
            l2: self.config.l2,
        };
        let report = evaluate(&features, &vectors, Some(&knn), &folds, &cfg)?;
        write_file(&self.artifact(Stage::Predict, "instances.tsv"), report.to_instances_tsv())?;
        write_file(&self.artifact(Stage::Predict, "folds.tsv"), folds_to_text(&folds, features.languages()))
    }

    fn load_report(&self) -> Result<EvalReport> {
        let path = self.artifact(Stage::Predict, "instances.tsv");
        EvalReport::from_instances_tsv(&read_to_string(&path)?, &path.display().to_string())
    }

    fn report(&self) -> Result<()> {
        let report = self.load_report()?;
        write_file(&self.artifact(Stage::Report, "table1.tsv"), render_tsv(&report.cells))?;
        write_file(&self.artifact(Stage::Report, "table1.md"), render_table1(&report.cells))?;
        let none = report.scores(Predictor::None, false);
        let both = report.scores(Predictor::Repr(Method::MtBoth), false);
        let mut rows = Vec::new();
        for cat in Category::ALL {
            rows.extend(top_gains(&none, &both, cat, 5));
        }
        write_file(&self.artifact(Stage::Report, "gains.md"), render_gains(&rows, "None", "MT"))
    }

    fn bootstrap(&self) -> Result<()> {
        let report = self.load_report()?;
        let a = (Predictor::None, true);
        let b = (Predictor::Repr(Method::MtBoth), true);
        let mut out = format!(
            "# {} vs {}\ncategory\tgain\tp_value\tresamples\n",
            describe_condition(a.0, a.1),
            describe_condition(b.0, b.1)
        );
        for cat in Category::ALL {
            if report.feature_results(a.0, a.1).all(|f| f.category != cat) {
                continue;
            }
            let (pa, pb, gold) = paired_instances(&report, a, b, Some(cat))?;
            let r = paired_bootstrap(&pa, &pb, &gold, self.config.bootstrap_resamples, self.config.seed)?;
            out.push_str(&format!("{cat}\t{:.6}\t{:.6}\t{}\n", r.gain, r.p_value, r.resamples));
        }
        write_file(&self.artifact(Stage::Bootstrap, "bootstrap.tsv"), out)
    }

    fn traj(&self) -> Result<()> {
        let (registry, vocab, pairs) = self.encoded()?;
        let features = self.features(&registry)?;
        let vectors = VectorStore::load(&self.artifact(Stage::Extract, "vectors.tsv"))?;
        let nmt = Seq2Seq::<f64>::load(&self.artifact(Stage::TrainNmt, "model.ckpt"))?;
        let f = features
            .feature_index(&self.config.traj_feature)
            .ok_or_else(|| Error::validation(format!("feature `{}` not in the feature matrix", self.config.traj_feature)))?;
        let mut langs = Vec::new();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (l, lang) in features.languages().iter().enumerate() {
            if let Some(y) = features.get(l, f) {
                let v = vectors
                    .get(lang, Method::MtCell)
                    .ok_or_else(|| Error::validation(format!("no MTCell vector for `{lang}`")))?;
                langs.push(lang.clone());
                rows.push(v.values.clone());
                labels.push(y);
            }
        }
        let scaler = Standardizer::fit(&rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
        let model = train_logreg(&x, &labels, self.config.l2, &self.config.traj_feature)?;
        let sentences: Vec<(String, Selection)> = langs
            .iter()
            .map(|l| {
                let n = pairs.iter().filter(|p| &p.lang == l).count().min(self.config.traj_sentences);
                (l.clone(), Selection::Indices((0..n).collect()))
            })
            .collect();
        let (node, points) = export_trajectory(&nmt, &vocab, &pairs, &model, &sentences)?;
        write_file(&self.artifact(Stage::Traj, "trajectory.csv"), trajectory_csv(&points))?;
        let mut kv = KeyValues::new();
        kv.set("feature", &self.config.traj_feature);
        kv.set("node", node);
        kv.set("weight", model.weights[node]);
        write_file(&self.artifact(Stage::Traj, "node.txt"), kv.to_text())
    }
}

fn knn_to_text(table: &KnnTable) -> String {
    let mut out = String::from("lang\tvalues\n");
    for (lang, v) in table.rows() {
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!("{lang}\t{}\n", vals.join(" ")));
    }
    out
}

fn knn_from_text(text: &str, origin: &str) -> Result<KnnTable> {
    let mut rows = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (lang, vals) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, n + 1, "expected `lang<TAB>values`"))?;
        let v = vals
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|x| x.parse::<f64>().map_err(|_| Error::parse(origin, n + 1, format!("bad value `{x}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.insert(lang.to_string(), v);
    }
    Ok(KnnTable::from_rows(rows))
}

fn folds_to_text(folds: &FoldAssignment, languages: &[String]) -> String {
    let mut out = format!("# seed {} hash {}\nlang\tfold\n", folds.seed, folds.hash());
    for l in languages {
        out.push_str(&format!("{l}\t{}\n", folds.fold_of(l).expect("every language has a fold")));
    }
    out
}

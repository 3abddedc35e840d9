use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::logreg::{train_logreg, LogRegModel, Standardizer};
use crate::error::{Error, Result};
use crate::repr::{Method, VectorStore};
use crate::typology::{knn_feature_vector, majority_label, Category, DistanceContext, FeatureMatrix, KnnConfig};

/// Language-to-fold map built by a seeded shuffle and round-robin dealing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    folds: BTreeMap<String, usize>,
}

pub fn make_folds(languages: &[String], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds == 0 {
        return Err(Error::validation("need at least one fold"));
    }
    if languages.len() < n_folds {
        return Err(Error::validation(format!("{} languages cannot fill {n_folds} folds", languages.len())));
    }
    let mut order: Vec<&String> = languages.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = BTreeMap::new();
    for (i, lang) in order.into_iter().enumerate() {
        if folds.insert(lang.clone(), i % n_folds).is_some() {
            return Err(Error::validation(format!("duplicate language `{lang}`")));
        }
    }
    Ok(FoldAssignment { n_folds, seed, folds })
}

impl FoldAssignment {
    pub fn fold_of(&self, lang: &str) -> Option<usize> {
        self.folds.get(lang).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_folds];
        for &f in self.folds.values() {
            s[f] += 1;
        }
        s
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(l, _)| l.as_str()).collect()
    }

    /// SHA-256 over the sorted `lang<TAB>fold` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (l, f) in &self.folds {
            h.update(format!("{l}\t{f}\n"));
        }
        hex::encode(h.finalize())
    }
}

/// Source of classifier inputs: nothing, or a representation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predictor {
    None,
    Repr(Method),
}

impl Predictor {
    pub const TABLE_ROWS: [Predictor; 5] = [
        Predictor::None,
        Predictor::Repr(Method::LmVec),
        Predictor::Repr(Method::MtVec),
        Predictor::Repr(Method::MtCell),
        Predictor::Repr(Method::MtBoth),
    ];
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::None => f.write_str("None"),
            Predictor::Repr(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "None" {
            Ok(Predictor::None)
        } else {
            s.parse().map(Predictor::Repr)
        }
    }
}

/// Neighbour-averaged feature vectors of every matrix language.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    rows: BTreeMap<String, Vec<f64>>,
}

impl KnnTable {
    pub fn build(matrix: &FeatureMatrix, ctx: &DistanceContext, config: &KnnConfig) -> Result<Self> {
        let rows = matrix
            .languages()
            .par_iter()
            .map(|l| knn_feature_vector(l, matrix, ctx, config).map(|v| (l.clone(), v)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(KnnTable { rows })
    }

    pub fn from_rows(rows: BTreeMap<String, Vec<f64>>) -> Self {
        KnnTable { rows }
    }

    pub fn get(&self, lang: &str) -> Option<&[f64]> {
        self.rows.get(lang).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.rows
    }
}

/// Classifier input for one language: the method vector, then the
/// neighbour feature vector when `aux` is on.
pub fn assemble_inputs(lang: &str, predictor: Predictor, aux: bool, vectors: &VectorStore, knn: Option<&KnnTable>) -> Result<Vec<f64>> {
    let mut out = match predictor {
        Predictor::None => Vec::new(),
        Predictor::Repr(m) => vectors
            .get(lang, m)
            .ok_or_else(|| Error::validation(format!("no {m} vector for `{lang}`")))?
            .values
            .clone(),
    };
    if aux {
        let row = knn
            .and_then(|k| k.get(lang))
            .ok_or_else(|| Error::validation(format!("no neighbour features for `{lang}`")))?;
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub lang: String,
    pub gold: bool,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureResult {
    pub predictor: Predictor,
    pub aux: bool,
    pub feature: String,
    pub category: Category,
    /// Percent correct over all held-out labeled languages.
    pub accuracy: f64,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub predictor: Predictor,
    pub category: Category,
    pub aux: bool,
    /// Macro-average of per-feature accuracies, in percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fold_hash: String,
    pub cells: Vec<CellResult>,
    pub features: Vec<FeatureResult>,
    /// Features skipped for having fewer than two labeled languages.
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, predictor: Predictor, category: Category, aux: bool) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.predictor == predictor && c.category == category && c.aux == aux)
            .map(|c| c.accuracy)
    }

    pub fn feature_results(&self, predictor: Predictor, aux: bool) -> impl Iterator<Item = &FeatureResult> {
        self.features.iter().filter(move |f| f.predictor == predictor && f.aux == aux)
    }

    pub fn feature(&self, predictor: Predictor, aux: bool, name: &str) -> Option<&FeatureResult> {
        self.feature_results(predictor, aux).find(|f| f.feature == name)
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub predictors: Vec<Predictor>,
    pub aux: Vec<bool>,
    pub l2: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            predictors: Predictor::TABLE_ROWS.to_vec(),
            aux: vec![false, true],
            l2: 1.0,
        }
    }
}

/// Cross-validated accuracy for every `(predictor, aux)` condition.
///
/// `None -Aux` predicts each feature's overall majority value, so its accuracy
/// is the chance rate. `None +Aux` thresholds the neighbour average of the
/// feature itself at 0.5. Every other condition trains one logistic regression
/// per feature and fold on standardized inputs.
pub fn evaluate(
    matrix: &FeatureMatrix,
    vectors: &VectorStore,
    knn: Option<&KnnTable>,
    folds: &FoldAssignment,
    config: &EvalConfig,
) -> Result<EvalReport> {
    for lang in matrix.languages() {
        if folds.fold_of(lang).is_none() {
            return Err(Error::validation(format!("language `{lang}` has no fold")));
        }
    }
    let predictable: Vec<usize> = (0..matrix.features().len()).filter(|&f| matrix.is_predictable(f)).collect();
    let excluded = (0..matrix.features().len())
        .filter(|f| !predictable.contains(f))
        .map(|f| matrix.features()[f].name.clone())
        .collect();

    // Inputs per condition, checked up front so failures surface before training.
    let conditions: Vec<(Predictor, bool)> = config
        .predictors
        .iter()
        .flat_map(|&p| config.aux.iter().map(move |&a| (p, a)))
        .collect();
    let mut inputs: BTreeMap<(Predictor, bool), Vec<Vec<f64>>> = BTreeMap::new();
    for &(p, a) in &conditions {
        let rows = matrix
            .languages()
            .iter()
            .map(|l| assemble_inputs(l, p, a, vectors, knn))
            .collect::<Result<Vec<_>>>()?;
        inputs.insert((p, a), rows);
    }

    let jobs: Vec<((Predictor, bool), usize)> = conditions.iter().flat_map(|&c| predictable.iter().map(move |&f| (c, f))).collect();
    let features = jobs
        .par_iter()
        .map(|&((p, a), f)| evaluate_feature(matrix, &inputs[&(p, a)], folds, p, a, f, config.l2))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &(p, a) in &conditions {
        for cat in Category::ALL {
            let accs: Vec<f64> = features
                .iter()
                .filter(|r| r.predictor == p && r.aux == a && r.category == cat)
                .map(|r| r.accuracy)
                .collect();
            if !accs.is_empty() {
                cells.push(CellResult {
                    predictor: p,
                    category: cat,
                    aux: a,
                    accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
                });
            }
        }
    }
    Ok(EvalReport {
        fold_hash: folds.hash(),
        cells,
        features,
        excluded,
    })
}

fn evaluate_feature(
    matrix: &FeatureMatrix,
    rows: &[Vec<f64>],
    folds: &FoldAssignment,
    predictor: Predictor,
    aux: bool,
    feature: usize,
    l2: f64,
) -> Result<FeatureResult> {
    let spec = &matrix.features()[feature];
    let labeled: Vec<usize> = (0..matrix.languages().len()).filter(|&l| matrix.get(l, feature).is_some()).collect();
    let overall_majority = majority_label(feature, matrix, &labeled)?;
    let langs = matrix.languages();
    let mut predicted: BTreeMap<usize, bool> = BTreeMap::new();
    for fold in 0..folds.n_folds {
        let (test, train): (Vec<usize>, Vec<usize>) = labeled.iter().partition(|&&l| folds.fold_of(&langs[l]) == Some(fold));
        if test.is_empty() {
            continue;
        }
        match (predictor, aux) {
            (Predictor::None, false) => {
                for &l in &test {
                    predicted.insert(l, overall_majority);
                }
            }
            (Predictor::None, true) => {
                let fold_majority = if train.is_empty() { overall_majority } else { majority_label(feature, matrix, &train)? };
                for &l in &test {
                    // The neighbour block is the whole input for `None +Aux`.
                    let v = rows[l][feature];
                    predicted.insert(l, if v == 0.5 { fold_majority } else { v > 0.5 });
                }
            }
            _ => {
                if train.is_empty() {
                    return Err(Error::validation(format!("fold {fold} leaves no training languages for `{}`", spec.name)));
                }
                let scaler = Standardizer::fit(&train.iter().map(|&l| rows[l].clone()).collect::<Vec<_>>());
                let x: Vec<Vec<f64>> = train.iter().map(|&l| scaler.apply(&rows[l])).collect();
                let y: Vec<bool> = train.iter().map(|&l| matrix.get(l, feature).expect("labeled")).collect();
                let model: LogRegModel<f64> = train_logreg(&x, &y, l2, &spec.name)?;
                let tie = majority_label(feature, matrix, &train)?;
                for &l in &test {
                    predicted.insert(l, model.predict(&scaler.apply(&rows[l]), tie));
                }
            }
        }
    }
    let instances: Vec<Instance> = predicted
        .into_iter()
        .map(|(l, p)| Instance {
            lang: langs[l].clone(),
            gold: matrix.get(l, feature).expect("labeled"),
            predicted: p,
        })
        .collect();
    let correct = instances.iter().filter(|i| i.gold == i.predicted).count();
    Ok(FeatureResult {
        predictor,
        aux,
        feature: spec.name.clone(),
        category: spec.category,
        accuracy: 100.0 * correct as f64 / instances.len() as f64,
        instances,
    })
}

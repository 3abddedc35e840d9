//! Per-language vectors extracted from trained models, their file format, and
//! average-linkage clustering.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bpe::{EncodedPair, SubwordVocab};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::nn::{EncoderStates, RnnLm, Seq2Seq, SequenceModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    LmVec,
    MtVec,
    MtCell,
    MtBoth,
    MtCellFinal,
    MtHiddenMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::LmVec,
        Method::MtVec,
        Method::MtCell,
        Method::MtBoth,
        Method::MtCellFinal,
        Method::MtHiddenMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LmVec => "LMVec",
            Method::MtVec => "MTVec",
            Method::MtCell => "MTCell",
            Method::MtBoth => "MTBoth",
            Method::MtCellFinal => "MTCellFinal",
            Method::MtHiddenMean => "MTHiddenMean",
        }
    }

    /// Embedding methods use no sentences.
    pub fn is_embedding(self) -> bool {
        matches!(self, Method::LmVec | Method::MtVec)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown representation method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangVector {
    pub lang: String,
    pub method: Method,
    pub values: Vec<f64>,
    pub n_sentences: usize,
}

impl LangVector {
    pub fn new(lang: impl Into<String>, method: Method, values: Vec<f64>, n_sentences: usize) -> Result<Self> {
        let lang = lang.into();
        if values.is_empty() {
            return Err(Error::validation(format!("empty {method} vector for `{lang}`")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{method} vector for `{lang}` at index {i}")));
        }
        Ok(LangVector {
            lang,
            method,
            values,
            n_sentences,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn extract_lmvec<T: Scalar>(lm: &RnnLm<T>, vocab: &SubwordVocab, lang: &str) -> Result<LangVector> {
    let id = vocab.language_id(lang)?;
    LangVector::new(lang, Method::LmVec, to_f64(&lm.embedding_row(id)?), 0)
}

pub fn extract_mtvec<T: Scalar>(nmt: &Seq2Seq<T>, vocab: &SubwordVocab, lang: &str) -> Result<LangVector> {
    let id = vocab.language_id(lang)?;
    LangVector::new(lang, Method::MtVec, to_f64(&nmt.embedding_row(id)?), 0)
}

/// Which of a language's sentences feed a state-based extractor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    All,
    /// Seeded uniform subsample of at most `max` sentences, kept in corpus order.
    Cap { max: usize, seed: u64 },
    /// Positions within the language's sentence list.
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellOptions {
    /// Count the language-token and EOS steps.
    pub include_boundary: bool,
    /// Average per sentence first, then across sentences.
    pub sentence_equal: bool,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            include_boundary: true,
            sentence_equal: false,
        }
    }
}

/// The `(position, pair)` list of `lang`'s sentences after selection.
pub fn select_sentences<'a>(pairs: &'a [EncodedPair], lang: &str, selection: &Selection) -> Result<Vec<(usize, &'a EncodedPair)>> {
    let own: Vec<&EncodedPair> = pairs.iter().filter(|p| p.lang == lang).collect();
    if own.is_empty() {
        return Err(Error::validation(format!("language `{lang}` has no sentences")));
    }
    let picked: Vec<usize> = match selection {
        Selection::All => (0..own.len()).collect(),
        Selection::Cap { max, seed } => {
            if *max == 0 {
                return Err(Error::validation("sentence cap must be positive"));
            }
            if *max >= own.len() {
                (0..own.len()).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut idx = sample(&mut rng, own.len(), *max).into_vec();
                idx.sort_unstable();
                idx
            }
        }
        Selection::Indices(idx) => {
            if idx.is_empty() {
                return Err(Error::validation(format!("no sentences selected for `{lang}`")));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= own.len()) {
                return Err(Error::validation(format!("sentence {bad} out of range for `{lang}` ({} sentences)", own.len())));
            }
            idx.clone()
        }
    };
    Ok(picked.into_iter().map(|i| (i, own[i])).collect())
}

/// Encoder states of each selected sentence, in selection order.
pub fn encode_sentences<T: Scalar>(
    nmt: &Seq2Seq<T>,
    vocab: &SubwordVocab,
    pairs: &[EncodedPair],
    lang: &str,
    selection: &Selection,
) -> Result<Vec<(usize, EncoderStates<T>)>> {
    let lang_id = vocab.language_id(lang)?;
    let chosen = select_sentences(pairs, lang, selection)?;
    chosen
        .par_iter()
        .map(|&(i, p)| nmt.encode(lang_id, &p.source).map(|s| (i, s)))
        .collect()
}

fn mean_of_steps<T: Scalar>(runs: &[&[Vec<T>]], sentence_equal: bool, dim: usize) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    if sentence_equal {
        for steps in runs {
            let mut s = vec![0.0; dim];
            for v in steps.iter() {
                for (a, b) in s.iter_mut().zip(v) {
                    *a += b.as_f64();
                }
            }
            for (a, b) in total.iter_mut().zip(&s) {
                *a += b / steps.len() as f64;
            }
        }
        total.iter_mut().for_each(|a| *a /= runs.len() as f64);
    } else {
        let mut count = 0usize;
        for steps in runs {
            for v in steps.iter() {
                for (a, b) in total.iter_mut().zip(v) {
                    *a += b.as_f64();
                }
            }
            count += steps.len();
        }
        total.iter_mut().for_each(|a| *a /= count as f64);
    }
    total
}

fn step_window<T>(steps: &[Vec<T>], include_boundary: bool) -> &[Vec<T>] {
    if include_boundary || steps.len() <= 2 {
        steps
    } else {
        &steps[1..steps.len() - 1]
    }
}

/// Mean encoder cell state over every time step of every selected sentence.
pub fn extract_mtcell<T: Scalar>(
    nmt: &Seq2Seq<T>,
    vocab: &SubwordVocab,
    pairs: &[EncodedPair],
    lang: &str,
    selection: &Selection,
    options: CellOptions,
) -> Result<LangVector> {
    let states = encode_sentences(nmt, vocab, pairs, lang, selection)?;
    let runs: Vec<&[Vec<T>]> = states.iter().map(|(_, s)| step_window(&s.cell, options.include_boundary)).collect();
    let values = mean_of_steps(&runs, options.sentence_equal, nmt.dims().hidden_size);
    LangVector::new(lang, Method::MtCell, values, states.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Mean of each sentence's final cell state.
    FinalCell,
    /// Mean hidden state over all steps.
    MeanHidden,
}

pub fn extract_variant<T: Scalar>(
    nmt: &Seq2Seq<T>,
    vocab: &SubwordVocab,
    pairs: &[EncodedPair],
    lang: &str,
    kind: Variant,
    selection: &Selection,
) -> Result<LangVector> {
    let states = encode_sentences(nmt, vocab, pairs, lang, selection)?;
    let dim = nmt.dims().hidden_size;
    let (method, values) = match kind {
        Variant::FinalCell => {
            let finals: Vec<&[Vec<T>]> = states.iter().map(|(_, s)| &s.cell[s.cell.len() - 1..]).collect();
            (Method::MtCellFinal, mean_of_steps(&finals, false, dim))
        }
        Variant::MeanHidden => {
            let runs: Vec<&[Vec<T>]> = states.iter().map(|(_, s)| s.hidden.as_slice()).collect();
            (Method::MtHiddenMean, mean_of_steps(&runs, false, dim))
        }
    };
    LangVector::new(lang, method, values, states.len())
}

pub fn combine_mtboth(mtvec: &LangVector, mtcell: &LangVector) -> Result<LangVector> {
    if mtvec.lang != mtcell.lang {
        return Err(Error::validation(format!("cannot combine vectors of `{}` and `{}`", mtvec.lang, mtcell.lang)));
    }
    if mtvec.method != Method::MtVec || mtcell.method != Method::MtCell {
        return Err(Error::validation(format!("MTBoth needs MTVec and MTCell, got {} and {}", mtvec.method, mtcell.method)));
    }
    let mut values = mtvec.values.clone();
    values.extend_from_slice(&mtcell.values);
    LangVector::new(mtvec.lang.clone(), Method::MtBoth, values, mtcell.n_sentences)
}

/// Ordered collection of language vectors with a plain-text file form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    vectors: Vec<LangVector>,
}

pub const VECTOR_HEADER: &str = "lang\tmethod\tdim\tn_sentences";

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: LangVector) -> Result<()> {
        if self.get(&v.lang, v.method).is_some() {
            return Err(Error::validation(format!("duplicate {} vector for `{}`", v.method, v.lang)));
        }
        self.vectors.push(v);
        Ok(())
    }

    pub fn get(&self, lang: &str, method: Method) -> Option<&LangVector> {
        self.vectors.iter().find(|v| v.lang == lang && v.method == method)
    }

    pub fn vectors(&self) -> &[LangVector] {
        &self.vectors
    }

    pub fn of_method(&self, method: Method) -> impl Iterator<Item = &LangVector> {
        self.vectors.iter().filter(move |v| v.method == method)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// One line per vector: the four header fields, then the values separated by spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::from(VECTOR_HEADER);
        out.push('\n');
        for v in &self.vectors {
            let values: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", v.lang, v.method, v.dim(), v.n_sentences, values.join(" ")));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == VECTOR_HEADER => {}
            _ => return Err(Error::parse(origin, 1, "missing vector header")),
        }
        let mut store = VectorStore::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::parse(origin, n + 1, m);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            let method: Method = f[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let dim: usize = f[2].parse().map_err(|_| bad(format!("bad dim `{}`", f[2])))?;
            let n_sentences: usize = f[3].parse().map_err(|_| bad(format!("bad sentence count `{}`", f[3])))?;
            let values = f[4]
                .split(' ')
                .map(|x| x.parse::<f64>().map_err(|_| bad(format!("bad value `{x}`"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(bad(format!("dim {dim} but {} values", values.len())));
            }
            let v = LangVector::new(f[0], method, values, n_sentences).map_err(|e| bad(e.to_string()))?;
            store.push(v).map_err(|e| bad(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text())
    }
}

/// Cosine distance; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).max(0.0)
}

/// One agglomeration step. Clusters `0..n` are leaves; step `i` creates cluster `n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub steps: Vec<MergeStep>,
}

impl Dendrogram {
    pub fn leaf_count(&self) -> usize {
        self.labels.len()
    }

    /// Newick string with merge heights as branch annotations.
    pub fn to_newick(&self) -> String {
        fn render(d: &Dendrogram, node: usize, out: &mut String) {
            let n = d.labels.len();
            if node < n {
                out.push_str(&d.labels[node]);
            } else {
                let s = &d.steps[node - n];
                out.push('(');
                render(d, s.left, out);
                out.push(',');
                render(d, s.right, out);
                out.push_str(&format!("):{:.6}", s.distance));
            }
        }
        let mut out = String::new();
        let n = self.labels.len();
        if n == 1 {
            out.push_str(&self.labels[0]);
        } else {
            render(self, n + self.steps.len() - 1, &mut out);
        }
        out.push(';');
        out
    }
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Ties merge the pair with the smallest cluster ids first.
pub fn cluster_vectors(vectors: &[LangVector]) -> Result<Dendrogram> {
    if vectors.len() < 2 {
        return Err(Error::validation("clustering needs at least two vectors"));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::validation(format!("vector for `{}` has dim {}, expected {dim}", v.lang, v.dim())));
    }
    let n = vectors.len();
    // dist[i][j] between active clusters, indexed by slot.
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&vectors[i].values, &vectors[j].values);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut steps = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let (lo, hi) = (id[i].min(id[j]), id[i].max(id[j]));
                let cand = (dist[i][j], lo, hi, i, j);
                let better = match best {
                    None => true,
                    Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (d, lo, hi, i, j) = best.expect("at least two active clusters");
        let merged = size[i] + size[j];
        for k in 0..n {
            if active[k] && k != i && k != j {
                let nd = (dist[i][k] * size[i] as f64 + dist[j][k] * size[j] as f64) / merged as f64;
                dist[i][k] = nd;
                dist[k][i] = nd;
            }
        }
        active[j] = false;
        size[i] = merged;
        id[i] = n + step;
        steps.push(MergeStep {
            left: lo,
            right: hi,
            distance: d,
            size: merged,
        });
    }
    Ok(Dendrogram {
        labels: vectors.iter().map(|v| v.lang.clone()).collect(),
        steps,
    })
}

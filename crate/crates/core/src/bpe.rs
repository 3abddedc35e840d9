//! Joint byte-pair encoding and the shared subword vocabulary.
//!
//! Merges are learned over the characters of each word; the end-of-word
//! marker [`END_OF_WORD`] is attached to the final piece of a word after the
//! merges have been applied, so it never takes part in pair counting.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;
use std::rc::Rc;

use crate::corpus::{language_token, CorpusStore, Registry};
use crate::error::{read_to_string, Error, Result};

pub const END_OF_WORD: &str = "\u{27e8}/w\u{27e9}";

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

/// Ordered merge rules; the rank of a rule is its position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate merge {} {}", pair.0, pair.1)));
            }
        }
        Ok(MergeTable { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(l, r)| format!("{l} {r}\n")).collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_string(), r.to_string())),
                _ => return Err(Error::parse(origin, i + 1, "expected `left right`")),
            }
        }
        MergeTable::new(merges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

/// Frequency of every whitespace token on both sides of the corpus.
pub fn word_counts(corpus: &CorpusStore) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for pair in corpus.pairs() {
        for w in pair.source.iter().chain(&pair.target) {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn learn_bpe(corpus: &CorpusStore, num_merges: usize) -> Result<MergeTable> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot learn BPE from an empty corpus"));
    }
    learn_bpe_from_counts(&word_counts(corpus), num_merges)
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    pair: Reverse<(Rc<str>, Rc<str>)>,
    ids: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count.cmp(&other.count).then_with(|| self.pair.cmp(&other.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Learner {
    symbols: Vec<Rc<str>>,
    symbol_ids: HashMap<Rc<str>, u32>,
    words: Vec<Vec<u32>>,
    freqs: Vec<u64>,
    pair_counts: HashMap<(u32, u32), u64>,
    pair_words: HashMap<(u32, u32), BTreeSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Learner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let rc: Rc<str> = Rc::from(s);
        let id = self.symbols.len() as u32;
        self.symbols.push(rc.clone());
        self.symbol_ids.insert(rc, id);
        id
    }

    fn push(&mut self, pair: (u32, u32)) {
        let count = self.pair_counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            self.heap.push(Candidate {
                count,
                pair: Reverse((self.symbols[pair.0 as usize].clone(), self.symbols[pair.1 as usize].clone())),
                ids: pair,
            });
        }
    }

    fn adjust(&mut self, pair: (u32, u32), delta: i64, word: usize, touched: &mut BTreeSet<(u32, u32)>) {
        let c = self.pair_counts.entry(pair).or_insert(0);
        *c = (*c as i64 + delta) as u64;
        if delta > 0 {
            self.pair_words.entry(pair).or_default().insert(word);
        }
        touched.insert(pair);
    }

    fn pop_best(&mut self) -> Option<(u32, u32, u64)> {
        while let Some(top) = self.heap.pop() {
            let current = self.pair_counts.get(&top.ids).copied().unwrap_or(0);
            if current == top.count {
                return Some((top.ids.0, top.ids.1, current));
            }
        }
        None
    }
}

fn adjacent_pairs(word: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

/// Greedy BPE learning over weighted word types.
///
/// The most frequent adjacent pair is merged at every step; equal counts are
/// resolved by the lexicographically smallest `(left, right)`. Learning stops
/// early once no pair occurs at least twice.
pub fn learn_bpe_from_counts(counts: &BTreeMap<String, u64>, num_merges: usize) -> Result<MergeTable> {
    if num_merges == 0 {
        return Err(Error::validation("num_merges must be positive"));
    }
    let mut learner = Learner {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::new(),
        freqs: Vec::new(),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    let mut buf = [0u8; 4];
    for (word, &freq) in counts {
        let ids: Vec<u32> = word.chars().map(|c| learner.intern(c.encode_utf8(&mut buf))).collect();
        learner.words.push(ids);
        learner.freqs.push(freq);
    }
    for (wi, word) in learner.words.iter().enumerate() {
        for pair in adjacent_pairs(word) {
            *learner.pair_counts.entry(pair).or_insert(0) += learner.freqs[wi];
            learner.pair_words.entry(pair).or_default().insert(wi);
        }
    }
    let initial: Vec<(u32, u32)> = learner.pair_counts.keys().copied().collect();
    for pair in initial {
        learner.push(pair);
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some((left, right, count)) = learner.pop_best() else { break };
        if count < 2 {
            break;
        }
        let merged_str = format!("{}{}", learner.symbols[left as usize], learner.symbols[right as usize]);
        let merged = learner.intern(&merged_str);
        merges.push((learner.symbols[left as usize].to_string(), learner.symbols[right as usize].to_string()));

        let affected: Vec<usize> = learner.pair_words.remove(&(left, right)).unwrap_or_default().into_iter().collect();
        let mut touched = BTreeSet::new();
        for wi in affected {
            let freq = learner.freqs[wi] as i64;
            let old = std::mem::take(&mut learner.words[wi]);
            if !adjacent_pairs(&old).any(|p| p == (left, right)) {
                learner.words[wi] = old;
                continue;
            }
            for pair in adjacent_pairs(&old) {
                learner.adjust(pair, -freq, wi, &mut touched);
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == left && old[i + 1] == right {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for pair in adjacent_pairs(&new) {
                learner.adjust(pair, freq, wi, &mut touched);
            }
            learner.words[wi] = new;
        }
        learner.pair_counts.remove(&(left, right));
        touched.remove(&(left, right));
        for pair in touched {
            learner.push(pair);
        }
    }
    MergeTable::new(merges)
}

/// Splits one word into subword pieces; the final piece carries [`END_OF_WORD`].
pub fn apply_bpe_word(word: &str, merges: &MergeTable) -> Vec<String> {
    let mut pieces: Vec<String> = word.chars().map(String::from).collect();
    if pieces.is_empty() {
        return pieces;
    }
    loop {
        let best = pieces
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| merges.rank(&w[0], &w[1]).map(|r| (r, i)))
            .min();
        let Some((rank, _)) = best else { break };
        let (left, right) = &merges.merges()[rank];
        let mut next = Vec::with_capacity(pieces.len());
        let mut i = 0;
        while i < pieces.len() {
            if i + 1 < pieces.len() && &pieces[i] == left && &pieces[i + 1] == right {
                next.push(format!("{left}{right}"));
                i += 2;
            } else {
                next.push(std::mem::take(&mut pieces[i]));
                i += 1;
            }
        }
        pieces = next;
    }
    if let Some(last) = pieces.last_mut() {
        last.push_str(END_OF_WORD);
    }
    pieces
}

pub fn apply_bpe(tokens: &[String], merges: &MergeTable) -> Vec<String> {
    tokens.iter().flat_map(|t| apply_bpe_word(t, merges)).collect()
}

/// Inverse of [`apply_bpe`]: concatenates pieces and splits at word-end markers.
pub fn join_subwords(pieces: &[String]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for p in pieces {
        match p.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                current.push_str(stem);
                words.push(std::mem::take(&mut current));
            }
            None => current.push_str(p),
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Memoizing segmenter for encoding whole corpora.
pub struct Segmenter<'a> {
    merges: &'a MergeTable,
    cache: HashMap<String, Vec<String>>,
}

impl<'a> Segmenter<'a> {
    pub fn new(merges: &'a MergeTable) -> Self {
        Segmenter {
            merges,
            cache: HashMap::new(),
        }
    }

    pub fn segment(&mut self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for t in tokens {
            let pieces = self
                .cache
                .entry(t.clone())
                .or_insert_with(|| apply_bpe_word(t, self.merges));
            out.extend(pieces.iter().cloned());
        }
        out
    }
}

/// Dense token/id bijection: reserved ids, language tokens, then subwords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SubwordVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let reserved = [PAD, BOS, EOS, UNK];
        if tokens.len() < 4 || tokens[..4] != reserved {
            return Err(Error::validation("vocabulary must start with the four reserved tokens"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(SubwordVocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn language_id(&self, code: &str) -> Result<u32> {
        self.id(&language_token(code))
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn encode(&self, pieces: &[String]) -> Vec<u32> {
        pieces.iter().map(|p| self.id(p).unwrap_or(UNK_ID)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `token<TAB>id`"))?;
            let id: usize = id.parse().map_err(|_| Error::parse(origin, i + 1, "bad id"))?;
            if id != tokens.len() {
                return Err(Error::parse(origin, i + 1, "ids must be dense and in order"));
            }
            tokens.push(tok.to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

pub fn build_vocab(corpus: &CorpusStore, merges: &MergeTable, registry: &Registry) -> SubwordVocab {
    let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
    tokens.extend(registry.codes().map(language_token));
    let mut seg = Segmenter::new(merges);
    let mut subwords = BTreeSet::new();
    for pair in corpus.pairs() {
        subwords.extend(seg.segment(&pair.source));
        subwords.extend(seg.segment(&pair.target));
    }
    for s in subwords {
        if !tokens.contains(&s) {
            tokens.push(s);
        }
    }
    SubwordVocab::from_tokens(tokens).expect("vocabulary construction yields unique tokens")
}

/// Corpus pair mapped to vocabulary ids (no language token, BOS or EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub lang: String,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

pub fn encode_corpus(corpus: &CorpusStore, merges: &MergeTable, vocab: &SubwordVocab) -> Vec<EncodedPair> {
    let mut seg = Segmenter::new(merges);
    corpus
        .pairs()
        .iter()
        .map(|p| EncodedPair {
            lang: p.lang.clone(),
            source: vocab.encode(&seg.segment(&p.source)),
            target: vocab.encode(&seg.segment(&p.target)),
        })
        .collect()
}

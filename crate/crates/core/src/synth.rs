//! Synthetic mini-languages with controlled word order, translated into one
//! fixed-order target language.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusStore, LanguageRecord, Registry, SentencePair};
use crate::error::{write_file, Error, Result};
use crate::typology::{FeatureMatrix, FeatureSpec};

pub const OBJECT_BEFORE_VERB: &str = "S_OBJECT_BEFORE_VERB";
pub const ADPOSITION_AFTER_NOUN: &str = "S_ADPOSITION_AFTER_NOUN";
pub const NUMERAL_BEFORE_NOUN: &str = "S_NUMERAL_BEFORE_NOUN";
pub const FEATURES: [&str; 3] = [OBJECT_BEFORE_VERB, ADPOSITION_AFTER_NOUN, NUMERAL_BEFORE_NOUN];

const CONSONANTS: &[char] = &['p', 't', 'k', 'm', 'n', 's', 'l', 'r', 'b', 'd', 'g'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
/// Letters absent from stems; a word's suffix over these spells its lexicon seed.
const TAG_LETTERS: &[char] = &['f', 'h', 'j', 'v', 'w', 'x', 'y', 'z', 'c'];

const NUMERAL_RATE: f64 = 0.3;
const PP_RATE: f64 = 0.5;
/// Probability of dropping the subject, and separately of dropping the object.
/// Never both. In object-before-verb languages a lone preverbal noun is then
/// ambiguous, so translation depends on knowing the word order.
const DROP_RATE: f64 = 0.2;
/// Target token standing in for a dropped argument.
pub const GAP: &str = "z";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthGrammar {
    pub obj_before_verb: bool,
    pub adposition_after_noun: bool,
    pub numeral_before_noun: bool,
    pub lexicon_seed: u64,
    pub lexicon_size: usize,
}

impl SynthGrammar {
    pub fn flags(&self) -> [bool; 3] {
        [self.obj_before_verb, self.adposition_after_noun, self.numeral_before_noun]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordClass {
    Noun,
    Verb,
    Adposition,
    Numeral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NounPhrase {
    pub noun: usize,
    pub numeral: Option<usize>,
}

/// Abstract clause shared by source and target realizations. At most one of
/// subject and object is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clause {
    pub subject: Option<NounPhrase>,
    pub verb: usize,
    pub object: Option<NounPhrase>,
    pub pp: Option<(usize, NounPhrase)>,
}

/// A grammar together with its generated lexicon.
#[derive(Debug, Clone)]
pub struct SynthLanguage {
    pub grammar: SynthGrammar,
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub adpositions: Vec<String>,
    pub numerals: Vec<String>,
    index: HashMap<String, (WordClass, usize)>,
}

fn tag(mut seed: u64) -> String {
    let mut digits = Vec::new();
    loop {
        digits.push(TAG_LETTERS[(seed % 9) as usize]);
        seed /= 9;
        if seed == 0 {
            break;
        }
    }
    digits.into_iter().rev().collect()
}

/// Class sizes `(nouns, verbs, adpositions, numerals)` for a lexicon size.
fn class_sizes(size: usize) -> (usize, usize, usize, usize) {
    let adp = (size / 10).max(2);
    let num = (size / 10).max(2);
    let verbs = ((size - adp - num) / 3).max(2);
    (size - adp - num - verbs, verbs, adp, num)
}

pub fn generate_language(grammar: SynthGrammar) -> Result<SynthLanguage> {
    if grammar.lexicon_size < 10 {
        return Err(Error::validation(format!("lexicon size must be at least 10, got {}", grammar.lexicon_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(grammar.lexicon_seed);
    let suffix = tag(grammar.lexicon_seed);
    let mut used = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(grammar.lexicon_size);
    while words.len() < grammar.lexicon_size {
        let syllables = if used.len() < 500 { 2 } else { 3 };
        let stem: String = (0..syllables)
            .flat_map(|_| [*CONSONANTS.choose(&mut rng).unwrap(), *VOWELS.choose(&mut rng).unwrap()])
            .collect();
        if used.insert(stem.clone()) {
            words.push(format!("{stem}{suffix}"));
        }
    }
    let (n, v, a, _) = class_sizes(grammar.lexicon_size);
    let numerals = words.split_off(n + v + a);
    let adpositions = words.split_off(n + v);
    let verbs = words.split_off(n);
    let nouns = words;
    let mut index = HashMap::new();
    for (class, list) in [
        (WordClass::Noun, &nouns),
        (WordClass::Verb, &verbs),
        (WordClass::Adposition, &adpositions),
        (WordClass::Numeral, &numerals),
    ] {
        for (i, w) in list.iter().enumerate() {
            index.insert(w.clone(), (class, i));
        }
    }
    Ok(SynthLanguage {
        grammar,
        nouns,
        verbs,
        adpositions,
        numerals,
        index,
    })
}

impl SynthLanguage {
    pub fn lexicon(&self) -> impl Iterator<Item = &String> {
        self.nouns.iter().chain(&self.verbs).chain(&self.adpositions).chain(&self.numerals)
    }

    pub fn class_of(&self, word: &str) -> Option<(WordClass, usize)> {
        self.index.get(word).copied()
    }

    fn noun_phrase<R: Rng>(&self, rng: &mut R) -> NounPhrase {
        NounPhrase {
            noun: rng.gen_range(0..self.nouns.len()),
            numeral: rng.gen_bool(NUMERAL_RATE).then(|| rng.gen_range(0..self.numerals.len())),
        }
    }

    pub fn sample_clause<R: Rng>(&self, rng: &mut R) -> Clause {
        let drop: f64 = rng.gen();
        let subject = (drop >= DROP_RATE).then(|| self.noun_phrase(rng));
        let verb = rng.gen_range(0..self.verbs.len());
        let object = !(DROP_RATE..2.0 * DROP_RATE).contains(&drop);
        let object = object.then(|| self.noun_phrase(rng));
        let pp = rng
            .gen_bool(PP_RATE)
            .then(|| (rng.gen_range(0..self.adpositions.len()), self.noun_phrase(rng)));
        Clause { subject, verb, object, pp }
    }

    fn push_np(&self, np: Option<NounPhrase>, out: &mut Vec<String>) {
        let Some(np) = np else { return };
        let noun = self.nouns[np.noun].clone();
        match np.numeral.map(|i| self.numerals[i].clone()) {
            Some(num) if self.grammar.numeral_before_noun => out.extend([num, noun]),
            Some(num) => out.extend([noun, num]),
            None => out.push(noun),
        }
    }

    /// Source realization following the grammar's flags. The optional
    /// adpositional phrase directly follows the subject.
    pub fn realize(&self, clause: &Clause) -> Vec<String> {
        let mut out = Vec::new();
        self.push_np(clause.subject, &mut out);
        if let Some((adp, np)) = clause.pp {
            let a = self.adpositions[adp].clone();
            if self.grammar.adposition_after_noun {
                self.push_np(Some(np), &mut out);
                out.push(a);
            } else {
                out.push(a);
                self.push_np(Some(np), &mut out);
            }
        }
        if self.grammar.obj_before_verb {
            self.push_np(clause.object, &mut out);
            out.push(self.verbs[clause.verb].clone());
        } else {
            out.push(self.verbs[clause.verb].clone());
            self.push_np(clause.object, &mut out);
        }
        out
    }

    /// Parses a source sentence, accepting only the grammar's word orders.
    ///
    /// A clause with one argument can be ambiguous; the reading with the
    /// fewest dropped constituents, then subject over object, is returned.
    pub fn parse(&self, tokens: &[String]) -> Result<Clause> {
        const SHAPES: [(bool, bool); 3] = [(true, true), (true, false), (false, true)];
        for pp in [true, false] {
            for (subject, object) in SHAPES {
                let mut p = Parser { lang: self, tokens, pos: 0 };
                if let Ok(c) = p.clause(subject, object, pp) {
                    if p.pos == tokens.len() {
                        return Ok(c);
                    }
                }
            }
        }
        Err(Error::validation(format!("`{}` does not parse", tokens.join(" "))))
    }
}

struct Parser<'a> {
    lang: &'a SynthLanguage,
    tokens: &'a [String],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<(WordClass, usize)> {
        self.tokens.get(self.pos).and_then(|t| self.lang.class_of(t))
    }

    fn clause(&mut self, subject: bool, object: bool, pp: bool) -> Result<Clause> {
        let g = self.lang.grammar;
        let subject = if subject { Some(self.np()?) } else { None };
        let pp = if !pp {
            None
        } else if g.adposition_after_noun {
            let np = self.np()?;
            Some((self.word(WordClass::Adposition)?, np))
        } else {
            let a = self.word(WordClass::Adposition)?;
            Some((a, self.np()?))
        };
        let (object, verb) = match (object, g.obj_before_verb) {
            (false, _) => (None, self.word(WordClass::Verb)?),
            (true, true) => {
                let o = self.np()?;
                (Some(o), self.word(WordClass::Verb)?)
            }
            (true, false) => {
                let v = self.word(WordClass::Verb)?;
                (Some(self.np()?), v)
            }
        };
        Ok(Clause { subject, verb, object, pp })
    }

    fn word(&mut self, class: WordClass) -> Result<usize> {
        match self.peek() {
            Some((c, i)) if c == class => {
                self.pos += 1;
                Ok(i)
            }
            _ => Err(Error::validation(format!("expected {class:?} at position {}", self.pos))),
        }
    }

    fn optional_numeral(&mut self) -> Option<usize> {
        match self.peek() {
            Some((WordClass::Numeral, i)) => {
                self.pos += 1;
                Some(i)
            }
            _ => None,
        }
    }

    fn np(&mut self) -> Result<NounPhrase> {
        if self.lang.grammar.numeral_before_noun {
            let numeral = self.optional_numeral();
            Ok(NounPhrase {
                numeral,
                noun: self.word(WordClass::Noun)?,
            })
        } else {
            let noun = self.word(WordClass::Noun)?;
            Ok(NounPhrase {
                noun,
                numeral: self.optional_numeral(),
            })
        }
    }
}

fn target_np(np: Option<NounPhrase>, out: &mut Vec<String>) {
    let Some(np) = np else {
        out.push(GAP.to_string());
        return;
    };
    if let Some(q) = np.numeral {
        out.push(format!("q{q}"));
    }
    out.push(format!("n{}", np.noun));
}

/// Fixed-order target: numerals before nouns, SVO, prepositions.
pub fn target_realization(clause: &Clause) -> Vec<String> {
    let mut out = Vec::new();
    target_np(clause.subject, &mut out);
    out.push(format!("v{}", clause.verb));
    target_np(clause.object, &mut out);
    if let Some((adp, np)) = clause.pp {
        out.push(format!("p{adp}"));
        target_np(Some(np), &mut out);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub registry: Registry,
    pub corpus: CorpusStore,
    pub features: FeatureMatrix,
    pub languages: Vec<SynthLanguage>,
    pub seed: u64,
}

/// Flag combinations ordered so that consecutive pairs are complements;
/// any even-length prefix is balanced on every flag.
const COMBO_ORDER: [u8; 8] = [0, 7, 1, 6, 2, 5, 3, 4];

pub const DEFAULT_LEXICON_SIZE: usize = 20;

pub fn language_code(i: usize) -> String {
    format!("sy{i:02}")
}

pub fn generate_suite(n_langs: usize, sentences_per_lang: usize, seed: u64) -> Result<SynthSuite> {
    generate_suite_with(n_langs, sentences_per_lang, DEFAULT_LEXICON_SIZE, seed)
}

pub fn generate_suite_with(n_langs: usize, sentences_per_lang: usize, lexicon_size: usize, seed: u64) -> Result<SynthSuite> {
    if n_langs < 4 {
        return Err(Error::validation(format!("a suite needs at least 4 languages, got {n_langs}")));
    }
    if sentences_per_lang == 0 {
        return Err(Error::validation("a suite needs at least one sentence per language"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<u8> = (0..n_langs).map(|i| COMBO_ORDER[i % 8]).collect();
    combos.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n_langs);
    let mut languages = Vec::with_capacity(n_langs);
    for (i, &combo) in combos.iter().enumerate() {
        let grammar = SynthGrammar {
            obj_before_verb: combo & 1 != 0,
            adposition_after_noun: combo & 2 != 0,
            numeral_before_noun: combo & 4 != 0,
            lexicon_seed: i as u64,
            lexicon_size,
        };
        languages.push(generate_language(grammar)?);
        let family = rng.gen_range(0..5);
        let branch = rng.gen_range(0..3);
        let lat = rng.gen_range(-60.0..60.0);
        let lon = rng.gen_range(-180.0..180.0);
        records.push(LanguageRecord::new(
            language_code(i),
            lat,
            lon,
            vec![format!("F{family}"), format!("F{family}.{branch}")],
        )?);
    }
    let registry = Registry::new(records)?;

    let per_lang: Vec<Vec<SentencePair>> = languages
        .iter()
        .enumerate()
        .map(|(i, lang)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            (0..sentences_per_lang)
                .map(|_| {
                    let clause = lang.sample_clause(&mut r);
                    SentencePair {
                        lang: language_code(i),
                        source: lang.realize(&clause),
                        target: target_realization(&clause),
                    }
                })
                .collect()
        })
        .collect();
    let corpus = CorpusStore::new(per_lang.into_iter().flatten().collect(), &registry)?;

    let specs = FEATURES.iter().map(|f| FeatureSpec::new(*f)).collect::<Result<Vec<_>>>()?;
    let cells = languages.iter().flat_map(|l| l.grammar.flags().map(Some)).collect();
    let features = FeatureMatrix::new((0..n_langs).map(language_code).collect(), specs, cells)?;
    Ok(SynthSuite {
        registry,
        corpus,
        features,
        languages,
        seed,
    })
}

/// Paths written by [`SynthSuite::write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteFiles {
    pub registry: PathBuf,
    pub corpus: PathBuf,
    pub features: PathBuf,
}

impl SynthSuite {
    pub fn write(&self, dir: &Path) -> Result<SuiteFiles> {
        let files = SuiteFiles {
            registry: dir.join("registry.tsv"),
            corpus: dir.join("corpus.txt"),
            features: dir.join("features.csv"),
        };
        write_file(&files.registry, self.registry.to_tsv())?;
        write_file(&files.corpus, self.corpus.to_text())?;
        write_file(&files.features, self.features.to_csv())?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar(seed: u64, flags: [bool; 3]) -> SynthGrammar {
        SynthGrammar {
            obj_before_verb: flags[0],
            adposition_after_noun: flags[1],
            numeral_before_noun: flags[2],
            lexicon_seed: seed,
            lexicon_size: 12,
        }
    }

    #[test]
    fn tags_are_distinct() {
        assert_eq!(tag(0), "f");
        assert_eq!(tag(9), "hf");
        let tags: std::collections::HashSet<_> = (0..1000).map(tag).collect();
        assert_eq!(tags.len(), 1000);
    }

    #[test]
    fn object_precedes_verb() {
        for flags in [[true, false, true], [false, true, false]] {
            let lang = generate_language(grammar(3, flags)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut drops = [0; 2];
            for _ in 0..300 {
                let c = lang.sample_clause(&mut rng);
                assert!(c.subject.is_some() || c.object.is_some());
                drops[0] += c.subject.is_none() as usize;
                drops[1] += c.object.is_none() as usize;
                let s = lang.realize(&c);
                let v = s.iter().position(|t| *t == lang.verbs[c.verb]).unwrap();
                if let Some(o) = c.object {
                    let o = s.iter().rposition(|t| *t == lang.nouns[o.noun]).unwrap();
                    assert_eq!(o < v, flags[0]);
                }
                let parsed = lang.parse(&s).unwrap();
                assert_eq!(lang.realize(&parsed), s);
                if c.subject.is_some() && c.object.is_some() {
                    assert_eq!(parsed, c);
                }
            }
            assert!(drops.iter().all(|&d| d > 30), "{drops:?}");
        }
    }

    #[test]
    fn lone_preverbal_noun_is_ambiguous_only_in_ov() {
        let np = Some(NounPhrase { noun: 0, numeral: None });
        let dropped_subject = Clause { subject: None, verb: 0, object: np, pp: None };
        let dropped_object = Clause { subject: np, verb: 0, object: None, pp: None };
        let ov = generate_language(grammar(4, [true, false, false])).unwrap();
        let vo = generate_language(grammar(4, [false, false, false])).unwrap();
        assert_eq!(ov.realize(&dropped_subject), ov.realize(&dropped_object));
        assert_ne!(vo.realize(&dropped_subject), vo.realize(&dropped_object));
        assert_eq!(target_realization(&dropped_subject), vec!["z", "v0", "n0"]);
    }

    #[test]
    fn lexicons_disjoint() {
        let a = generate_language(grammar(1, [false; 3])).unwrap();
        let b = generate_language(grammar(2, [false; 3])).unwrap();
        assert!(a.lexicon().all(|w| !b.lexicon().any(|v| v == w)));
        assert_eq!(a.lexicon().count(), 12);
    }

    #[test]
    fn small_lexicon_rejected() {
        let mut g = grammar(0, [false; 3]);
        g.lexicon_size = 9;
        assert!(generate_language(g).is_err());
    }

    #[test]
    fn wrong_order_fails_to_parse() {
        let sov = generate_language(grammar(5, [true, true, true])).unwrap();
        let mut svo_g = sov.grammar;
        svo_g.obj_before_verb = false;
        let svo = generate_language(svo_g).unwrap();
        let c = Clause {
            subject: Some(NounPhrase { noun: 0, numeral: None }),
            verb: 0,
            object: Some(NounPhrase { noun: 1, numeral: None }),
            pp: None,
        };
        assert!(sov.parse(&svo.realize(&c)).is_err());
        assert_eq!(target_realization(&c), vec!["n0", "v0", "n1"]);
    }

    #[test]
    fn balanced_flags() {
        let s = generate_suite(40, 3, 9).unwrap();
        for f in 0..3 {
            let ones = (0..40).filter(|&l| s.features.get(l, f) == Some(true)).count();
            assert_eq!(ones, 20);
        }
        let s4 = generate_suite(4, 1, 1).unwrap();
        for f in 0..3 {
            assert_eq!((0..4).filter(|&l| s4.features.get(l, f) == Some(true)).count(), 2);
        }
    }
}

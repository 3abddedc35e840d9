//! Language registry, parallel corpus, and text preprocessing.
//!
//! Registry files are UTF-8 TSV with columns `code`, `lat`, `lon` and a
//! `|`-separated lineage (root first). Parallel corpora hold one pair per line
//! as `lang<TAB>source ||| target`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{read_to_string, Error, Result};

pub const PAIR_SEPARATOR: &str = " ||| ";

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageRecord {
    pub code: String,
    /// Family-tree path, root first.
    pub lineage: Vec<String>,
    pub lat: f64,
    pub lon: f64,
}

impl LanguageRecord {
    pub fn new(code: impl Into<String>, lat: f64, lon: f64, lineage: Vec<String>) -> Result<Self> {
        let record = LanguageRecord {
            code: code.into(),
            lineage,
            lat,
            lon,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        if self.code.is_empty() || self.code.chars().any(char::is_whitespace) {
            return Err(Error::validation(format!("invalid language code {:?}", self.code)));
        }
        if self.lineage.is_empty() || self.lineage.iter().any(|n| n.is_empty()) {
            return Err(Error::validation(format!("empty lineage for {}", self.code)));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::validation(format!("latitude {} out of range for {}", self.lat, self.code)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::validation(format!("longitude {} out of range for {}", self.lon, self.code)));
        }
        Ok(())
    }

    /// Token naming this language in the shared vocabulary, e.g. `<fra>`.
    pub fn token(&self) -> String {
        language_token(&self.code)
    }
}

pub fn language_token(code: &str) -> String {
    format!("<{code}>")
}

/// Ordered set of languages with unique codes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    records: Vec<LanguageRecord>,
    index: BTreeMap<String, usize>,
}

impl Registry {
    pub fn new(records: Vec<LanguageRecord>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if index.insert(r.code.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate language code `{}`", r.code)));
            }
        }
        Ok(Registry { records, index })
    }

    pub fn records(&self) -> &[LanguageRecord] {
        &self.records
    }

    pub fn get(&self, code: &str) -> Option<&LanguageRecord> {
        self.index.get(code).map(|&i| &self.records[i])
    }

    pub fn position(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.code.as_str())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(origin, lineno, format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let lat: f64 = cols[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad latitude {:?}", cols[1])))?;
            let lon: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad longitude {:?}", cols[2])))?;
            let lineage = cols[3].split('|').map(|s| s.trim().to_string()).collect();
            let record = LanguageRecord::new(cols[0].trim(), lat, lon, lineage)
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            if !seen.insert(record.code.clone()) {
                return Err(Error::validation(format!("duplicate language code `{}` on line {lineno}", record.code)));
            }
            records.push(record);
        }
        Registry::new(records)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# code\tlat\tlon\tlineage\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.code, r.lat, r.lon, r.lineage.join("|")));
        }
        out
    }
}

pub fn load_registry(path: &Path) -> Result<Registry> {
    Registry::parse(&read_to_string(path)?, &path.display().to_string())
}

/// NFC normalization followed by whitespace tokenization; case is preserved.
pub fn preprocess(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    normalized.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub lang: String,
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// Parallel sentences in input order, with a per-language grouping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStore {
    pairs: Vec<SentencePair>,
    by_lang: BTreeMap<String, Vec<usize>>,
}

impl CorpusStore {
    pub fn new(pairs: Vec<SentencePair>, registry: &Registry) -> Result<Self> {
        let mut by_lang: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if !registry.contains(&p.lang) {
                return Err(Error::UnknownLanguage(p.lang.clone()));
            }
            if p.source.is_empty() || p.target.is_empty() {
                return Err(Error::validation(format!("empty side in pair {i} ({})", p.lang)));
            }
            by_lang.entry(p.lang.clone()).or_default().push(i);
        }
        Ok(CorpusStore { pairs, by_lang })
    }

    pub fn parse(text: &str, registry: &Registry, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let (lang, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "missing tab after language code"))?;
            if !registry.contains(lang) {
                return Err(Error::UnknownLanguage(lang.to_string()));
            }
            let (src, tgt) = rest
                .split_once(PAIR_SEPARATOR)
                .or_else(|| {
                    // " ||| " with an empty side leaves only one of the padding spaces.
                    rest.strip_prefix("||| ").map(|t| ("", t)).or_else(|| rest.strip_suffix(" |||").map(|s| (s, "")))
                })
                .ok_or_else(|| Error::parse(origin, lineno, "missing ` ||| ` separator"))?;
            let source = preprocess(src);
            let target = preprocess(tgt);
            if source.is_empty() {
                return Err(Error::parse(origin, lineno, "empty source after preprocessing"));
            }
            if target.is_empty() {
                return Err(Error::parse(origin, lineno, "empty target after preprocessing"));
            }
            pairs.push(SentencePair {
                lang: lang.to_string(),
                source,
                target,
            });
        }
        CorpusStore::new(pairs, registry)
    }

    /// Canonical text form; re-parsing it yields an identical store.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.lang);
            out.push('\t');
            out.push_str(&p.source.join(" "));
            out.push_str(PAIR_SEPARATOR);
            out.push_str(&p.target.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_lang.keys().map(String::as_str)
    }

    /// Indices into [`pairs`](Self::pairs) for one language, in input order.
    pub fn indices(&self, lang: &str) -> &[usize] {
        self.by_lang.get(lang).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sentences(&self, lang: &str) -> impl Iterator<Item = &SentencePair> {
        self.indices(lang).iter().map(move |&i| &self.pairs[i])
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.by_lang.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn load_parallel(path: &Path, registry: &Registry) -> Result<CorpusStore> {
    CorpusStore::parse(&read_to_string(path)?, registry, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> Registry {
        Registry::parse("deu\t51\t10\tIndo-European|Germanic\nkor\t37\t127\tKoreanic\n", "test").unwrap()
    }

    #[test]
    fn registry_line_maps_fields() {
        let reg = Registry::parse("# comment\nfra\t46.0\t2.0\tIndo-European|Romance\n", "r").unwrap();
        let fra = reg.get("fra").unwrap();
        assert_eq!(fra.lineage, vec!["Indo-European", "Romance"]);
        assert_eq!((fra.lat, fra.lon), (46.0, 2.0));
        assert_eq!(fra.token(), "<fra>");
    }

    #[test]
    fn duplicate_codes_rejected() {
        let err = Registry::parse("fra\t46\t2\tIE\nfra\t1\t1\tIE\n", "r").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn latitude_out_of_range() {
        let err = Registry::parse("fra\t95.0\t2\tIE\n", "r").unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
        assert!(err.to_string().contains("latitude"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = Registry::parse("fra\t46\t2\tIE\nbad line\n", "reg.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn corpus_counts_per_language() {
        let text = "deu\tder Hund ||| the dog\ndeu\tdie Katze ||| the cat\nkor\tgae ||| dog\ndeu\tein Haus ||| a house\nkor\tgoyangi ||| cat\n";
        let store = CorpusStore::parse(text, &registry(), "c").unwrap();
        let counts = store.counts();
        assert_eq!(counts["deu"], 3);
        assert_eq!(counts["kor"], 2);
        assert_eq!(store.len(), 5);
        assert_eq!(store.to_text(), text);
    }

    #[test]
    fn unknown_language_rejected() {
        let err = CorpusStore::parse("fra\tle chien ||| the dog\n", &registry(), "c").unwrap_err();
        assert!(matches!(err, Error::UnknownLanguage(ref c) if c == "fra"));
    }

    #[test]
    fn empty_source_rejected() {
        let err = CorpusStore::parse("deu\t ||| hello\n", &registry(), "c").unwrap_err();
        assert!(err.to_string().contains("empty source"), "{err}");
        let err = CorpusStore::parse("deu\thallo ||| \n", &registry(), "c").unwrap_err();
        assert!(err.to_string().contains("empty target"), "{err}");
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess("Der Hund  läuft"), vec!["Der", "Hund", "läuft"]);
        assert!(preprocess("").is_empty());
        assert_eq!(preprocess("e\u{301}"), preprocess("\u{e9}"));
        assert_eq!(preprocess("e\u{301}")[0], "\u{e9}");
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "\\PC{0,40}") {
            let once = preprocess(&s);
            prop_assert_eq!(preprocess(&once.join(" ")), once);
        }

        #[test]
        fn corpus_round_trips(rows in proptest::collection::vec(
            (prop_oneof![Just("deu"), Just("kor")], "[a-zé]{1,6}( [a-z]{1,6}){0,3}", "[a-z]{1,6}( [a-z]{1,6}){0,3}"), 1..20)
        ) {
            let text: String = rows.iter().map(|(l, s, t)| format!("{l}\t{s} ||| {t}\n")).collect();
            let store = CorpusStore::parse(&text, &registry(), "p").unwrap();
            prop_assert_eq!(store.to_text(), text);
            let total: usize = store.counts().values().sum();
            prop_assert_eq!(total, rows.len());
        }
    }
}

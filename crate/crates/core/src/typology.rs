//! Binary typological feature matrices, language distances, and the
//! nearest-neighbour feature baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::corpus::{LanguageRecord, Registry};
use crate::error::{read_to_string, write_file, Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Syntax,
    Phonology,
    Inventory,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Syntax, Category::Phonology, Category::Inventory];

    pub fn prefix(self) -> &'static str {
        match self {
            Category::Syntax => "S_",
            Category::Phonology => "P_",
            Category::Inventory => "I_",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Syntax => "syntax",
            Category::Phonology => "phonology",
            Category::Inventory => "inventory",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown feature category `{s}`")))
    }

    pub fn of_feature(name: &str) -> Option<Self> {
        Category::ALL.into_iter().find(|c| name.starts_with(c.prefix()) && name.len() > 2)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub category: Category,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let category = Category::of_feature(&name)
            .ok_or_else(|| Error::validation(format!("feature `{name}` lacks an S_, P_ or I_ prefix")))?;
        Ok(FeatureSpec { name, category })
    }
}

/// Languages × binary features, with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    languages: Vec<String>,
    features: Vec<FeatureSpec>,
    cells: Vec<Option<bool>>,
}

impl FeatureMatrix {
    pub fn new(languages: Vec<String>, features: Vec<FeatureSpec>, cells: Vec<Option<bool>>) -> Result<Self> {
        if cells.len() != languages.len() * features.len() {
            return Err(Error::validation(format!(
                "{} cells for {} languages x {} features",
                cells.len(),
                languages.len(),
                features.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = languages.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::validation(format!("duplicate language `{dup}` in feature matrix")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = features.iter().find(|f| !seen.insert(f.name.as_str())) {
            return Err(Error::validation(format!("duplicate feature `{}`", dup.name)));
        }
        Ok(FeatureMatrix {
            languages,
            features,
            cells,
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn language_index(&self, code: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == code)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn get(&self, lang: usize, feature: usize) -> Option<bool> {
        self.cells[lang * self.features.len() + feature]
    }

    pub fn row(&self, lang: usize) -> &[Option<bool>] {
        let f = self.features.len();
        &self.cells[lang * f..(lang + 1) * f]
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
        for f in &self.features {
            *counts.get_mut(&f.category).expect("all categories present") += 1;
        }
        counts
    }

    /// Languages with a value for `feature`.
    pub fn labeled(&self, feature: usize) -> usize {
        (0..self.languages.len()).filter(|&l| self.get(l, feature).is_some()).count()
    }

    /// A feature is predictable once it has at least two labeled languages.
    pub fn is_predictable(&self, feature: usize) -> bool {
        self.labeled(feature) >= 2
    }

    pub fn parse(text: &str, registry: &Registry, origin: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r.map_err(|e| Error::parse(origin, 1, e.to_string()))?,
            None => return Err(Error::parse(origin, 1, "empty feature file")),
        };
        if header.get(0) != Some("lang") {
            return Err(Error::parse(origin, 1, "header must start with `lang`"));
        }
        let features = header
            .iter()
            .skip(1)
            .map(|n| FeatureSpec::new(n).map_err(|e| Error::parse(origin, 1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut languages = Vec::new();
        let mut cells = Vec::new();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(origin, line, e.to_string()))?;
            if rec.len() != features.len() + 1 {
                return Err(Error::parse(origin, line, format!("expected {} fields, got {}", features.len() + 1, rec.len())));
            }
            let code = &rec[0];
            if !registry.contains(code) {
                return Err(Error::UnknownLanguage(code.to_string()));
            }
            languages.push(code.to_string());
            for (j, cell) in rec.iter().skip(1).enumerate() {
                cells.push(match cell.trim() {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => {
                        return Err(Error::parse(
                            origin,
                            line,
                            format!("value `{other}` for {} is not 0, 1 or empty", features[j].name),
                        ))
                    }
                });
            }
        }
        Self::new(languages, features, cells).map_err(|e| Error::parse(origin, 1, e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lang");
        for f in &self.features {
            out.push(',');
            out.push_str(&f.name);
        }
        out.push('\n');
        for (l, code) in self.languages.iter().enumerate() {
            out.push_str(code);
            for v in self.row(l) {
                out.push(',');
                match v {
                    Some(true) => out.push('1'),
                    Some(false) => out.push('0'),
                    None => {}
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv())
    }
}

pub fn load_features(path: &Path, registry: &Registry) -> Result<FeatureMatrix> {
    FeatureMatrix::parse(&read_to_string(path)?, registry, &path.display().to_string())
}

/// Great-circle distance in kilometres by the haversine formula.
pub fn geodesic_distance(a: &LanguageRecord, b: &LanguageRecord) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// `1 - 2 * shared_prefix / (|a| + |b|)` over lineage paths.
pub fn genetic_distance(a: &LanguageRecord, b: &LanguageRecord) -> f64 {
    let shared = a.lineage.iter().zip(&b.lineage).take_while(|(x, y)| x == y).count();
    1.0 - 2.0 * shared as f64 / (a.lineage.len() + b.lineage.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub geodesic_weight: f64,
    pub genetic_weight: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 3,
            geodesic_weight: 1.0,
            genetic_weight: 1.0,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        let w = [self.geodesic_weight, self.genetic_weight];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::validation("distance weights must be non-negative and not all zero"));
        }
        Ok(())
    }
}

/// Min-max ranges of both distances over every registry pair, self-pairs included.
#[derive(Debug, Clone)]
pub struct DistanceContext {
    records: Vec<LanguageRecord>,
    index: BTreeMap<String, usize>,
    geo_range: (f64, f64),
    gen_range: (f64, f64),
    weights: (f64, f64),
}

impl DistanceContext {
    pub fn new(registry: &Registry, config: &KnnConfig) -> Result<Self> {
        config.validate()?;
        let records = registry.records().to_vec();
        let mut geo = (f64::INFINITY, f64::NEG_INFINITY);
        let mut gen = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..records.len() {
            for j in i..records.len() {
                let g = geodesic_distance(&records[i], &records[j]);
                let d = genetic_distance(&records[i], &records[j]);
                geo = (geo.0.min(g), geo.1.max(g));
                gen = (gen.0.min(d), gen.1.max(d));
            }
        }
        let index = records.iter().enumerate().map(|(i, r)| (r.code.clone(), i)).collect();
        Ok(DistanceContext {
            records,
            index,
            geo_range: geo,
            gen_range: gen,
            weights: (config.geodesic_weight, config.genetic_weight),
        })
    }

    pub fn record(&self, code: &str) -> Result<&LanguageRecord> {
        self.index
            .get(code)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    /// Weighted mean of min-max normalized geodesic and genetic distance.
    pub fn combined(&self, a: &str, b: &str) -> Result<f64> {
        let (ra, rb) = (self.record(a)?, self.record(b)?);
        Ok(self.combined_records(ra, rb))
    }

    fn combined_records(&self, a: &LanguageRecord, b: &LanguageRecord) -> f64 {
        let norm = |x: f64, (lo, hi): (f64, f64)| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        let g = norm(geodesic_distance(a, b), self.geo_range);
        let d = norm(genetic_distance(a, b), self.gen_range);
        let (wg, wd) = self.weights;
        (wg * g + wd * d) / (wg + wd)
    }

    /// TSV dump `langA langB geodesic genetic combined` over unordered pairs.
    pub fn dump(&self) -> String {
        let mut out = String::from("langA\tlangB\tgeodesic\tgenetic\tcombined\n");
        for (i, a) in self.records.iter().enumerate() {
            for b in &self.records[i + 1..] {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    a.code,
                    b.code,
                    geodesic_distance(a, b),
                    genetic_distance(a, b),
                    self.combined_records(a, b)
                ));
            }
        }
        out
    }
}

/// The `k` nearest other languages of the matrix, ordered by `(distance, code)`.
pub fn nearest_neighbors(lang: &str, matrix: &FeatureMatrix, ctx: &DistanceContext, k: usize) -> Result<Vec<usize>> {
    let target = ctx.record(lang)?;
    let mut cands = matrix
        .languages()
        .iter()
        .enumerate()
        .filter(|(_, code)| code.as_str() != lang)
        .map(|(i, code)| Ok((ctx.combined_records(target, ctx.record(code)?), code.as_str(), i)))
        .collect::<Result<Vec<_>>>()?;
    if cands.len() < k {
        return Err(Error::validation(format!("`{lang}` has {} candidate neighbours, need {k}", cands.len())));
    }
    let order = |a: &(f64, &str, usize), b: &(f64, &str, usize)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    Ok(cands.into_iter().map(|(_, _, i)| i).collect())
}

/// Per-feature mean of the `k` nearest neighbours' values.
///
/// Neighbours lacking a value are skipped; if none of them has one, the mean
/// over all other labeled languages is used, or 0.5 when there is none.
pub fn knn_feature_vector(lang: &str, matrix: &FeatureMatrix, ctx: &DistanceContext, config: &KnnConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let neighbors = nearest_neighbors(lang, matrix, ctx, config.k)?;
    let own = matrix.language_index(lang);
    let mut out = Vec::with_capacity(matrix.features().len());
    for f in 0..matrix.features().len() {
        let vals: Vec<f64> = neighbors
            .iter()
            .filter_map(|&n| matrix.get(n, f))
            .map(|v| if v { 1.0 } else { 0.0 })
            .collect();
        if !vals.is_empty() {
            out.push(vals.iter().sum::<f64>() / vals.len() as f64);
            continue;
        }
        let (sum, count) = (0..matrix.languages().len())
            .filter(|&l| Some(l) != own)
            .filter_map(|l| matrix.get(l, f))
            .fold((0.0, 0usize), |(s, c), v| (s + if v { 1.0 } else { 0.0 }, c + 1));
        out.push(if count == 0 { 0.5 } else { sum / count as f64 });
    }
    Ok(out)
}

/// Most common value of `feature` among `subset`, ties going to `true`.
pub fn majority_label(feature: usize, matrix: &FeatureMatrix, subset: &[usize]) -> Result<bool> {
    let (ones, total) = count_labels(feature, matrix, subset)?;
    Ok(2 * ones >= total)
}

/// Frequency of the majority value of `feature` among `subset`.
pub fn majority_rate(feature: usize, matrix: &FeatureMatrix, subset: &[usize]) -> Result<f64> {
    let (ones, total) = count_labels(feature, matrix, subset)?;
    Ok(ones.max(total - ones) as f64 / total as f64)
}

fn count_labels(feature: usize, matrix: &FeatureMatrix, subset: &[usize]) -> Result<(usize, usize)> {
    let vals: Vec<bool> = subset.iter().filter_map(|&l| matrix.get(l, feature)).collect();
    if vals.is_empty() {
        let name = matrix.features().get(feature).map_or("?", |f| f.name.as_str());
        return Err(Error::validation(format!("feature `{name}` has no labeled languages in the subset")));
    }
    Ok((vals.iter().filter(|&&v| v).count(), vals.len()))
}

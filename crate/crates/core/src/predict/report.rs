use std::fmt::Write as _;

use super::bootstrap::aux_label;
use super::eval::{CellResult, EvalReport, FeatureResult, Instance, Predictor};
use crate::error::{Error, Result};
use crate::typology::Category;

/// `method<TAB>category<TAB>aux<TAB>accuracy`, one line per cell.
pub fn render_tsv(cells: &[CellResult]) -> String {
    let mut out = String::from("method\tcategory\taux\taccuracy\n");
    for c in cells {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.4}", c.predictor, c.category, aux_sign(c.aux), c.accuracy);
    }
    out
}

fn aux_sign(aux: bool) -> &'static str {
    if aux {
        "+Aux"
    } else {
        "-Aux"
    }
}

pub fn parse_tsv(text: &str) -> Result<Vec<CellResult>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some("method\tcategory\taux\taccuracy") {
        return Err(Error::parse("report", 1, "missing report header"));
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = |m: &str| Error::parse("report", n + 1, m.to_string());
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            Ok(CellResult {
                predictor: f[0].parse().map_err(|_| bad("unknown method"))?,
                category: Category::from_name(f[1]).map_err(|_| bad("unknown category"))?,
                aux: match f[2] {
                    "+Aux" => true,
                    "-Aux" => false,
                    _ => return Err(bad("aux must be +Aux or -Aux")),
                },
                accuracy: f[3].parse().map_err(|_| bad("bad accuracy"))?,
            })
        })
        .collect()
}

/// Markdown table with one row per method and a `-Aux`/`+Aux` column pair per
/// category. Missing cells render as `-`.
pub fn render_table1(cells: &[CellResult]) -> String {
    let mut rows: Vec<Predictor> = Predictor::TABLE_ROWS.iter().copied().filter(|p| cells.iter().any(|c| c.predictor == *p)).collect();
    for c in cells {
        if !rows.contains(&c.predictor) {
            rows.push(c.predictor);
        }
    }
    let mut out = String::from("| Method |");
    for cat in Category::ALL {
        let name = capitalize(cat.name());
        let _ = write!(out, " {name} -Aux | {name} +Aux |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(2 * Category::ALL.len()));
    out.push('\n');
    for p in rows {
        let _ = write!(out, "| {p} |");
        for cat in Category::ALL {
            for aux in [false, true] {
                match cells.iter().find(|c| c.predictor == p && c.category == cat && c.aux == aux) {
                    Some(c) => {
                        let _ = write!(out, " {:.2} |", c.accuracy);
                    }
                    None => out.push_str(" - |"),
                }
            }
        }
        out.push('\n');
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Per-feature accuracy, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub feature: String,
    pub category: Category,
    pub accuracy: f64,
}

impl FeatureScore {
    pub fn new(feature: impl Into<String>, category: Category, accuracy: f64) -> Self {
        FeatureScore {
            feature: feature.into(),
            category,
            accuracy,
        }
    }
}

impl EvalReport {
    pub fn scores(&self, predictor: Predictor, aux: bool) -> Vec<FeatureScore> {
        self.feature_results(predictor, aux)
            .map(|f| FeatureScore::new(f.feature.clone(), f.category, f.accuracy))
            .collect()
    }

    /// Every held-out prediction: `method, aux, feature, lang, gold, predicted`,
    /// preceded by `#` lines carrying the fold hash and excluded features.
    pub fn to_instances_tsv(&self) -> String {
        let mut out = format!("# folds\t{}\n", self.fold_hash);
        for e in &self.excluded {
            let _ = writeln!(out, "# excluded\t{e}");
        }
        out.push_str("method\taux\tfeature\tlang\tgold\tpredicted\n");
        for f in &self.features {
            for i in &f.instances {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    f.predictor,
                    aux_sign(f.aux),
                    f.feature,
                    i.lang,
                    i.gold as u8,
                    i.predicted as u8
                );
            }
        }
        out
    }

    /// Rebuilds a report, recomputing accuracies from the instances.
    pub fn from_instances_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut fold_hash = None;
        let mut excluded = Vec::new();
        let mut features: Vec<FeatureResult> = Vec::new();
        let mut seen_header = false;
        for (n, line) in text.lines().enumerate() {
            let bad = |m: &str| Error::parse(origin, n + 1, m.to_string());
            if let Some(rest) = line.strip_prefix("# ") {
                match rest.split_once('\t') {
                    Some(("folds", h)) => fold_hash = Some(h.to_string()),
                    Some(("excluded", f)) => excluded.push(f.to_string()),
                    _ => return Err(bad("unknown directive")),
                }
                continue;
            }
            if !seen_header {
                if line != "method\taux\tfeature\tlang\tgold\tpredicted" {
                    return Err(bad("missing instance header"));
                }
                seen_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let predictor: Predictor = f[0].parse().map_err(|_| bad("unknown method"))?;
            let aux = match f[1] {
                "+Aux" => true,
                "-Aux" => false,
                _ => return Err(bad("aux must be +Aux or -Aux")),
            };
            let bit = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad("labels must be 0 or 1")),
            };
            let inst = Instance {
                lang: f[3].to_string(),
                gold: bit(f[4])?,
                predicted: bit(f[5])?,
            };
            match features.last_mut() {
                Some(last) if last.predictor == predictor && last.aux == aux && last.feature == f[2] => last.instances.push(inst),
                _ => features.push(FeatureResult {
                    predictor,
                    aux,
                    feature: f[2].to_string(),
                    category: Category::of_feature(f[2]).ok_or_else(|| bad("feature lacks category prefix"))?,
                    accuracy: 0.0,
                    instances: vec![inst],
                }),
            }
        }
        let fold_hash = fold_hash.ok_or_else(|| Error::parse(origin, 1, "missing fold hash"))?;
        for f in &mut features {
            let correct = f.instances.iter().filter(|i| i.gold == i.predicted).count();
            f.accuracy = 100.0 * correct as f64 / f.instances.len() as f64;
        }
        let mut conditions: Vec<(Predictor, bool)> = Vec::new();
        for f in &features {
            if !conditions.contains(&(f.predictor, f.aux)) {
                conditions.push((f.predictor, f.aux));
            }
        }
        let mut cells = Vec::new();
        for (p, a) in conditions {
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
            fold_hash,
            cells,
            features,
            excluded,
        })
    }
}

/// One row of a before/after comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub feature: String,
    pub category: Category,
    pub before: f64,
    pub after: f64,
    pub gain: f64,
}

/// The `n` largest per-feature improvements from `a` to `b` within `category`,
/// largest first; equal gains are ordered by feature name.
pub fn top_gains(a: &[FeatureScore], b: &[FeatureScore], category: Category, n: usize) -> Vec<GainRow> {
    let mut rows: Vec<GainRow> = a
        .iter()
        .filter(|s| s.category == category)
        .filter_map(|sa| {
            b.iter().find(|sb| sb.feature == sa.feature).map(|sb| GainRow {
                feature: sa.feature.clone(),
                category,
                before: sa.accuracy,
                after: sb.accuracy,
                gain: sb.accuracy - sa.accuracy,
            })
        })
        .collect();
    rows.sort_by(|x, y| y.gain.total_cmp(&x.gain).then_with(|| x.feature.cmp(&y.feature)));
    rows.truncate(n);
    rows
}

/// Markdown table of gain rows, as given.
pub fn render_gains(rows: &[GainRow], before: &str, after: &str) -> String {
    let mut out = format!("| Feature | {before} | {after} | Gain |\n|---|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {:.2} | {:.2} | {:.2} |", r.feature, r.before, r.after, r.gain);
    }
    out
}

/// Heading line for a bootstrap comparison.
pub fn describe_condition(p: Predictor, aux: bool) -> String {
    format!("{p}{}", aux_label(aux))
}

//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use langvec::corpus::{LanguageRecord, Registry};
use langvec::typology::{FeatureMatrix, KnnConfig};

/// BPE that recounts every adjacent pair from scratch before each merge.
pub fn bpe_recount(counts: &BTreeMap<String, u64>, num_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .map(|(w, &c)| (w.chars().map(String::from).collect(), c))
        .collect();
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        // BTreeMap iterates in ascending key order, so the first maximum wins ties.
        let mut best: Option<(&(String, String), u64)> = None;
        for (p, &c) in &pairs {
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let pair = pair.clone();
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    out.push(format!("{}{}", pair.0, pair.1));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push(pair);
    }
    merges
}

fn haversine_km(a: &LanguageRecord, b: &LanguageRecord) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * 6371.0 * s.sqrt().min(1.0).asin()
}

fn lineage_distance(a: &LanguageRecord, b: &LanguageRecord) -> f64 {
    let mut shared = 0;
    while shared < a.lineage.len() && shared < b.lineage.len() && a.lineage[shared] == b.lineage[shared] {
        shared += 1;
    }
    1.0 - 2.0 * shared as f64 / (a.lineage.len() + b.lineage.len()) as f64
}

/// Full distance matrix, min-max normalized per component over all pairs.
pub fn combined_matrix(registry: &Registry, config: &KnnConfig) -> Vec<Vec<f64>> {
    let recs = registry.records();
    let n = recs.len();
    let geo: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| haversine_km(&recs[i], &recs[j])).collect()).collect();
    let gen: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| lineage_distance(&recs[i], &recs[j])).collect()).collect();
    let normalize = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let lo = m.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        m.iter()
            .map(|r| r.iter().map(|&x| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 }).collect())
            .collect()
    };
    let (g, d) = (normalize(&geo), normalize(&gen));
    let (wg, wd) = (config.geodesic_weight, config.genetic_weight);
    (0..n)
        .map(|i| (0..n).map(|j| (wg * g[i][j] + wd * d[i][j]) / (wg + wd)).collect())
        .collect()
}

/// k-NN feature vector by sorting every candidate.
pub fn knn_full_sort(lang: &str, registry: &Registry, matrix: &FeatureMatrix, config: &KnnConfig) -> Vec<f64> {
    let dist = combined_matrix(registry, config);
    let pos = |code: &str| registry.records().iter().position(|r| r.code == code).unwrap();
    let me = pos(lang);
    let mut cands: Vec<(f64, String, usize)> = matrix
        .languages()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_str() != lang)
        .map(|(i, c)| (dist[me][pos(c)], c.clone(), i))
        .collect();
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let nearest: Vec<usize> = cands.iter().take(config.k).map(|c| c.2).collect();
    (0..matrix.features().len())
        .map(|f| {
            let vals: Vec<f64> = nearest.iter().filter_map(|&l| matrix.get(l, f)).map(|v| v as u8 as f64).collect();
            if !vals.is_empty() {
                return vals.iter().sum::<f64>() / vals.len() as f64;
            }
            let others: Vec<f64> = (0..matrix.languages().len())
                .filter(|&l| matrix.languages()[l] != lang)
                .filter_map(|l| matrix.get(l, f))
                .map(|v| v as u8 as f64)
                .collect();
            if others.is_empty() {
                0.5
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            }
        })
        .collect()
}

/// Symmetric relative error, floored so that near-zero gradients compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

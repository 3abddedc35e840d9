use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{EvalReport, Instance, Predictor};
use crate::error::{Error, Result};
use crate::typology::Category;

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    /// Accuracy of B minus accuracy of A on the observed instances, in `[-1, 1]`.
    pub gain: f64,
    /// Fraction of resamples on which B does not beat A.
    pub p_value: f64,
    pub resamples: usize,
}

/// Paired bootstrap over aligned prediction vectors.
pub fn paired_bootstrap(preds_a: &[bool], preds_b: &[bool], gold: &[bool], n: usize, seed: u64) -> Result<BootstrapResult> {
    if preds_a.len() != gold.len() || preds_b.len() != gold.len() {
        return Err(Error::validation(format!(
            "prediction lengths {} and {} do not match {} gold labels",
            preds_a.len(),
            preds_b.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::validation("bootstrap needs at least one instance"));
    }
    if n < MIN_RESAMPLES {
        return Err(Error::validation(format!("bootstrap needs at least {MIN_RESAMPLES} resamples, got {n}")));
    }
    // Per-instance difference in correctness: -1, 0 or 1.
    let delta: Vec<i64> = gold
        .iter()
        .zip(preds_a.iter().zip(preds_b))
        .map(|(&g, (&a, &b))| (b == g) as i64 - (a == g) as i64)
        .collect();
    let m = delta.len();
    let gain = delta.iter().sum::<i64>() as f64 / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = 0usize;
    for _ in 0..n {
        let s: i64 = (0..m).map(|_| delta[rng.gen_range(0..m)]).sum();
        if s <= 0 {
            fails += 1;
        }
    }
    Ok(BootstrapResult {
        gain,
        p_value: fails as f64 / n as f64,
        resamples: n,
    })
}

/// Aligned `(a, b, gold)` vectors of two conditions over the same instances,
/// optionally restricted to one category.
pub fn paired_instances(
    report: &EvalReport,
    a: (Predictor, bool),
    b: (Predictor, bool),
    category: Option<Category>,
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let collect = |(p, aux): (Predictor, bool)| -> Vec<(String, &Instance)> {
        report
            .feature_results(p, aux)
            .filter(|f| category.map_or(true, |c| f.category == c))
            .flat_map(|f| f.instances.iter().map(move |i| (f.feature.clone(), i)))
            .collect()
    };
    let xa = collect(a);
    let xb = collect(b);
    if xa.is_empty() {
        return Err(Error::validation(format!("no instances for {}{}", a.0, aux_label(a.1))));
    }
    if xa.len() != xb.len() || xa.iter().zip(&xb).any(|((fa, ia), (fb, ib))| fa != fb || ia.lang != ib.lang) {
        return Err(Error::validation("conditions were not evaluated on the same instances"));
    }
    Ok((
        xa.iter().map(|(_, i)| i.predicted).collect(),
        xb.iter().map(|(_, i)| i.predicted).collect(),
        xa.iter().map(|(_, i)| i.gold).collect(),
    ))
}

pub(crate) fn aux_label(aux: bool) -> &'static str {
    if aux {
        " +Aux"
    } else {
        " -Aux"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_predictions() {
        let gold = vec![true, false, true, true];
        let preds = vec![true, true, false, true];
        let r = paired_bootstrap(&preds, &preds, &gold, 1000, 1).unwrap();
        assert_eq!(r.gain, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(paired_bootstrap(&[true], &[true, false], &[true], 1000, 0).is_err());
        assert!(paired_bootstrap(&[true], &[true], &[true], 10, 0).is_err());
    }
}

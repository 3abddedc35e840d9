use std::fmt::Write as _;

use super::logreg::LogRegModel;
use crate::bpe::{EncodedPair, SubwordVocab};
use crate::error::{Error, Result};
use crate::nn::{Seq2Seq, SequenceModel};
use crate::repr::{encode_sentences, Selection};
use crate::scalar::Scalar;

/// Cell value of one node at one encoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub lang: String,
    /// Position within the language's sentence list.
    pub sentence: usize,
    pub step: usize,
    pub value: f64,
}

/// Index of the largest-magnitude weight; the first wins on ties.
pub fn select_node<T: Scalar>(weights: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, w) in weights.iter().map(|w| w.abs()).enumerate() {
        if best.map_or(true, |(_, b)| w > b) {
            best = Some((i, w));
        }
    }
    best.map(|(i, _)| i)
}

/// Encoder cell trajectories of the node the classifier weighs most.
///
/// `logreg` must have been trained on MTCell inputs, so its weights align
/// with the encoder's hidden units.
pub fn export_trajectory<T: Scalar, W: Scalar>(
    nmt: &Seq2Seq<T>,
    vocab: &SubwordVocab,
    pairs: &[EncodedPair],
    logreg: &LogRegModel<W>,
    sentences: &[(String, Selection)],
) -> Result<(usize, Vec<TrajectoryPoint>)> {
    let hidden = nmt.dims().hidden_size;
    if logreg.dim() != hidden {
        return Err(Error::validation(format!(
            "classifier for `{}` has {} inputs; an MTCell classifier needs {hidden}",
            logreg.feature,
            logreg.dim()
        )));
    }
    let node = select_node(&logreg.weights).expect("hidden size is positive");
    let mut points = Vec::new();
    for (lang, selection) in sentences {
        for (sentence, states) in encode_sentences(nmt, vocab, pairs, lang, selection)? {
            for (step, c) in states.cell.iter().enumerate() {
                points.push(TrajectoryPoint {
                    lang: lang.clone(),
                    sentence,
                    step,
                    value: c[node].as_f64(),
                });
            }
        }
    }
    Ok((node, points))
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from("lang,sentence,step,value\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.lang, p.sentence, p.step, p.value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_by_magnitude() {
        assert_eq!(select_node(&[0.1, -0.9, 0.3, 0.0]), Some(1));
        assert_eq!(select_node(&[0.2, -0.9, 0.9]), Some(1));
        assert_eq!(select_node::<f64>(&[]), None);
    }
}

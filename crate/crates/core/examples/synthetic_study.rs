//! Train a translation model on a synthetic suite and report how well each
//! language representation recovers the word-order flags.
//!
//! Usage: `cargo run --release --example synthetic_study [epochs] [seed]`

use langvec::bpe::{build_vocab, encode_corpus, learn_bpe};
use langvec::nn::{examples, train_nmt, TrainConfig};
use langvec::predict::{evaluate, make_folds, EvalConfig, KnnTable, Predictor};
use langvec::repr::{combine_mtboth, extract_mtcell, extract_mtvec, CellOptions, Method, Selection, VectorStore};
use langvec::synth::generate_suite_with;
use langvec::typology::{DistanceContext, KnnConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let suite = generate_suite_with(40, 500, 20, seed)?;
    let merges = learn_bpe(&suite.corpus, 300)?;
    let vocab = build_vocab(&suite.corpus, &merges, &suite.registry);
    let pairs = encode_corpus(&suite.corpus, &merges, &vocab);
    let train = examples(&pairs, &vocab)?;
    let config = TrainConfig { embed_size: 64, hidden_size: 64, lr: 0.003, dropout: 0.2, epochs, batch_size: 16, seed, ..TrainConfig::default() };
    let trained = train_nmt::<f64>(&train, vocab.len(), &config)?;
    eprintln!("loss per epoch: {:?}", trained.loss_curve);

    let mut store = VectorStore::new();
    for lang in suite.registry.codes() {
        let vec = extract_mtvec(&trained.model, &vocab, lang)?;
        let cell = extract_mtcell(&trained.model, &vocab, &pairs, lang, &Selection::All, CellOptions::default())?;
        store.push(combine_mtboth(&vec, &cell)?)?;
        store.push(vec)?;
        store.push(cell)?;
    }

    let folds = make_folds(suite.features.languages(), 10, seed)?;
    let knn_config = KnnConfig::default();
    let ctx = DistanceContext::new(&suite.registry, &knn_config)?;
    let knn = KnnTable::build(&suite.features, &ctx, &knn_config)?;
    let eval = EvalConfig {
        predictors: vec![Predictor::None, Predictor::Repr(Method::MtVec), Predictor::Repr(Method::MtCell), Predictor::Repr(Method::MtBoth)],
        aux: vec![false, true],
        l2: 1.0,
    };
    let report = evaluate(&suite.features, &store, Some(&knn), &folds, &eval)?;
    for f in &report.features {
        println!("{:<8} {:<5} {:<26} {:5.1}", f.predictor, if f.aux { "+aux" } else { "-aux" }, f.feature, f.accuracy);
    }
    Ok(())
}

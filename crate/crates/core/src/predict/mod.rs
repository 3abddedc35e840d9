//! Typology prediction from language vectors: logistic regression under
//! cross-validation, significance testing, report tables, and cell trajectories.

mod bootstrap;
mod eval;
mod logreg;
mod report;
mod trajectory;

pub use bootstrap::{paired_bootstrap, paired_instances, BootstrapResult, MIN_RESAMPLES};
pub use eval::{
    assemble_inputs, evaluate, make_folds, CellResult, EvalConfig, EvalReport, FeatureResult, FoldAssignment, Instance, KnnTable,
    Predictor,
};
pub use logreg::{train_logreg, LogRegModel, Standardizer};
pub use report::{describe_condition, parse_tsv, render_gains, render_table1, render_tsv, top_gains, FeatureScore, GainRow};
pub use trajectory::{export_trajectory, select_node, trajectory_csv, TrajectoryPoint};

//! Data files, vocabulary, synthetic data and experiment orchestration.

pub mod config;
pub mod data;
pub mod runner;
pub mod synthetic;
pub mod vocab;

pub use config::ExperimentConfig;
pub use runner::{
    prepare, run_ablation, run_eval, run_featurize, run_repeats, run_sweep, run_train,
    run_train_trees, AblationTable, EvalSplit, Prepared, RunResult, Summary, SweepAxis, SweepTable,
};
pub use synthetic::{generate_synthetic, LabelSignal, SignalSource, SyntheticSpec};
pub use vocab::Vocabulary;

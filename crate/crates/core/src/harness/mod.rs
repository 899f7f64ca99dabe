//! Score-matrix ingestion, calibration/test splits, and coverage evaluation.

mod eval;
mod matrix;
mod synth;

pub use eval::{
    compare, evaluate, split, split_rng, write_table_csv, Aggregate, EvalConfig, EvalReport, Method,
    MethodParams, ReportConfig, SplitResult, TestPerturbation, REPORT_SCHEMA_VERSION,
};
pub use matrix::ScoreMatrix;
pub use synth::{synthetic_matrix, SynthConfig};

//! Split conformal prediction that stays valid when the test distribution
//! drifts inside a Lévy–Prokhorov ball around the calibration distribution.
//!
//! The ball `B(epsilon, rho)` contains every distribution reachable by moving
//! all mass by at most `epsilon` and, in addition, relocating a fraction
//! `rho` of it arbitrarily. Calibrating at the worst-case quantile over that
//! ball restores the `1 - alpha` coverage guarantee.
//!
//! ```
//! use lpcp_core::{robust_threshold, Level, LpParams, ScoreSample, Threshold};
//!
//! let scores = ScoreSample::new((1..=100).map(|i| i as f64 / 100.0).collect()).unwrap();
//! let params = LpParams::new(0.02, 0.05).unwrap();
//! let t = robust_threshold(&scores, Level::new(0.1).unwrap(), params).unwrap();
//! assert_eq!(t.threshold, Threshold::Finite(0.95 + 0.02));
//! ```

pub mod baselines;
pub mod error;
mod flow;
pub mod estimation;
pub mod harness;
pub mod lp_metric;
pub mod robust;
pub mod sample;
pub mod shiftlab;

pub use baselines::{
    chi2_g, chi2_g_inv, chi2_threshold, fg_threshold, rscp_threshold, sc_threshold,
    weighted_threshold, WeightedScores,
};
pub use error::{Error, Result};
pub use estimation::{estimate_lp_params, EstimationResult, GridRow, GridStatus};
pub use flow::FlowNetwork;
pub use lp_metric::{
    lp_distance, lp_distance_with, lp_profile, tv_distance, winf_within, within, CouplingEdge,
    LpParams, Solver, TransportResult,
};
pub use robust::{
    adjusted_beta, coverage_lower_bound, prediction_set, robust_threshold, tv_threshold,
    winf_threshold, worst_case_coverage, worst_case_quantile, PredictionSet,
};
pub use sample::{conformal_quantile, read_scores, read_values, write_scores, Level, ScoreSample, Threshold, ThresholdResult};
pub use shiftlab::{
    perturb_sample, perturb_scores, propagate_params, pushforward_check, wc_coverage_family,
    wc_quantile_family, GlobalLaw, LocalLaw, Norm, PerturbationSpec, Perturbed, PushforwardReport,
};

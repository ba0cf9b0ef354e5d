//! Monte Carlo experiment driver, baselines, metrics and result files.

mod baselines;
mod metrics;
mod output;
mod runner;
mod spec;

pub use baselines::{oracle_ls_estimate, somp_baseline, somp_neighborhood, SompOutput};
pub use metrics::{
    compute_metrics, count_bit_errors, error_ratio, trial_metrics, MetricSummary, TrialMetrics, NMSE_FLOOR_DB,
    SUCCESS_RATIO,
};
pub use output::{emit_results, OutputFormat, SNR_DEFINITION};
pub use runner::{
    evaluate_trial, noise_variance, run_experiment, run_point, simulate_trial, AlgorithmRun, ResultRow, TrialData,
};
pub use spec::{Algorithm, ExperimentSpec, SweepPoint, TmaxPolicy};

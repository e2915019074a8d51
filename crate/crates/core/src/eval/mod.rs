//! Metrics, reports and the file-backed experiment driver.

pub mod experiment;
mod metrics;
mod report;

pub use experiment::run_experiment;
pub use metrics::{accuracy, auc, top_k_count, top_k_precision};
pub use report::{
    top_k_key, write_report, AblationReport, AblationRow, Confusion, EvalReport, Metrics, NoiseReport, NoiseRow,
    PoolSummary, Validate, SCHEMA_VERSION, TOP_K_RULE,
};

//! Experimental protocols over the synthetic benchmark.

mod bench;
mod eval;
mod gradcheck;
mod report;

pub use bench::{
    default_benchmark, generate_domain, generate_test_sets, pretraining_pairs, LabeledDataset, LabeledExample,
    Manifest,
};
pub use eval::{
    ablate_augmentations, adapt_and_eval, adapt_on_seed, adaptation_indices, cross_domain_grid, evaluate_zero_shot,
    AblationReport, CrossDomainGrid, EncodedSet, EvalReport, GridCell, SourceSummary, ZeroShotEntry, ZeroShotReport, zero_shot_report,
};
pub use report::{emit_report, render_csv, render_json, Report, ReportFormat, ReportRow};
pub use gradcheck::{gradcheck_sweep, GradcheckReport, GradcheckTrial, GRADCHECK_EPS, GRADCHECK_TOLERANCE};

//! Token-budget scaling curves, the demo corpus and the gradient
//! verification suite.

mod budget;
mod demo;
mod report;
mod suite;

pub use budget::{carbon_chain, token_budget_curve, BudgetConfig, BudgetCurve, BudgetRow, GateMode, Method, CSV_HEADER};
pub use demo::{
    build_structure, demo_corpus, demo_language_tokens, demo_molecules, DemoRecord, Source, DEMO_MOLECULES,
    DEMO_RECORDS,
};
pub use report::{patch_report, PatchReport};
pub use suite::{
    distance_gradient_case, encoder_case, gradient_suite, pipeline_case, pooling_gradient_case, soft_assign_case,
    softmax_jacobian_case, CheckCase, SuiteReport, CLOSED_FORM_TOLERANCE, PIPELINE_INSTANCES, PIPELINE_STEP,
    PIPELINE_TOLERANCE,
};

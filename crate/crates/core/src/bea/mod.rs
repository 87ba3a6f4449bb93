//! The two-step update around a growth step and its continuous shadow.
//!
//! Before fusion the sources train on `L₁`, the loss of their average;
//! afterwards the fused network trains on `L₂` with a learning rate `α`
//! times larger. [`composite_update`] takes one step of each, and
//! [`modified_flow`] integrates the modified equation that tracks this
//! composite to third order when the Lie bracket term is included and to
//! second order without it. [`BeaProblem`] ties the losses to a fused
//! network and checks the gradient identities at the fusion point.

mod flow;
mod lemmas;
mod problem;
mod report;

pub use flow::{
    composite_update, flow_field, log_log_slope, modified_flow, modified_gradient, order_of_accuracy, AlphaRow,
    FlowResult, LadderPoint, OrderOfAccuracy, FLOW_TOLERANCE, MAX_SUBSTEPS,
};
pub use lemmas::{is_smooth, SameGradient};
pub use problem::{BeaProblem, ModifiedLossBound};
pub(crate) use report::csv_error;
pub use report::{alpha_table_csv, run_verification, toy_verification_problem, BEAConfig, BEAReport, DEFAULT_LADDER};

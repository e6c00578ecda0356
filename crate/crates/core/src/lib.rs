//! Budgeted allocation of visual tokens across video frames.
//!
//! Long videos produce far more visual tokens than a language model's
//! context window can hold. This crate decides how to spend a fixed visual
//! budget over sampled frames:
//!
//! - [`budget`] derives the visual budget from context-window accounting;
//! - [`routers`] hosts the reference policy and frame-relevance heads, their
//!   losses, training, and the score-file interchange format;
//! - [`allocator`] turns a policy decision plus per-frame relevance into a
//!   concrete keep/scale/drop plan under the budget;
//! - [`sequencer`] mean-pools frame token grids and splices them back into
//!   the prompt;
//! - [`oracle`] re-derives the allocation independently and verifies plans;
//! - [`workload`], [`sweep`] and [`report`] generate synthetic videos, run
//!   budget-sensitivity sweeps, and emit deterministic reports.

pub mod allocator;
pub mod budget;
pub mod oracle;
pub mod report;
pub mod routers;
pub mod sequencer;
pub mod sweep;
pub mod workload;

pub use allocator::{AllocationPlan, KeptFrame, RelevancePartition, ScaleConfig};
pub use budget::{compute_budget, BudgetConfig};
pub use routers::{FeatureVector, FrameScore, HeadKind, Policy, PolicyDecision, RouterModel};
pub use sequencer::{PromptTemplate, TokenGrid, TokenSequence};
pub use workload::{Workload, WorkloadSpec};

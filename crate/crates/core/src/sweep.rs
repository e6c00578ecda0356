//! Budget-sensitivity sweeps and the accounting behind them.
//!
//! A sweep crosses workloads with (frame count, scales) configurations and a
//! budget grid, scores each cell with either the ground-truth relevance or a
//! pair of trained routers, allocates, and reports retained-evidence utility
//! alongside token and cost accounting. Allocation failures become row-level
//! statuses; a sweep never aborts. Rows come out sorted by (config, budget),
//! so execution order can never affect a report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{allocate, AllocError, AllocationPlan, ScaleConfig};
use crate::routers::{image_forward, semantic_forward, Policy, RouterModel};
use crate::workload::Workload;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SweepError {
    #[error("plan covers {plan} frames, workload has {workload}")]
    ShapeMismatch { plan: usize, workload: usize },
}

/// One category's forced-policy comparison: the accuracy each policy reaches
/// on that category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ABRecord {
    pub category: String,
    pub acc_fragment: f64,
    pub acc_global: f64,
}

/// Accuracy differences within this distance of the margin count as "at the
/// margin": decimal inputs like 0.65 - 0.60 must compare by their decimal
/// values, not by the last bit of their binary representation.
const MARGIN_EPS: f64 = 1e-9;

/// Label-derivation rule: Fragment only when the fragment policy beats the
/// global policy by strictly more than the margin `tau`. Ties and
/// at-the-margin differences stay Global.
pub fn derive_policy_label(record: &ABRecord, tau: f64) -> Policy {
    if record.acc_fragment - record.acc_global - tau > MARGIN_EPS {
        Policy::Fragment
    } else {
        Policy::Global
    }
}

/// Fidelity-weighted fraction of ground-truth evidence a plan retains.
///
/// A frame kept at scale `s` retains `1/s^2` of its fidelity; a dropped
/// frame retains none. A workload with no evidence scores 1: there was
/// nothing to lose.
pub fn utility(plan: &AllocationPlan, workload: &Workload) -> Result<f64, SweepError> {
    if plan.frame_count() != workload.frame_count() {
        return Err(SweepError::ShapeMismatch {
            plan: plan.frame_count(),
            workload: workload.frame_count(),
        });
    }
    let total: f64 = workload.frames.iter().map(|f| f.evidence).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let retained: f64 = plan
        .kept
        .iter()
        .map(|k| {
            let fidelity = 1.0 / (k.scale as f64 * k.scale as f64);
            workload.frames[k.frame].evidence * fidelity
        })
        .sum();
    Ok(retained / total)
}

/// Percent of dense tokens removed, rounded to one decimal for reporting.
pub fn token_reduction(dense_tokens: u64, compressed_tokens: u64) -> f64 {
    assert!(dense_tokens > 0, "dense token count must be positive");
    let pct = 100.0 * (1.0 - compressed_tokens as f64 / dense_tokens as f64);
    (pct * 10.0).round() / 10.0
}

/// Cost-model constants. The router overhead is the token-equivalent of the
/// routing pass, configurable rather than hard-coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub router_overhead_units: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            router_overhead_units: 1290,
        }
    }
}

/// Token-linear cost proxy: prefill scales with the tokens kept, plus a
/// fixed routing overhead when the routers ran.
pub fn cost_proxy(plan: &AllocationPlan, router_used: bool, cost: &CostConfig) -> u64 {
    plan.total_tokens + if router_used { cost.router_overhead_units } else { 0 }
}

/// One sweep cell configuration: a frame count and the scales used at it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub label: String,
    pub frames: usize,
    pub scales: ScaleConfig,
}

/// How sweep cells score frames and pick the policy.
#[derive(Debug, Clone)]
pub enum SweepScorer {
    /// Use the workload's ground-truth relevance and policy label.
    GroundTruth,
    /// Run a trained semantic/image router pair.
    Trained {
        semantic: RouterModel,
        image: RouterModel,
    },
}

/// One report row. `frames` is the number of frames the plan retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: String,
    pub budget: u64,
    pub frames: usize,
    pub total_tokens: u64,
    pub utility: f64,
    pub reduction_pct: f64,
    pub cost_units: u64,
    pub status: String,
}

fn status_of(err: &AllocError) -> String {
    match err {
        AllocError::BudgetTooSmall { .. } => "budget_too_small".into(),
        other => format!("alloc_error: {other}"),
    }
}

fn run_cell(
    workload: &Workload,
    config: &SweepConfig,
    budget: u64,
    scorer: &SweepScorer,
    cost: &CostConfig,
) -> SweepRow {
    let dense = workload.frame_count() as u64 * workload.n;
    let router_used = matches!(scorer, SweepScorer::Trained { .. });
    let mut row = SweepRow {
        config: config.label.clone(),
        budget,
        frames: 0,
        total_tokens: 0,
        utility: 0.0,
        reduction_pct: token_reduction(dense, 0),
        cost_units: cost_proxy(
            &AllocationPlan {
                policy: Policy::Global,
                kept: vec![],
                dropped: vec![],
                total_tokens: 0,
                audit: Default::default(),
            },
            router_used,
            cost,
        ),
        status: "ok".into(),
    };

    let (decision, scores) = match scorer {
        SweepScorer::GroundTruth => (
            workload.ground_truth_decision(),
            workload.ground_truth_scores(),
        ),
        SweepScorer::Trained { semantic, image } => {
            let decision = match semantic_forward(semantic, &workload.query) {
                Ok(d) => d,
                Err(e) => {
                    row.status = format!("router_error: {e}");
                    return row;
                }
            };
            let mut scores = Vec::with_capacity(workload.frame_count());
            for frame in &workload.frames {
                match image_forward(image, frame.index, &frame.features) {
                    Ok(s) => scores.push(s),
                    Err(e) => {
                        row.status = format!("router_error: {e}");
                        return row;
                    }
                }
            }
            (decision, scores)
        }
    };

    match allocate(&decision, &scores, workload.n, budget, &config.scales) {
        Ok(plan) => {
            row.frames = plan.kept.len();
            row.total_tokens = plan.total_tokens;
            row.utility = utility(&plan, workload).expect("plan came from this workload");
            row.reduction_pct = token_reduction(dense, plan.total_tokens);
            row.cost_units = cost_proxy(&plan, router_used, cost);
        }
        Err(e) => row.status = status_of(&e),
    }
    row
}

/// Runs every (config, budget, matching workload) cell. A workload matches a
/// config when its frame count equals the config's. Rows are ordered by
/// (config, budget) with workload order as the final tiebreak.
pub fn budget_sweep(
    workloads: &[Workload],
    configs: &[SweepConfig],
    budgets: &[u64],
    scorer: &SweepScorer,
    cost: &CostConfig,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for config in configs {
        for &budget in budgets {
            for workload in workloads
                .iter()
                .filter(|w| w.frame_count() == config.frames)
            {
                rows.push(run_cell(workload, config, budget, scorer, cost));
            }
        }
    }
    rows
}

//! Independent reference allocator and plan verifier.
//!
//! [`reference_allocate`] re-derives the two-tier allocation from the
//! priority rule itself — guarantee critical frames, then background, then
//! evenly sample whichever tier the budget truncates — deliberately sharing
//! no code with the production allocator: grid arithmetic is done by integer
//! square-root scan, tier capacities by linear search instead of division,
//! and sample positions through the floating-point form of the rule. Two
//! implementations agreeing over an exhaustive small domain is the
//! correctness argument for both.

use serde::{Deserialize, Serialize};

use crate::allocator::{
    AllocError, AllocationPlan, KeptFrame, PlanAudit, RelevancePartition, ScaleConfig,
};
use crate::routers::Policy;

/// One failed plan check. Violations are data, not errors: a verifier run
/// returns every problem it can see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Plan spends more than the budget.
    BudgetExceeded,
    /// A background frame survives while a critical frame was dropped.
    PriorityInversion,
    /// A kept frame has the wrong scale or a token count that does not
    /// match its scale.
    WrongScale,
    /// Kept and dropped do not form an ordered disjoint cover of the frames.
    BadPartition,
    /// A tier keeps a different number of frames than its branch allows,
    /// or the total disagrees with the kept entries.
    WrongCount,
    /// A truncated tier kept frames at positions other than the even
    /// sampling rule's.
    NonUniformSample,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::BudgetExceeded => "BudgetExceeded",
            Self::PriorityInversion => "PriorityInversion",
            Self::WrongScale => "WrongScale",
            Self::BadPartition => "BadPartition",
            Self::WrongCount => "WrongCount",
            Self::NonUniformSample => "NonUniformSample",
        };
        f.write_str(name)
    }
}

fn violation(kind: ViolationKind, detail: impl Into<String>) -> Violation {
    Violation {
        kind,
        detail: detail.into(),
    }
}

/// Grid side by scanning for the integer square root; `None` when `n` is
/// not a perfect square.
fn grid_side(n: u64) -> Option<u64> {
    let mut g = 0u64;
    while g * g < n {
        g += 1;
    }
    (g * g == n).then_some(g)
}

/// Tokens left after pooling an `n`-token square frame at scale `s`,
/// computed as the squared pooled side.
fn pooled_tokens(n: u64, s: u32) -> Option<u64> {
    let side = grid_side(n)?;
    if s == 0 || side % s as u64 != 0 {
        return None;
    }
    let pooled_side = side / s as u64;
    Some(pooled_side * pooled_side)
}

/// The published even-sampling rule in its floating-point form:
/// position `j` maps to index `floor((j + 0.5) * m / k)`.
fn even_positions(candidates: &[usize], k: usize) -> Vec<usize> {
    let m = candidates.len() as f64;
    (0..k)
        .map(|j| candidates[((j as f64 + 0.5) * m / k as f64).floor() as usize])
        .collect()
}

/// Largest count of `per_frame`-cost items that fits in what remains of the
/// budget after `base` is spent, found by linear search.
fn max_fitting(base: u64, per_frame: u64, limit: usize, budget: u64) -> usize {
    let mut k = 0;
    while k < limit && base + (k as u64 + 1) * per_frame <= budget {
        k += 1;
    }
    k
}

/// Brute-force reference for the two-tier allocation.
///
/// Follows the priority prose directly: try to keep everything; else keep
/// all critical frames and as many evenly spaced background frames as fit;
/// else discard the background and evenly sample the critical set. Guarded
/// to small instances — this exists for exhaustive comparison, not for use.
pub fn reference_allocate(
    partition: &RelevancePartition,
    n: u64,
    budget: u64,
    scales: &ScaleConfig,
) -> Result<AllocationPlan, AllocError> {
    let t = partition.len();
    assert!(t <= 64, "reference allocator is for small instances only");

    let bad_geometry = |s: u32| AllocError::InvalidGeometry { n, scale: s };
    let per_critical =
        pooled_tokens(n, scales.critical).ok_or_else(|| bad_geometry(scales.critical))?;
    let per_background =
        pooled_tokens(n, scales.irrelevant).ok_or_else(|| bad_geometry(scales.irrelevant))?;

    let critical_cost: u64 = partition.relevant.iter().map(|_| per_critical).sum();
    let background_cost: u64 = partition.irrelevant.iter().map(|_| per_background).sum();

    let mut kept: Vec<KeptFrame> = Vec::new();
    let mut audit = PlanAudit {
        critical_cost: Some(critical_cost),
        background_cost: Some(background_cost),
        k_sampled: None,
    };

    if critical_cost + background_cost <= budget {
        // Priority 1 and 2 both satisfiable in full.
        for &frame in &partition.relevant {
            kept.push(KeptFrame {
                frame,
                scale: scales.critical,
                tokens: per_critical,
            });
        }
        for &frame in &partition.irrelevant {
            kept.push(KeptFrame {
                frame,
                scale: scales.irrelevant,
                tokens: per_background,
            });
        }
    } else if critical_cost <= budget {
        // Priority 1 in full; priority 2 gets whatever still fits.
        let k = max_fitting(
            critical_cost,
            per_background,
            partition.irrelevant.len(),
            budget,
        );
        audit.k_sampled = Some(k as u64);
        for &frame in &partition.relevant {
            kept.push(KeptFrame {
                frame,
                scale: scales.critical,
                tokens: per_critical,
            });
        }
        for frame in even_positions(&partition.irrelevant, k) {
            kept.push(KeptFrame {
                frame,
                scale: scales.irrelevant,
                tokens: per_background,
            });
        }
    } else {
        // Strategic discarding: background goes entirely, the critical set
        // itself is evenly sampled.
        let k = max_fitting(0, per_critical, partition.relevant.len(), budget);
        if k == 0 {
            return Err(AllocError::BudgetTooSmall {
                budget,
                per_frame: per_critical,
            });
        }
        audit.k_sampled = Some(k as u64);
        for frame in even_positions(&partition.relevant, k) {
            kept.push(KeptFrame {
                frame,
                scale: scales.critical,
                tokens: per_critical,
            });
        }
    }

    kept.sort_by_key(|f| f.frame);
    let retained: Vec<usize> = kept.iter().map(|f| f.frame).collect();
    let dropped = (0..t).filter(|i| !retained.contains(i)).collect();
    let total_tokens = kept.iter().map(|f| f.tokens).sum();
    Ok(AllocationPlan {
        policy: Policy::Fragment,
        kept,
        dropped,
        total_tokens,
        audit,
    })
}

/// Checks a plan against everything the allocation contract promises.
/// Returns the empty list iff the plan is consistent with the instance.
pub fn verify_plan(
    plan: &AllocationPlan,
    partition: &RelevancePartition,
    n: u64,
    budget: u64,
    scales: &ScaleConfig,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = partition.len();

    // Partition integrity: kept and dropped must be an ordered disjoint
    // cover of 0..t.
    let kept_frames: Vec<usize> = plan.kept.iter().map(|f| f.frame).collect();
    let ascending =
        |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&f| f < t);
    let mut covered = vec![0usize; t];
    for &f in kept_frames.iter().chain(&plan.dropped) {
        if f < t {
            covered[f] += 1;
        }
    }
    if !ascending(&kept_frames)
        || !ascending(&plan.dropped)
        || covered.iter().any(|&c| c != 1)
    {
        out.push(violation(
            ViolationKind::BadPartition,
            format!("kept {kept_frames:?} + dropped {:?} is not an ordered cover of 0..{t}", plan.dropped),
        ));
        return out; // frame-level checks below assume a sane cover
    }

    // Budget bound and total consistency.
    if plan.total_tokens > budget {
        out.push(violation(
            ViolationKind::BudgetExceeded,
            format!("total_tokens {} > budget {budget}", plan.total_tokens),
        ));
    }
    let sum: u64 = plan.kept.iter().map(|f| f.tokens).sum();
    if sum != plan.total_tokens {
        out.push(violation(
            ViolationKind::WrongCount,
            format!("total_tokens {} disagrees with kept sum {sum}", plan.total_tokens),
        ));
    }

    // Scale assignment and per-frame token counts.
    let relevant = |frame: usize| partition.relevant.binary_search(&frame).is_ok();
    for f in &plan.kept {
        let expected_scale = match plan.policy {
            Policy::Global => scales.global,
            Policy::Fragment if relevant(f.frame) => scales.critical,
            Policy::Fragment => scales.irrelevant,
        };
        if f.scale != expected_scale {
            out.push(violation(
                ViolationKind::WrongScale,
                format!("frame {} kept at scale {} instead of {expected_scale}", f.frame, f.scale),
            ));
            continue;
        }
        match pooled_tokens(n, f.scale) {
            Some(tokens) if tokens == f.tokens => {}
            _ => out.push(violation(
                ViolationKind::WrongScale,
                format!("frame {} claims {} tokens at scale {}", f.frame, f.tokens, f.scale),
            )),
        }
    }

    match plan.policy {
        Policy::Fragment => {
            let kept_relevant: Vec<usize> = kept_frames
                .iter()
                .copied()
                .filter(|&f| relevant(f))
                .collect();
            let kept_background: Vec<usize> = kept_frames
                .iter()
                .copied()
                .filter(|&f| !relevant(f))
                .collect();

            let dropped_relevant = partition.relevant.len() - kept_relevant.len();
            if dropped_relevant > 0 && !kept_background.is_empty() {
                out.push(violation(
                    ViolationKind::PriorityInversion,
                    format!(
                        "{dropped_relevant} critical frame(s) dropped while {} background frame(s) kept",
                        kept_background.len()
                    ),
                ));
            }

            let (Some(per_critical), Some(per_background)) = (
                pooled_tokens(n, scales.critical),
                pooled_tokens(n, scales.irrelevant),
            ) else {
                out.push(violation(
                    ViolationKind::WrongScale,
                    format!("scales {scales:?} do not fit an {n}-token grid"),
                ));
                return out;
            };
            let critical_cost = partition.relevant.len() as u64 * per_critical;
            let background_cost = partition.irrelevant.len() as u64 * per_background;

            // Branch-correct tier counts, and even sampling on the
            // truncated tier.
            if critical_cost + background_cost <= budget {
                if kept_relevant.len() != partition.relevant.len()
                    || kept_background.len() != partition.irrelevant.len()
                {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        format!(
                            "budget fits everything, plan kept {}/{} critical and {}/{} background",
                            kept_relevant.len(),
                            partition.relevant.len(),
                            kept_background.len(),
                            partition.irrelevant.len()
                        ),
                    ));
                }
            } else if critical_cost <= budget {
                let k = max_fitting(
                    critical_cost,
                    per_background,
                    partition.irrelevant.len(),
                    budget,
                );
                if kept_relevant.len() != partition.relevant.len()
                    || kept_background.len() != k
                {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        format!(
                            "expected all {} critical + {k} sampled background, got {} + {}",
                            partition.relevant.len(),
                            kept_relevant.len(),
                            kept_background.len()
                        ),
                    ));
                } else if kept_background != even_positions(&partition.irrelevant, k) {
                    out.push(violation(
                        ViolationKind::NonUniformSample,
                        format!("background frames {kept_background:?} are not the even sample"),
                    ));
                }
            } else {
                let k = max_fitting(0, per_critical, partition.relevant.len(), budget);
                if k == 0 {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        "budget fits no critical frame; no valid plan exists".to_string(),
                    ));
                } else if kept_relevant.len() != k || !kept_background.is_empty() {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        format!(
                            "expected {k} sampled critical + 0 background, got {} + {}",
                            kept_relevant.len(),
                            kept_background.len()
                        ),
                    ));
                } else if kept_relevant != even_positions(&partition.relevant, k) {
                    out.push(violation(
                        ViolationKind::NonUniformSample,
                        format!("critical frames {kept_relevant:?} are not the even sample"),
                    ));
                }
            }
        }
        Policy::Global => {
            let Some(per_frame) = pooled_tokens(n, scales.global) else {
                out.push(violation(
                    ViolationKind::WrongScale,
                    format!("global scale {} does not fit an {n}-token grid", scales.global),
                ));
                return out;
            };
            if t as u64 * per_frame <= budget {
                if kept_frames.len() != t {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        format!("budget fits all {t} frames, plan kept {}", kept_frames.len()),
                    ));
                }
            } else {
                let k = max_fitting(0, per_frame, t, budget);
                if k == 0 {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        "budget fits no pooled frame; no valid plan exists".to_string(),
                    ));
                } else if kept_frames.len() != k {
                    out.push(violation(
                        ViolationKind::WrongCount,
                        format!("expected {k} subsampled frames, got {}", kept_frames.len()),
                    ));
                } else {
                    let all: Vec<usize> = (0..t).collect();
                    if kept_frames != even_positions(&all, k) {
                        out.push(violation(
                            ViolationKind::NonUniformSample,
                            format!("frames {kept_frames:?} are not the even sample"),
                        ));
                    }
                }
            }
        }
    }

    out
}

/// Outcome of an exhaustive allocator-vs-reference comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompareSummary {
    pub cases: u64,
    pub mismatches: u64,
    /// Description of the first disagreement, for debugging.
    pub first_mismatch: Option<String>,
}

impl CompareSummary {
    pub fn merge(&mut self, other: CompareSummary) {
        self.cases += other.cases;
        self.mismatches += other.mismatches;
        if self.first_mismatch.is_none() {
            self.first_mismatch = other.first_mismatch;
        }
    }
}

/// Runs the allocator and the reference over every relevance pattern of `t`
/// frames, every budget, and every `(critical, irrelevant)` scale pair, and
/// counts disagreements. Plans compare structurally; errors must match too.
pub fn exhaustive_compare(
    t: usize,
    n: u64,
    scale_sets: &[(u32, u32)],
    budgets: &[u64],
) -> CompareSummary {
    assert!(t <= 12, "exhaustive comparison is exponential in t");
    let mut summary = CompareSummary {
        cases: 0,
        mismatches: 0,
        first_mismatch: None,
    };

    for pattern in 0u32..(1 << t) {
        let flags: Vec<bool> = (0..t).map(|i| pattern >> i & 1 == 1).collect();
        let partition = RelevancePartition::from_flags(&flags);
        for &(critical, irrelevant) in scale_sets {
            let scales = ScaleConfig {
                global: irrelevant,
                critical,
                irrelevant,
            };
            for &budget in budgets {
                summary.cases += 1;
                let got = crate::allocator::allocate_fragment(&partition, n, budget, &scales);
                let want = reference_allocate(&partition, n, budget, &scales);
                let agree = match (&got, &want) {
                    (Ok(a), Ok(b)) => a.same_allocation(b),
                    (Err(a), Err(b)) => a == b,
                    _ => false,
                };
                if !agree {
                    summary.mismatches += 1;
                    summary.first_mismatch.get_or_insert_with(|| {
                        format!(
                            "t={t} pattern={pattern:b} scales=({critical},{irrelevant}) budget={budget}: {got:?} vs {want:?}"
                        )
                    });
                }
            }
        }
    }
    summary
}

/// Instance file consumed by the `verify` subcommand: the allocation inputs
/// a plan claims to answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: u64,
    pub budget: u64,
    pub scales: ScaleConfig,
    /// One 0/1 relevance decision per frame, index order.
    pub relevance: Vec<u8>,
}

impl InstanceFile {
    pub fn partition(&self) -> RelevancePartition {
        RelevancePartition::from_flags(
            &self.relevance.iter().map(|&r| r == 1).collect::<Vec<_>>(),
        )
    }
}

//! Budget-constrained token allocation across frames.
//!
//! Two policies spend the visual budget. The Global policy pools every frame
//! at one coverage scale and falls back to uniform temporal subsampling when
//! even that exceeds the budget. The Fragment policy runs a two-tier scheme
//! driven by per-frame relevance decisions, with a strict priority order:
//! keep every relevant frame at the high-fidelity scale first, spend what
//! remains on evenly spaced background frames at the aggressive scale, and
//! under extreme pressure drop the background entirely and evenly subsample
//! the relevant set itself.
//!
//! Frames are square token grids: a frame of `n` raw tokens pooled at scale
//! `s` contributes exactly `n / s^2` tokens, so all accounting is integer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routers::{FrameScore, Policy, PolicyDecision};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("{n} tokens per frame is not a square grid divisible by scale {scale}")]
    InvalidGeometry { n: u64, scale: u32 },
    #[error("scale config invalid: {0}")]
    InvalidScales(String),
    #[error("cannot sample {requested} items from {available} candidates")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("budget {budget} is below one frame at the required scale ({per_frame} tokens)")]
    BudgetTooSmall { budget: u64, per_frame: u64 },
    #[error("frame {0} appears more than once in the score list")]
    DuplicateFrame(usize),
    #[error("frame {frame} is out of range for {t} scored frames")]
    FrameOutOfRange { frame: usize, t: usize },
    #[error("partition is not an ordered disjoint cover of 0..{t}")]
    InvalidPartition { t: usize },
}

/// Pooling scales for the two policies.
///
/// `critical <= irrelevant`: frames that carry evidence are never pooled
/// more aggressively than frames that do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleConfig {
    /// Uniform scale used by the Global policy.
    pub global: u32,
    /// High-fidelity scale for relevant frames under the Fragment policy.
    pub critical: u32,
    /// Aggressive scale for irrelevant frames under the Fragment policy.
    pub irrelevant: u32,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            global: 2,
            critical: 1,
            irrelevant: 4,
        }
    }
}

impl ScaleConfig {
    pub fn new(global: u32, critical: u32, irrelevant: u32) -> Result<Self, AllocError> {
        let cfg = Self {
            global,
            critical,
            irrelevant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if self.global == 0 || self.critical == 0 || self.irrelevant == 0 {
            return Err(AllocError::InvalidScales("scales must be positive".into()));
        }
        if self.critical > self.irrelevant {
            return Err(AllocError::InvalidScales(format!(
                "critical scale {} coarser than irrelevant scale {}",
                self.critical, self.irrelevant
            )));
        }
        Ok(())
    }

    /// All three scales must divide the frame grid side.
    pub fn validate_for(&self, n: u64) -> Result<(), AllocError> {
        self.validate()?;
        for s in [self.global, self.critical, self.irrelevant] {
            tokens_at_scale(n, s)?;
        }
        Ok(())
    }
}

/// Frame indices split by the relevance decision, each side in ascending
/// temporal order, together covering `0..t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevancePartition {
    pub relevant: Vec<usize>,
    pub irrelevant: Vec<usize>,
}

impl RelevancePartition {
    pub fn new(relevant: Vec<usize>, irrelevant: Vec<usize>) -> Result<Self, AllocError> {
        let t = relevant.len() + irrelevant.len();
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&relevant) || !ascending(&irrelevant) {
            return Err(AllocError::InvalidPartition { t });
        }
        let mut seen = vec![false; t];
        for &f in relevant.iter().chain(&irrelevant) {
            if f >= t || seen[f] {
                return Err(AllocError::InvalidPartition { t });
            }
            seen[f] = true;
        }
        Ok(Self {
            relevant,
            irrelevant,
        })
    }

    /// Partition from one relevance flag per frame, index order.
    pub fn from_flags(flags: &[bool]) -> Self {
        let mut relevant = Vec::new();
        let mut irrelevant = Vec::new();
        for (i, &r) in flags.iter().enumerate() {
            if r {
                relevant.push(i);
            } else {
                irrelevant.push(i);
            }
        }
        Self {
            relevant,
            irrelevant,
        }
    }

    /// Partition from a score list that must cover `0..T` exactly once.
    pub fn from_scores(scores: &[FrameScore]) -> Result<Self, AllocError> {
        let t = scores.len();
        let mut flags = vec![None; t];
        for s in scores {
            if s.frame_index >= t {
                return Err(AllocError::FrameOutOfRange {
                    frame: s.frame_index,
                    t,
                });
            }
            if flags[s.frame_index].is_some() {
                return Err(AllocError::DuplicateFrame(s.frame_index));
            }
            flags[s.frame_index] = Some(s.is_relevant());
        }
        Ok(Self::from_flags(
            &flags.into_iter().map(Option::unwrap).collect::<Vec<_>>(),
        ))
    }

    pub fn len(&self) -> usize {
        self.relevant.len() + self.irrelevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One retained frame with its pooling scale and resulting token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptFrame {
    pub frame: usize,
    pub scale: u32,
    pub tokens: u64,
}

/// Cost bookkeeping carried alongside a plan for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanAudit {
    /// Cost of keeping every relevant frame at the critical scale.
    #[serde(rename = "c1")]
    pub critical_cost: Option<u64>,
    /// Cost of keeping every irrelevant frame at the aggressive scale.
    #[serde(rename = "c0")]
    pub background_cost: Option<u64>,
    /// How many frames the truncated tier sampled, when one was truncated.
    pub k_sampled: Option<u64>,
}

/// The allocation decision for one video: which frames survive, at what
/// scale, and what the sequence costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub policy: Policy,
    pub kept: Vec<KeptFrame>,
    pub dropped: Vec<usize>,
    pub total_tokens: u64,
    #[serde(flatten)]
    pub audit: PlanAudit,
}

impl AllocationPlan {
    /// Total number of frames the plan accounts for.
    pub fn frame_count(&self) -> usize {
        self.kept.len() + self.dropped.len()
    }

    /// Equality on the fields that define the allocation itself.
    pub fn same_allocation(&self, other: &Self) -> bool {
        self.policy == other.policy && self.kept == other.kept && self.dropped == other.dropped
    }
}

/// Tokens contributed by one frame of `n` raw tokens pooled at scale `s`.
///
/// The frame is a square grid, so `n` must be a perfect square and `s` must
/// divide its side.
pub fn tokens_at_scale(n: u64, s: u32) -> Result<u64, AllocError> {
    let side = (n as f64).sqrt().round() as u64;
    if side * side != n || s == 0 || !side.is_multiple_of(s as u64) {
        return Err(AllocError::InvalidGeometry { n, scale: s });
    }
    Ok(n / (s as u64 * s as u64))
}

/// Picks `k` evenly spaced candidates: position `j` maps to
/// `candidates[floor((j + 0.5) * M / k)]`. Output is strictly ascending,
/// spans the timeline, and returns the input unchanged when `k = M`.
pub fn uniform_sample(candidates: &[usize], k: usize) -> Result<Vec<usize>, AllocError> {
    let m = candidates.len();
    if k > m {
        return Err(AllocError::SampleTooLarge {
            requested: k,
            available: m,
        });
    }
    // floor((j + 0.5) * m / k) == (2j + 1) * m / (2k) in exact integer math.
    Ok((0..k).map(|j| candidates[(2 * j + 1) * m / (2 * k)]).collect())
}

fn assemble(
    policy: Policy,
    t: usize,
    mut kept: Vec<KeptFrame>,
    audit: PlanAudit,
) -> AllocationPlan {
    kept.sort_by_key(|f| f.frame);
    let mut retained = vec![false; t];
    for f in &kept {
        retained[f.frame] = true;
    }
    let dropped = (0..t).filter(|&i| !retained[i]).collect();
    let total_tokens = kept.iter().map(|f| f.tokens).sum();
    AllocationPlan {
        policy,
        kept,
        dropped,
        total_tokens,
        audit,
    }
}

/// Two-tier allocation under the priority hierarchy.
///
/// With `c1` the cost of all relevant frames at the critical scale and `c0`
/// the cost of all irrelevant frames at the aggressive scale:
/// 1. `c1 + c0 <= budget`: keep everything.
/// 2. `c1 <= budget`: keep all relevant frames, spend the remainder on
///    `floor((budget - c1) / per_background_frame)` evenly sampled
///    background frames.
/// 3. otherwise: drop the background and keep
///    `floor(budget / per_critical_frame)` evenly sampled relevant frames;
///    error if not even one fits.
pub fn allocate_fragment(
    partition: &RelevancePartition,
    n: u64,
    budget: u64,
    scales: &ScaleConfig,
) -> Result<AllocationPlan, AllocError> {
    scales.validate_for(n)?;
    let per_critical = tokens_at_scale(n, scales.critical)?;
    let per_background = tokens_at_scale(n, scales.irrelevant)?;
    let critical_cost = partition.relevant.len() as u64 * per_critical;
    let background_cost = partition.irrelevant.len() as u64 * per_background;
    let t = partition.len();

    let keep_at = |frames: &[usize], scale: u32, tokens: u64| -> Vec<KeptFrame> {
        frames
            .iter()
            .map(|&frame| KeptFrame {
                frame,
                scale,
                tokens,
            })
            .collect()
    };

    let mut audit = PlanAudit {
        critical_cost: Some(critical_cost),
        background_cost: Some(background_cost),
        k_sampled: None,
    };

    let kept = if critical_cost + background_cost <= budget {
        let mut kept = keep_at(&partition.relevant, scales.critical, per_critical);
        kept.extend(keep_at(&partition.irrelevant, scales.irrelevant, per_background));
        kept
    } else if critical_cost <= budget {
        let k = ((budget - critical_cost) / per_background) as usize;
        audit.k_sampled = Some(k as u64);
        let sampled = uniform_sample(&partition.irrelevant, k)?;
        let mut kept = keep_at(&partition.relevant, scales.critical, per_critical);
        kept.extend(keep_at(&sampled, scales.irrelevant, per_background));
        kept
    } else {
        let k = (budget / per_critical) as usize;
        if k == 0 {
            return Err(AllocError::BudgetTooSmall {
                budget,
                per_frame: per_critical,
            });
        }
        audit.k_sampled = Some(k as u64);
        let sampled = uniform_sample(&partition.relevant, k)?;
        keep_at(&sampled, scales.critical, per_critical)
    };

    Ok(assemble(Policy::Fragment, t, kept, audit))
}

/// Uniform coverage: every frame at the global scale, or an evenly spaced
/// subset when even that exceeds the budget. The fallback only subsamples
/// temporally; it never coarsens the scale.
pub fn allocate_global(
    t: usize,
    n: u64,
    budget: u64,
    global_scale: u32,
) -> Result<AllocationPlan, AllocError> {
    let per_frame = tokens_at_scale(n, global_scale)?;
    let all: Vec<usize> = (0..t).collect();

    let (frames, k_sampled) = if t as u64 * per_frame <= budget {
        (all, None)
    } else {
        let k = (budget / per_frame) as usize;
        if k == 0 {
            return Err(AllocError::BudgetTooSmall {
                budget,
                per_frame,
            });
        }
        (uniform_sample(&all, k)?, Some(k as u64))
    };

    let kept = frames
        .into_iter()
        .map(|frame| KeptFrame {
            frame,
            scale: global_scale,
            tokens: per_frame,
        })
        .collect();
    let audit = PlanAudit {
        k_sampled,
        ..PlanAudit::default()
    };
    Ok(assemble(Policy::Global, t, kept, audit))
}

/// Policy dispatch over a full score list.
///
/// Global decisions go to [`allocate_global`]; Fragment decisions build the
/// relevance partition and go to [`allocate_fragment`]. A Fragment decision
/// with no relevant frames falls back to the Global policy — coverage is the
/// safer degenerate behavior.
pub fn allocate(
    decision: &PolicyDecision,
    scores: &[FrameScore],
    n: u64,
    budget: u64,
    scales: &ScaleConfig,
) -> Result<AllocationPlan, AllocError> {
    scales.validate_for(n)?;
    let partition = RelevancePartition::from_scores(scores)?;
    match decision.decision {
        Policy::Global => allocate_global(scores.len(), n, budget, scales.global),
        Policy::Fragment if partition.relevant.is_empty() => {
            allocate_global(scores.len(), n, budget, scales.global)
        }
        Policy::Fragment => allocate_fragment(&partition, n, budget, scales),
    }
}

//! Mean pooling on per-frame token grids and final sequence assembly.
//!
//! A frame is a `g x g` grid of token vectors. Pooling at scale `s` averages
//! non-overlapping `s x s` blocks into single vectors, shrinking the frame to
//! `(g/s)^2` tokens. Reconstruction splices pooled frames back into a prompt
//! template by replacing each kept frame's placeholder and deleting dropped
//! frames' placeholders outright — dropped frames leave no residue, so the
//! sequence length is exactly text plus retained visual tokens.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::AllocationPlan;
use crate::budget::BudgetConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("grid of side {side} cannot be pooled at scale {scale}")]
    InvalidGeometry { side: usize, scale: u32 },
    #[error("grid has {got} values, expected {expected} for side {side}")]
    MalformedGrid { side: usize, expected: usize, got: usize },
    #[error("kept frame {0} has no pooled grid")]
    MissingFrame(usize),
    #[error("pooled grid for frame {0} was not expected by the plan")]
    UnexpectedFrame(usize),
    #[error("frame {frame} grid carries {got} tokens, plan says {expected}")]
    ScaleMismatch { frame: usize, expected: u64, got: u64 },
    #[error("template has no placeholder for kept frame {0}")]
    MissingPlaceholder(usize),
    #[error("template placeholders must be unique and ascending")]
    MalformedTemplate,
}

/// Square grid of token vectors, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub side: usize,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl TokenGrid {
    pub fn new(side: usize, dim: usize, values: Vec<Vec<f64>>) -> Result<Self, SequenceError> {
        if values.len() != side * side || values.iter().any(|v| v.len() != dim) {
            return Err(SequenceError::MalformedGrid {
                side,
                expected: side * side,
                got: values.len(),
            });
        }
        Ok(Self { side, dim, values })
    }

    /// Grid filled with one constant vector.
    pub fn constant(side: usize, value: Vec<f64>) -> Self {
        let dim = value.len();
        Self {
            side,
            dim,
            values: vec![value; side * side],
        }
    }

    /// Synthetic grid of uniform noise; the pipeline's stand-in for real
    /// frame features.
    pub fn random<R: Rng>(side: usize, dim: usize, rng: &mut R) -> Self {
        let values = (0..side * side)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self { side, dim, values }
    }

    pub fn token_count(&self) -> u64 {
        (self.side * self.side) as u64
    }

    /// Mean over every vector in the grid.
    pub fn grand_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for v in &self.values {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let count = self.values.len() as f64;
        acc.iter_mut().for_each(|a| *a /= count);
        acc
    }
}

/// Averages each non-overlapping `s x s` block into one vector. Blocks are
/// visited row-major for reproducibility.
pub fn mean_pool(grid: &TokenGrid, scale: u32) -> Result<TokenGrid, SequenceError> {
    let s = scale as usize;
    if s == 0 || !grid.side.is_multiple_of(s) {
        return Err(SequenceError::InvalidGeometry {
            side: grid.side,
            scale,
        });
    }
    let out_side = grid.side / s;
    let mut values = Vec::with_capacity(out_side * out_side);
    let norm = 1.0 / (s * s) as f64;
    for block_row in 0..out_side {
        for block_col in 0..out_side {
            let mut acc = vec![0.0; grid.dim];
            for dr in 0..s {
                for dc in 0..s {
                    let idx = (block_row * s + dr) * grid.side + block_col * s + dc;
                    for (a, x) in acc.iter_mut().zip(&grid.values[idx]) {
                        *a += x;
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a *= norm);
            values.push(acc);
        }
    }
    Ok(TokenGrid {
        side: out_side,
        dim: grid.dim,
        values,
    })
}

/// One piece of a prompt before visual substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TemplateSegment {
    Text { tokens: u64 },
    Frame { index: usize },
}

/// Prompt skeleton: text spans interleaved with frame placeholders, every
/// frame index exactly once, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub segments: Vec<TemplateSegment>,
}

impl PromptTemplate {
    pub fn new(segments: Vec<TemplateSegment>) -> Result<Self, SequenceError> {
        let frames: Vec<usize> = segments
            .iter()
            .filter_map(|s| match s {
                TemplateSegment::Frame { index } => Some(*index),
                TemplateSegment::Text { .. } => None,
            })
            .collect();
        if !frames.windows(2).all(|w| w[0] < w[1]) {
            return Err(SequenceError::MalformedTemplate);
        }
        Ok(Self { segments })
    }

    /// The common shape: one leading text span, then all frame placeholders.
    pub fn text_then_frames(text_tokens: u64, frame_count: usize) -> Self {
        let mut segments = vec![TemplateSegment::Text {
            tokens: text_tokens,
        }];
        segments.extend((0..frame_count).map(|index| TemplateSegment::Frame { index }));
        Self { segments }
    }

    pub fn text_tokens(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| match s {
                TemplateSegment::Text { tokens } => *tokens,
                TemplateSegment::Frame { .. } => 0,
            })
            .sum()
    }
}

/// One piece of the final interleaved sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSegment {
    Text { tokens: u64 },
    Visual { frame: usize, tokens: Vec<Vec<f64>> },
}

/// The assembled sequence: text spans plus pooled visual spans for every
/// kept frame, in template order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub segments: Vec<SequenceSegment>,
    pub total_length: u64,
}

impl TokenSequence {
    pub fn text_tokens(&self) -> u64 {
        self.segments
            .iter()
            .map(|s| match s {
                SequenceSegment::Text { tokens } => *tokens,
                SequenceSegment::Visual { .. } => 0,
            })
            .sum()
    }

    pub fn visual_tokens(&self) -> u64 {
        self.total_length - self.text_tokens()
    }

    /// Accounting view of the sequence, the JSON summary format.
    pub fn summary(&self) -> SequenceSummary {
        SequenceSummary {
            segments: self
                .segments
                .iter()
                .map(|s| match s {
                    SequenceSegment::Text { tokens } => SegmentSummary {
                        kind: "text".into(),
                        frame: None,
                        count: *tokens,
                    },
                    SequenceSegment::Visual { frame, tokens } => SegmentSummary {
                        kind: "visual".into(),
                        frame: Some(*frame),
                        count: tokens.len() as u64,
                    },
                })
                .collect(),
            total_length: self.total_length,
        }
    }
}

/// Serializable per-segment accounting: `{kind, frame?, count}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub segments: Vec<SegmentSummary>,
    pub total_length: u64,
}

/// Replaces each kept frame's placeholder with its pooled tokens and removes
/// dropped frames' placeholders entirely. `pooled` must hold exactly the
/// plan's kept frames, already pooled to the plan's token counts.
pub fn reconstruct(
    template: &PromptTemplate,
    plan: &AllocationPlan,
    pooled: &BTreeMap<usize, TokenGrid>,
) -> Result<TokenSequence, SequenceError> {
    let kept: BTreeMap<usize, u64> = plan.kept.iter().map(|f| (f.frame, f.tokens)).collect();

    for (&frame, grid) in pooled {
        match kept.get(&frame) {
            None => return Err(SequenceError::UnexpectedFrame(frame)),
            Some(&expected) if grid.token_count() != expected => {
                return Err(SequenceError::ScaleMismatch {
                    frame,
                    expected,
                    got: grid.token_count(),
                })
            }
            Some(_) => {}
        }
    }
    for &frame in kept.keys() {
        if !pooled.contains_key(&frame) {
            return Err(SequenceError::MissingFrame(frame));
        }
        if !template.segments.iter().any(
            |s| matches!(s, TemplateSegment::Frame { index } if *index == frame),
        ) {
            return Err(SequenceError::MissingPlaceholder(frame));
        }
    }

    let mut segments = Vec::new();
    let mut total_length = 0u64;
    for segment in &template.segments {
        match segment {
            TemplateSegment::Text { tokens } => {
                total_length += tokens;
                segments.push(SequenceSegment::Text { tokens: *tokens });
            }
            TemplateSegment::Frame { index } => {
                if let Some(grid) = pooled.get(index) {
                    total_length += grid.token_count();
                    segments.push(SequenceSegment::Visual {
                        frame: *index,
                        tokens: grid.values.clone(),
                    });
                }
                // dropped frames leave no residue
            }
        }
    }
    Ok(TokenSequence {
        segments,
        total_length,
    })
}

/// Whether a sequence honors the context-window contract: its visual tokens
/// fit the visual budget, and the whole sequence plus the generation reserve
/// fits the window. A sequence with no visual content has nothing to charge
/// against the visual budget, so only the window check applies.
pub fn fits_context(seq: &TokenSequence, cfg: &BudgetConfig) -> bool {
    let visual = seq.visual_tokens();
    let budget_ok = visual == 0 || (visual as i128) <= cfg.raw_budget();
    let window_ok = seq.total_length as i128 + cfg.l_gen as i128 <= cfg.l_max as i128;
    budget_ok && window_ok
}

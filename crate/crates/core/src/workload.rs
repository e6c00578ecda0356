//! Synthetic workload generation.
//!
//! A workload stands in for a video/query pair: per-frame feature vectors
//! with ground-truth relevance flags, a query feature vector, and the policy
//! label the query deserves. Relevant and irrelevant frames draw their
//! features from two separated distributions so the reference image head is
//! learnable from the data alone; the query features encode the policy label
//! the same way for the semantic head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::uniform_sample;
use crate::routers::{FeatureVector, FrameScore, Policy, PolicyDecision, TrainExample};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
}

/// How evidence frames are placed on the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceMode {
    /// One contiguous run.
    Concentrated,
    /// Evenly spaced across the timeline.
    Spread,
    /// Two separated clusters.
    Mixed,
}

/// Generation parameters for one synthetic workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Frame count.
    pub t: usize,
    /// Raw tokens per frame; must be a perfect square.
    pub n: u64,
    pub evidence_mode: EvidenceMode,
    pub evidence_frames: usize,
    pub feature_dim: usize,
    /// Per-component feature noise (standard deviation).
    pub noise: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |msg: String| Err(WorkloadError::InvalidSpec(msg));
        if self.t == 0 {
            return fail("t must be at least 1".into());
        }
        let side = (self.n as f64).sqrt().round() as u64;
        if side * side != self.n {
            return fail(format!("n = {} is not a perfect square", self.n));
        }
        if self.evidence_frames > self.t {
            return fail(format!(
                "evidence_frames {} exceeds t {}",
                self.evidence_frames, self.t
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be at least 1".into());
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return fail(format!("noise {} must be finite and >= 0", self.noise));
        }
        Ok(())
    }
}

/// One synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub index: usize,
    pub features: FeatureVector,
    /// Ground-truth relevance.
    pub relevant: bool,
    /// Evidence mass in `[0,1]`; zero for irrelevant frames.
    pub evidence: f64,
}

/// A generated video/query pair with supervision targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Raw tokens per frame.
    pub n: u64,
    pub frames: Vec<FrameDescriptor>,
    pub query: FeatureVector,
    pub policy_label: Policy,
}

impl Workload {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Training examples for the image head: one per frame.
    pub fn image_examples(&self) -> Vec<TrainExample> {
        self.frames
            .iter()
            .map(|f| (f.features.clone(), u8::from(f.relevant)))
            .collect()
    }

    /// Training example for the semantic head: the query and its label.
    pub fn semantic_example(&self) -> TrainExample {
        let label = match self.policy_label {
            Policy::Global => 0,
            Policy::Fragment => 1,
        };
        (self.query.clone(), label)
    }

    /// Scores an oracle router would emit: the ground truth itself.
    pub fn ground_truth_scores(&self) -> Vec<FrameScore> {
        self.frames
            .iter()
            .map(|f| FrameScore {
                frame_index: f.index,
                p: if f.relevant { 1.0 } else { 0.0 },
                y_hat: u8::from(f.relevant),
            })
            .collect()
    }

    /// The policy decision an oracle semantic router would emit.
    pub fn ground_truth_decision(&self) -> PolicyDecision {
        let fragment = self.policy_label == Policy::Fragment;
        PolicyDecision {
            p_global: if fragment { 0.0 } else { 1.0 },
            p_fragment: if fragment { 1.0 } else { 0.0 },
            decision: self.policy_label,
        }
    }
}

/// Evidence frame positions for a mode. Always returns exactly `count`
/// distinct indices below `t`.
fn evidence_positions<R: Rng>(
    mode: EvidenceMode,
    t: usize,
    count: usize,
    rng: &mut R,
) -> Vec<bool> {
    let mut flags = vec![false; t];
    if count == 0 {
        return flags;
    }
    match mode {
        EvidenceMode::Concentrated => {
            let start = rng.random_range(0..=t - count);
            flags[start..start + count].iter_mut().for_each(|f| *f = true);
        }
        EvidenceMode::Spread => {
            let all: Vec<usize> = (0..t).collect();
            for i in uniform_sample(&all, count).expect("count <= t") {
                flags[i] = true;
            }
        }
        EvidenceMode::Mixed => {
            let first = count.div_ceil(2);
            let second = count - first;
            let half = t / 2;
            let start1 = if half > first {
                rng.random_range(0..=half - first)
            } else {
                0
            };
            for f in flags.iter_mut().skip(start1).take(first) {
                *f = true;
            }
            let start2 = if t - half > second && half >= start1 + first {
                half + rng.random_range(0..=t - half - second)
            } else {
                t.saturating_sub(second)
            };
            for f in flags.iter_mut().skip(start2).take(second) {
                *f = true;
            }
            // Degenerate shapes (clusters forced to overlap) top up from the
            // front so the evidence count is always exact.
            let mut placed = flags.iter().filter(|&&f| f).count();
            let mut i = 0;
            while placed < count {
                if !flags[i] {
                    flags[i] = true;
                    placed += 1;
                }
                i += 1;
            }
        }
    }
    flags
}

/// Generates a workload deterministically from its spec.
///
/// The policy label is Fragment when evidence exists but covers at most half
/// the frames — the regime where concentrating the budget pays off — and
/// Global otherwise.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .expect("validated noise is a valid std dev");
    let unit = 1.0 / (spec.feature_dim as f64).sqrt();

    let flags = evidence_positions(spec.evidence_mode, spec.t, spec.evidence_frames, &mut rng);

    let draw = |sign: f64, rng: &mut ChaCha8Rng| -> FeatureVector {
        FeatureVector(
            (0..spec.feature_dim)
                .map(|_| sign * unit + noise.sample(rng))
                .collect(),
        )
    };

    let frames = flags
        .iter()
        .enumerate()
        .map(|(index, &relevant)| FrameDescriptor {
            index,
            features: draw(if relevant { 1.0 } else { -1.0 }, &mut rng),
            relevant,
            evidence: if relevant { 1.0 } else { 0.0 },
        })
        .collect();

    let policy_label = if spec.evidence_frames > 0 && spec.evidence_frames <= spec.t / 2 {
        Policy::Fragment
    } else {
        Policy::Global
    };
    let query = draw(
        if policy_label == Policy::Fragment { 1.0 } else { -1.0 },
        &mut rng,
    );

    Ok(Workload {
        n: spec.n,
        frames,
        query,
        policy_label,
    })
}

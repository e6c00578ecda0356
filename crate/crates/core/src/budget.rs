//! Context-window accounting: how many visual tokens a prompt can host.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default safety margin reserved on top of text and generation tokens.
pub const DEFAULT_SAFETY_MARGIN: u64 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    /// The window is fully consumed by text, generation and margin; no
    /// visual tokens fit. Callers must decide, not silently send nothing.
    #[error("visual budget is non-positive ({0}); nothing left for visual tokens")]
    BudgetNonPositive(i128),
}

/// Token-count inputs for the visual-budget calculation.
///
/// The visual budget is what remains of the maximum context length after
/// reserving the text prompt, the generation headroom and a safety margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Maximum context length of the target model.
    pub l_max: u64,
    /// Text prompt length.
    pub l_text: u64,
    /// Reserved generation length.
    pub l_gen: u64,
    /// Safety margin.
    #[serde(default = "default_epsilon")]
    pub epsilon: u64,
}

fn default_epsilon() -> u64 {
    DEFAULT_SAFETY_MARGIN
}

impl BudgetConfig {
    /// Config with the default safety margin.
    pub fn new(l_max: u64, l_text: u64, l_gen: u64) -> Self {
        Self {
            l_max,
            l_text,
            l_gen,
            epsilon: DEFAULT_SAFETY_MARGIN,
        }
    }

    /// Raw budget as a signed value; negative when the reservations exceed
    /// the window.
    pub fn raw_budget(&self) -> i128 {
        self.l_max as i128 - self.l_text as i128 - self.l_gen as i128 - self.epsilon as i128
    }
}

/// Computes the visual-token budget `l_max - l_text - l_gen - epsilon`.
///
/// Exact integer arithmetic; errors when the result is not strictly
/// positive.
pub fn compute_budget(cfg: &BudgetConfig) -> Result<u64, BudgetError> {
    let raw = cfg.raw_budget();
    if raw <= 0 {
        return Err(BudgetError::BudgetNonPositive(raw));
    }
    Ok(raw as u64)
}

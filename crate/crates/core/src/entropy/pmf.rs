use serde::{Deserialize, Serialize};

use crate::distfit::GenNormParams;
use crate::error::{Error, Result};
use crate::fpquant::{FpFormat, Quantizer};

/// Probability of each quantizer level under a source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPmf {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
}

impl LevelPmf {
    pub fn new(levels: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if levels.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: levels.len(), got: probs.len() });
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
        }
        Ok(Self { levels, probs })
    }

    /// A pmf over symbol indices only (levels are the indices themselves).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let levels = (0..probs.len()).map(|i| i as f64).collect();
        Self::new(levels, probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in bits of the normalized pmf.
    pub fn entropy_bits(&self) -> f64 {
        let total: f64 = self.probs.iter().sum();
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| {
                let q = p / total;
                -q * q.log2()
            })
            .sum()
    }
}

/// Mass of each quantization cell under `GenNorm(p)`. Cell boundaries are
/// midpoints of adjacent levels; the outer cells extend to ±∞.
pub fn level_probabilities(p: &GenNormParams, format: &FpFormat) -> Result<LevelPmf> {
    p.validate()?;
    let levels = Quantizer::new(*format).levels().to_vec();
    let n = levels.len();
    let probs = (0..n)
        .map(|i| {
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (levels[i - 1] + levels[i]) };
            let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (levels[i] + levels[i + 1]) };
            p.interval_mass(lo, hi)
        })
        .collect();
    LevelPmf::new(levels, probs)
}

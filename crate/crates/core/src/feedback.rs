//! Decayed error-feedback memory.
//!
//! Each round a user sends `ĝ = Q(g + γ·m)` and keeps the residual
//! `m ← γ·m + g − ĝ` for the next round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.7;
/// Heavier memory used for deeper models.
pub const GAMMA_DEEP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    memory: Vec<f64>,
    gamma: f64,
}

impl FeedbackState {
    /// Zero memory of dimension `dim`.
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::ParameterDomain(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        Ok(Self { memory: vec![0.0; dim], gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.memory.len()
    }

    pub fn memory(&self) -> &[f64] {
        &self.memory
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.memory.len() {
            return Err(Error::DimensionMismatch { expected: self.memory.len(), got: len });
        }
        Ok(())
    }

    /// `g + γ·m`. The state is not modified.
    pub fn preprocess(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok(g.iter().zip(&self.memory).map(|(g, m)| g + self.gamma * m).collect())
    }

    /// `m ← γ·m + g − ĝ`.
    pub fn update(&mut self, g: &[f64], g_hat: &[f64]) -> Result<()> {
        self.check_dim(g.len())?;
        self.check_dim(g_hat.len())?;
        for ((m, g), gh) in self.memory.iter_mut().zip(g).zip(g_hat) {
            *m = self.gamma * *m + g - gh;
        }
        Ok(())
    }

    /// L1 norm of the memory.
    pub fn memory_l1(&self) -> f64 {
        self.memory.iter().map(|m| m.abs()).sum()
    }

    pub fn reset(&mut self) {
        self.memory.iter_mut().for_each(|m| *m = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpquant::{FpFormat, Quantizer};
    use proptest::prelude::*;

    fn with_memory(memory: Vec<f64>, gamma: f64) -> FeedbackState {
        FeedbackState { memory, gamma }
    }

    #[test]
    fn preprocess_examples() {
        let s = FeedbackState::new(2, 0.0).unwrap();
        assert_eq!(s.preprocess(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(with_memory(vec![0.5], 0.0).preprocess(&[1.2]).unwrap(), vec![1.2]);
        let v = with_memory(vec![0.5], 0.7).preprocess(&[1.2]).unwrap()[0];
        assert!((v - 1.55).abs() < 1e-15);
        assert!(matches!(s.preprocess(&[1.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn scalar_trace_on_fp4_grid() {
        let mut s = with_memory(vec![0.5], 0.7);
        let v = s.preprocess(&[1.2]).unwrap();
        let q = Quantizer::new(FpFormat::FP4);
        let g_hat = q.project(v[0]);
        assert_eq!(g_hat, 1.5);
        s.update(&[1.2], &[g_hat]).unwrap();
        assert!((s.memory()[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn perfect_quantizer_drains_memory() {
        let mut s = with_memory(vec![0.25, -1.0], 1.0);
        let g = [1.0, 2.0];
        let v = s.preprocess(&g).unwrap();
        s.update(&g, &v).unwrap();
        assert_eq!(s.memory(), &[0.0, 0.0]);
        assert_eq!(s.memory_l1(), 0.0);
    }

    #[test]
    fn memoryless_residual() {
        let mut s = with_memory(vec![3.0], 0.0);
        s.update(&[1.2], &[1.0]).unwrap();
        assert!((s.memory()[0] - 0.2).abs() < 1e-15);
        assert_eq!(with_memory(vec![0.5, -0.5], 0.3).memory_l1(), 1.0);
        assert!(FeedbackState::new(1, 1.5).is_err());
    }

    #[test]
    fn virtual_sequence_identity() {
        // w̃ follows the true gradients, ŵ the transmitted ones. With m the
        // running sum of g − ĝ, the two differ by exactly η·m: ŵ − w̃ = η·m.
        let q = Quantizer::new(FpFormat::FP4);
        let eta = 0.1;
        let mut s = FeedbackState::new(1, 1.0).unwrap();
        let (mut w_virtual, mut w_hat) = (2.0, 2.0);
        for t in 0..50 {
            let g = 0.8 * w_hat + 0.3 * ((t as f64) * 1.7).sin();
            let v = s.preprocess(&[g]).unwrap();
            let g_hat = q.project(v[0]);
            s.update(&[g], &[g_hat]).unwrap();
            w_virtual -= eta * g;
            w_hat -= eta * g_hat;
            let r = w_hat - w_virtual - eta * s.memory()[0];
            assert!(r.abs() < 1e-12, "t={t} residual {r} m={}", s.memory()[0]);
        }
    }

    proptest! {
        #[test]
        fn memory_bounded_by_geometric_series(
            gamma in 0.0..0.95f64,
            gs in proptest::collection::vec(-2.0..2.0f64, 1..200),
        ) {
            // scaled fp4 grid covers ±6, so errors stay below half the widest step
            let format = FpFormat::FP4.with_scale(2.0).unwrap();
            let q = Quantizer::new(format);
            let e_max = format.widest_step() / 2.0;
            let mut s = FeedbackState::new(1, gamma).unwrap();
            for g in gs {
                let v = s.preprocess(&[g]).unwrap();
                prop_assume!(v[0].abs() <= format.max_level());
                s.update(&[g], &[q.project(v[0])]).unwrap();
                prop_assert!(s.memory()[0].abs() <= e_max / (1.0 - gamma) + 1e-12);
            }
        }

        #[test]
        fn preprocess_is_linear(m in -3.0..3.0f64, g1 in -3.0..3.0f64, g2 in -3.0..3.0f64, gamma in 0.0..=1.0f64) {
            let s = with_memory(vec![m], gamma);
            let lhs = s.preprocess(&[g1 + g2]).unwrap()[0];
            let rhs = s.preprocess(&[g1]).unwrap()[0] + g2;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

//! User-side encoding for each scheme and the matching PS-side decoding.

use std::ops::Range;

use super::config::{BiasRule, SchemeConfig, SchemeKind};
use super::task::Task;
use crate::distfit::{fit_gennorm, GenNormParams};
use crate::entropy::{Codebook, Frame};
use crate::error::{Error, Result};
use crate::feedback::FeedbackState;
use crate::fpquant::{bias_polynomial, optimal_bias_mc, FpFormat, Quantizer};
use crate::seed;

const MC_STREAM: u64 = 0xB1A5;
/// Side information for the fixed-width schemes: the grid scale as binary64.
const SCALE_HEADER_BITS: u64 = 64;

/// Model and grid in force for one tensor until the next refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCoding {
    pub model: GenNormParams,
    pub format: FpFormat,
}

/// What one user sends in one round.
#[derive(Debug, Clone)]
pub struct Upload {
    /// The user's own copy of the reconstructed gradient.
    pub g_hat: Vec<f64>,
    /// Encoded frames, one per tensor (CO3 only).
    pub frames: Vec<Vec<u8>>,
    pub payload_bits: u64,
    pub header_bits: u64,
    /// `g + γ·m` before conversion.
    pub pre_quant: Vec<f64>,
    pub grad_l1: f64,
    /// Memory L1 norm after the update.
    pub mem_l1: f64,
    /// Per tensor; `None` for schemes that send raw values.
    pub codings: Vec<Option<LayerCoding>>,
}

#[derive(Debug, Clone)]
pub struct UserState {
    feedback: FeedbackState,
    codings: Vec<Option<LayerCoding>>,
}

impl UserState {
    pub fn new(dim: usize, layers: usize, gamma: f64) -> Result<Self> {
        Ok(Self { feedback: FeedbackState::new(dim, gamma)?, codings: vec![None; layers] })
    }

    pub fn feedback(&self) -> &FeedbackState {
        &self.feedback
    }

    /// Runs one round for user `u` at model `w`.
    pub fn upload(
        &mut self,
        task: &Task,
        scheme: &SchemeConfig,
        w: &[f64],
        t: usize,
        u: usize,
        run_seed: u64,
    ) -> Result<Upload> {
        let g = task.local_gradient(u, w, t);
        let grad_l1 = g.iter().map(|x| x.abs()).sum();
        if scheme.kind == SchemeKind::Uncompressed {
            let g_hat: Vec<f64> = g.iter().map(|&x| x as f32 as f64).collect();
            return Ok(Upload {
                payload_bits: 32 * g.len() as u64,
                header_bits: 0,
                g_hat,
                frames: Vec::new(),
                pre_quant: g,
                grad_l1,
                mem_l1: 0.0,
                codings: vec![None; self.codings.len()],
            });
        }

        let v = self.feedback.preprocess(&g)?;
        let base = scheme.format.format()?;
        let refit = t.is_multiple_of(scheme.refit_interval);
        let mut g_hat = vec![0.0; v.len()];
        let mut frames = Vec::new();
        let (mut payload_bits, mut header_bits) = (0u64, 0u64);

        for (l, range) in task.layers().into_iter().enumerate() {
            let values = &v[range.clone()];
            let mc_seed = seed::derive(run_seed, &[MC_STREAM, t as u64, u as u64, l as u64]);
            match scheme.kind {
                SchemeKind::Co3 => {
                    let coding = self.coding(l, values, refit, scheme, base, task, mc_seed)?;
                    let q = Quantizer::new(coding.format);
                    let block = q.quantize(values)?;
                    let frame = Frame::encode(&block, &Codebook::new(coding.format, coding.model)?)?;
                    g_hat[range].copy_from_slice(&q.dequantize(&block)?);
                    payload_bits += frame.payload_bits;
                    header_bits += frame.overhead_bits();
                    frames.push(frame.to_bytes());
                }
                SchemeKind::FpOnly => {
                    let coding = self.coding(l, values, refit, scheme, base, task, mc_seed)?;
                    let q = Quantizer::new(coding.format);
                    for (out, &x) in g_hat[range].iter_mut().zip(values) {
                        *out = q.project(x);
                    }
                    payload_bits += values.len() as u64 * u64::from(coding.format.fixed_symbol_bits());
                    header_bits += SCALE_HEADER_BITS;
                }
                SchemeKind::TopK => {
                    let fraction = scheme.topk_fraction.expect("validated");
                    let keep = top_k_indices(values, fraction);
                    let survivors: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
                    let coding = self.coding(l, &survivors, refit, scheme, base, task, mc_seed)?;
                    let q = Quantizer::new(coding.format);
                    let out = &mut g_hat[range];
                    for &i in &keep {
                        out[i] = q.project(values[i]);
                    }
                    let per_entry = u64::from(index_bits(values.len())) + u64::from(coding.format.fixed_symbol_bits());
                    payload_bits += keep.len() as u64 * per_entry;
                    header_bits += SCALE_HEADER_BITS;
                }
                SchemeKind::Uncompressed => unreachable!("handled above"),
            }
        }

        self.feedback.update(&g, &g_hat)?;
        Ok(Upload {
            g_hat,
            frames,
            payload_bits,
            header_bits,
            pre_quant: v,
            grad_l1,
            mem_l1: self.feedback.memory_l1(),
            codings: self.codings.clone(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn coding(
        &mut self,
        layer: usize,
        values: &[f64],
        refit: bool,
        scheme: &SchemeConfig,
        base: FpFormat,
        task: &Task,
        mc_seed: u64,
    ) -> Result<LayerCoding> {
        if let (false, Some(c)) = (refit, self.codings[layer]) {
            return Ok(c);
        }
        let model = fit_model(values)?;
        let smoothness = scheme.theory_smoothness.or_else(|| task.smoothness()).unwrap_or(0.0);
        let format = choose_scale(scheme.bias_rule, base, &model, smoothness, scheme.mc_samples, mc_seed)?;
        let c = LayerCoding { model, format };
        self.codings[layer] = Some(c);
        Ok(c)
    }
}

/// GenNorm fit of one tensor. Tensors too small or too flat for the
/// kurtosis fit get a normal model with the sample mean and spread.
pub fn fit_model(values: &[f64]) -> Result<GenNormParams> {
    match fit_gennorm(values) {
        Ok(p) => Ok(p),
        Err(Error::InsufficientSamples { .. } | Error::DegenerateSample(_)) => {
            let n = values.len().max(1) as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1e-12 * mean.abs().max(1.0) };
            GenNormParams::normal(mean, std)
        }
        Err(e) => Err(e),
    }
}

/// Grid scale for one tensor under `rule`.
pub fn choose_scale(
    rule: BiasRule,
    base: FpFormat,
    model: &GenNormParams,
    smoothness: f64,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<FpFormat> {
    let mc = || optimal_bias_mc(model, &base, mc_samples.max(1), mc_seed);
    let gain = match rule {
        BiasRule::Theory => return base.with_theory_scale(smoothness),
        BiasRule::Polynomial => match bias_polynomial(model.beta, model.std_dev(), &base) {
            Ok(g) => g,
            Err(Error::NoPolynomial(_)) => mc()?,
            Err(e) => return Err(e),
        },
        BiasRule::MonteCarlo => mc()?,
    };
    base.with_gain(gain)
}

/// Indices of the `⌈k·n⌉` largest magnitudes, ties to the lower index,
/// returned in ascending order.
pub fn top_k_indices(values: &[f64], fraction: f64) -> Vec<usize> {
    let n = values.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// `⌈log2 n⌉`: bits to address one of `n` positions.
pub fn index_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// PS side: rebuilds a user's gradient from what was sent. CO3 frames are
/// parsed and decoded from their bytes; the other schemes carry values
/// directly.
pub fn reconstruct(upload: &Upload, layers: &[Range<usize>], kind: SchemeKind) -> Result<Vec<f64>> {
    if kind != SchemeKind::Co3 {
        return Ok(upload.g_hat.clone());
    }
    if upload.frames.len() != layers.len() {
        return Err(Error::DimensionMismatch { expected: layers.len(), got: upload.frames.len() });
    }
    let dim = layers.last().map_or(0, |r| r.end);
    let mut out = vec![0.0; dim];
    for (bytes, range) in upload.frames.iter().zip(layers) {
        let frame = Frame::from_bytes(bytes)?;
        let values = Quantizer::new(frame.format).dequantize(&frame.decode()?)?;
        if values.len() != range.len() {
            return Err(Error::DimensionMismatch { expected: range.len(), got: values.len() });
        }
        out[range.clone()].copy_from_slice(&values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[3.0, -1.0, 2.0, 0.0], 0.5), vec![0, 2]);
        assert_eq!(top_k_indices(&[1.0, -1.0, 1.0], 0.5), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.5, 0.2], 1.0), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.5, 0.2, 0.1], 0.01), vec![0]);
    }

    #[test]
    fn index_widths() {
        assert_eq!([1, 2, 3, 4, 5, 1024, 1025].map(index_bits), [0, 1, 2, 2, 3, 10, 11]);
    }

    #[test]
    fn fallback_model_for_small_tensors() {
        let m = fit_model(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mu, m.beta), (2.0, 2.0));
        assert!((m.std_dev() - 1.0).abs() < 1e-12);
        let flat = fit_model(&[0.0; 300]).unwrap();
        assert!(flat.alpha > 0.0 && flat.alpha < 1e-10);
        assert!(fit_model(&[f64::NAN; 200]).is_err());
    }

    #[test]
    fn scale_rules() {
        let model = GenNormParams::new(0.0, 1.0, 1.0).unwrap();
        let f = choose_scale(BiasRule::Polynomial, FpFormat::FP4, &model, 0.0, 10, 0).unwrap();
        // σ = √2 for unit-scale Laplace
        assert!((f.gain() - 0.65 / 2f64.sqrt()).abs() < 1e-12);
        let f = choose_scale(BiasRule::Theory, FpFormat::FP4, &model, 3.0, 10, 0).unwrap();
        assert_eq!(f.scale(), 4.0);
        // shape outside the polynomial's range falls back to the search
        let normal = GenNormParams::normal(0.0, 1.0).unwrap();
        let a = choose_scale(BiasRule::Polynomial, FpFormat::FP4, &normal, 0.0, 20_000, 5).unwrap();
        let b = choose_scale(BiasRule::MonteCarlo, FpFormat::FP4, &normal, 0.0, 20_000, 5).unwrap();
        assert_eq!(a, b);
    }
}

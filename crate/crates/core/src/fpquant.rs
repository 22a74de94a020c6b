//! Low-precision floating-point conversion ("Convert").
//!
//! A format `[1, exp, mant]` with scale `c` represents
//!
//! ```text
//! ±c · m · 2^e,   m ∈ {1 + k·2^{-mant}},   e ∈ {−(2^{exp−1}−2), …, 2^{exp−1}−1}
//! ```
//!
//! plus an explicit zero. Values are mapped to the nearest representative,
//! ties going to the smaller magnitude, and anything beyond the largest
//! level is clipped to it.
//!
//! The scale is how the exponent bias enters. The bias polynomials give a
//! gain `b` that multiplies the gradient before the cast, so the grid seen
//! by the gradient is `levels / b`; see [`FpFormat::with_gain`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distfit::GenNormParams;
use crate::error::{Error, Result};

pub const MAX_EXP_BITS: u8 = 8;
pub const MAX_MANT_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpFormat {
    exp_bits: u8,
    mant_bits: u8,
    scale: f64,
}

impl FpFormat {
    /// `[1, 2, 1]`
    pub const FP4: FpFormat = FpFormat { exp_bits: 2, mant_bits: 1, scale: 1.0 };
    /// `[1, 5, 2]`
    pub const FP8: FpFormat = FpFormat { exp_bits: 5, mant_bits: 2, scale: 1.0 };

    pub fn new(exp_bits: u8, mant_bits: u8) -> Result<Self> {
        if !(2..=MAX_EXP_BITS).contains(&exp_bits) {
            return Err(Error::ParameterDomain(format!(
                "exponent width must be in 2..={MAX_EXP_BITS}, got {exp_bits}"
            )));
        }
        if mant_bits > MAX_MANT_BITS {
            return Err(Error::ParameterDomain(format!(
                "mantissa width must be at most {MAX_MANT_BITS}, got {mant_bits}"
            )));
        }
        Ok(Self { exp_bits, mant_bits, scale: 1.0 })
    }

    pub fn exp_bits(&self) -> u8 {
        self.exp_bits
    }

    pub fn mant_bits(&self) -> u8 {
        self.mant_bits
    }

    /// Multiplier `c` applied to every representative.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::ParameterDomain(format!("grid scale must be positive, got {scale}")));
        }
        Ok(Self { scale, ..self })
    }

    /// Additive exponent bias: representatives `m · 2^{e + bias}`.
    pub fn with_exponent_bias(self, bias: f64) -> Result<Self> {
        self.with_scale(bias.exp2())
    }

    /// Gain applied to the input before the cast: `Q(x) = fp(gain · x) / gain`.
    pub fn with_gain(self, gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::ParameterDomain(format!("gain must be positive, got {gain}")));
        }
        self.with_scale(1.0 / gain)
    }

    pub fn gain(&self) -> f64 {
        1.0 / self.scale
    }

    /// `(1 + L) · 2^{−(2^{exp−1}−2)}`: puts the largest level just under
    /// `4(1 + L)`.
    pub fn with_theory_scale(self, smoothness: f64) -> Result<Self> {
        let e_min = self.min_exponent();
        self.with_scale((1.0 + smoothness) * (e_min as f64).exp2())
    }

    pub fn min_exponent(&self) -> i32 {
        -((1i32 << (self.exp_bits - 1)) - 2)
    }

    pub fn max_exponent(&self) -> i32 {
        (1i32 << (self.exp_bits - 1)) - 1
    }

    pub fn exponent_count(&self) -> usize {
        (self.max_exponent() - self.min_exponent() + 1) as usize
    }

    pub fn mantissa_count(&self) -> usize {
        1usize << self.mant_bits
    }

    /// `2·|M|·|E| + 1`
    pub fn alphabet_size(&self) -> usize {
        2 * self.mantissa_count() * self.exponent_count() + 1
    }

    /// Largest representable magnitude `B`.
    pub fn max_level(&self) -> f64 {
        let m_max = 2.0 - (-(self.mant_bits as f64)).exp2();
        self.scale * m_max * (self.max_exponent() as f64).exp2()
    }

    /// Width of the widest gap between adjacent nonzero levels,
    /// `c · 2^{−mant} · 2^{emax}`.
    pub fn widest_step(&self) -> f64 {
        self.scale * (self.max_exponent() as f64 - self.mant_bits as f64).exp2()
    }

    /// Raw symbol width when symbols are sent without entropy coding.
    pub fn fixed_symbol_bits(&self) -> u32 {
        usize::BITS - (self.alphabet_size() - 1).leading_zeros()
    }

    pub fn is_fp4(&self) -> bool {
        self.exp_bits == 2 && self.mant_bits == 1
    }

    pub fn is_fp8(&self) -> bool {
        self.exp_bits == 5 && self.mant_bits == 2
    }

    /// Nonnegative magnitudes in ascending order, starting with zero.
    fn magnitudes(&self) -> Vec<f64> {
        let mut mags = Vec::with_capacity(self.mantissa_count() * self.exponent_count() + 1);
        mags.push(0.0);
        for e in self.min_exponent()..=self.max_exponent() {
            let p = (e as f64).exp2();
            for k in 0..self.mantissa_count() {
                let m = 1.0 + k as f64 * (-(self.mant_bits as f64)).exp2();
                mags.push(self.scale * m * p);
            }
        }
        mags
    }
}

/// All representable values in ascending order, zero included.
pub fn grid_levels(format: &FpFormat) -> Vec<f64> {
    Quantizer::new(*format).levels().to_vec()
}

/// Quantized gradient tensor: one alphabet index per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedBlock {
    pub format: FpFormat,
    pub symbols: Vec<u32>,
}

impl QuantizedBlock {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Precomputed grid for one format; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Quantizer {
    format: FpFormat,
    magnitudes: Vec<f64>,
    levels: Vec<f64>,
}

impl Quantizer {
    pub fn new(format: FpFormat) -> Self {
        let magnitudes = format.magnitudes();
        let levels = magnitudes[1..].iter().rev().map(|m| -m).chain(magnitudes.iter().copied()).collect();
        Self { format, magnitudes, levels }
    }

    pub fn format(&self) -> &FpFormat {
        &self.format
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn zero_symbol(&self) -> u32 {
        (self.magnitudes.len() - 1) as u32
    }

    /// Index into the magnitude table of the representative nearest `a >= 0`.
    fn nearest_magnitude(&self, a: f64) -> usize {
        let mags = &self.magnitudes;
        let top = mags.len() - 1;
        if a >= mags[top] {
            return top;
        }
        let k = mags.partition_point(|&m| m <= a);
        // mags[k-1] <= a < mags[k]
        if a - mags[k - 1] <= mags[k] - a {
            k - 1
        } else {
            k
        }
    }

    pub fn symbol_of(&self, x: f64) -> Result<u32> {
        if !x.is_finite() {
            return Err(Error::Input(format!("cannot quantize non-finite value {x}")));
        }
        let j = self.nearest_magnitude(x.abs()) as u32;
        let z = self.zero_symbol();
        Ok(if x < 0.0 { z - j } else { z + j })
    }

    pub fn value_of(&self, symbol: u32) -> Result<f64> {
        self.levels
            .get(symbol as usize)
            .copied()
            .ok_or_else(|| Error::Decode(format!("symbol {symbol} outside alphabet of {}", self.levels.len())))
    }

    /// Nearest representative of `x` (input must be finite). Agrees bit for
    /// bit with `dequantize(quantize(x))`, so the zero level is always `+0.0`.
    pub fn project(&self, x: f64) -> f64 {
        let m = self.magnitudes[self.nearest_magnitude(x.abs())];
        if x < 0.0 && m > 0.0 {
            -m
        } else {
            m
        }
    }

    pub fn quantize(&self, values: &[f64]) -> Result<QuantizedBlock> {
        let symbols = values.iter().map(|&x| self.symbol_of(x)).collect::<Result<Vec<_>>>()?;
        Ok(QuantizedBlock { format: self.format, symbols })
    }

    pub fn dequantize(&self, block: &QuantizedBlock) -> Result<Vec<f64>> {
        if block.format != self.format {
            return Err(Error::Decode("block format differs from quantizer format".into()));
        }
        block.symbols.iter().map(|&s| self.value_of(s)).collect()
    }

    /// Mean squared error `E[(x − Q(x))²]` over the given samples.
    pub fn mse(&self, samples: &[f64]) -> f64 {
        let sum: f64 = samples
            .iter()
            .map(|&x| {
                let e = x - self.project(x);
                e * e
            })
            .sum();
        sum / samples.len() as f64
    }
}

pub fn quantize(values: &[f64], format: &FpFormat) -> Result<QuantizedBlock> {
    Quantizer::new(*format).quantize(values)
}

pub fn dequantize(block: &QuantizedBlock) -> Result<Vec<f64>> {
    Quantizer::new(block.format).dequantize(block)
}

const FP4_POLY: [f64; 5] = [0.46, -2.85, 5.37, -2.85, 0.52];
const FP8_POLY: [f64; 5] = [-5793.0, 35605.5, -76511.8, 68153.0, -18520.3];
/// Shape range over which the polynomials were fitted.
pub const POLY_BETA_RANGE: (f64, f64) = (0.3, 1.6);

/// Gain from the fitted quartic in the shape, divided by `sigma`.
///
/// Only fp4 and fp8 have polynomials. Shapes outside the fitted range and
/// non-positive results are refused so the caller can fall back to
/// [`optimal_bias_mc`].
pub fn bias_polynomial(beta: f64, sigma: f64, format: &FpFormat) -> Result<f64> {
    let coeffs = if format.is_fp4() {
        &FP4_POLY
    } else if format.is_fp8() {
        &FP8_POLY
    } else {
        return Err(Error::NoPolynomial(format!("format [1,{},{}]", format.exp_bits(), format.mant_bits())));
    };
    let (lo, hi) = POLY_BETA_RANGE;
    if !(lo..=hi).contains(&beta) {
        return Err(Error::NoPolynomial(format!("shape {beta} outside [{lo}, {hi}]")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ParameterDomain(format!("sigma must be positive, got {sigma}")));
    }
    let poly = coeffs.iter().rev().fold(0.0, |acc, c| acc * beta + c);
    if poly <= 0.0 {
        return Err(Error::NoPolynomial(format!("polynomial is non-positive ({poly}) at shape {beta}")));
    }
    Ok(poly / sigma)
}

/// Monte-Carlo estimate of the gain minimizing `E[(Q(G) − G)²]` for
/// `G ~ GenNorm(p)`.
///
/// The search runs over `log2(gain)`: a coarse pass with step 0.25 across
/// `±16` octaves around `1/σ`, then golden-section refinement inside the
/// best coarse cell. The objective for each candidate uses the same draws.
pub fn optimal_bias_mc(p: &GenNormParams, format: &FpFormat, n_samples: usize, seed: u64) -> Result<f64> {
    p.validate()?;
    if n_samples == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let samples = p.sample(n_samples, seed);
    let centre = -p.std_dev().log2();
    Ok(optimal_gain_for_samples(&samples, format, centre).exp2())
}

/// Returns the best `log2(gain)`.
pub(crate) fn optimal_gain_for_samples(samples: &[f64], format: &FpFormat, centre: f64) -> f64 {
    const HALF_WIDTH: f64 = 16.0;
    const STEP: f64 = 0.25;
    let objective = |t: f64| Quantizer::new(format.with_scale((-t).exp2()).expect("finite scale")).mse(samples);

    let steps = (2.0 * HALF_WIDTH / STEP) as usize;
    let coarse: Vec<(f64, f64)> = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let t = centre - HALF_WIDTH + i as f64 * STEP;
            (t, objective(t))
        })
        .collect();
    let (t_best, _) =
        coarse.iter().copied().fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });

    golden_section(objective, t_best - STEP, t_best + STEP, 1e-4)
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Monte-Carlo quantization-error moments for `G ~ GenNorm(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMoments {
    /// `E[E²]` with `E = G − Q(G)`.
    pub mean_square: f64,
    /// `E[E² · 1{G > B}]`, the upper-tail contribution beyond the largest level.
    pub upper_tail: f64,
    /// Fraction of draws with `G > B`.
    pub upper_tail_prob: f64,
    pub n: usize,
}

pub fn quantization_error_moment(p: &GenNormParams, format: &FpFormat, n: usize, seed: u64) -> Result<ErrorMoments> {
    p.validate()?;
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let q = Quantizer::new(*format);
    let b = format.max_level();
    let samples = p.sample(n, seed);
    let (mut sq, mut tail, mut hits) = (0.0, 0.0, 0usize);
    for &g in &samples {
        let e = g - q.project(g);
        sq += e * e;
        if g > b {
            tail += e * e;
            hits += 1;
        }
    }
    let nf = n as f64;
    Ok(ErrorMoments { mean_square: sq / nf, upper_tail: tail / nf, upper_tail_prob: hits as f64 / nf, n })
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gennorm::{fit_gennorm, GenNormParams};
use super::stats::central_moments;
use super::wasserstein::w2_distance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Normal,
    Laplace,
    DoubleWeibull,
    GenNorm,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::GenNorm, Family::Normal, Family::Laplace, Family::DoubleWeibull];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Laplace => "laplace",
            Family::DoubleWeibull => "dweibull",
            Family::GenNorm => "gennorm",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "norm" => Ok(Family::Normal),
            "laplace" => Ok(Family::Laplace),
            "dweibull" | "double_weibull" | "doubleweibull" => Ok(Family::DoubleWeibull),
            "gennorm" => Ok(Family::GenNorm),
            other => Err(Error::Input(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FamilyParams {
    Normal {
        mean: f64,
        std_dev: f64,
    },
    Laplace {
        loc: f64,
        scale: f64,
    },
    /// Symmetric Weibull: `|X − loc| ~ Weibull(shape, scale)` with a fair sign.
    DoubleWeibull {
        loc: f64,
        scale: f64,
        shape: f64,
    },
    GenNorm(GenNormParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Normal { .. } => Family::Normal,
            FamilyParams::Laplace { .. } => Family::Laplace,
            FamilyParams::DoubleWeibull { .. } => Family::DoubleWeibull,
            FamilyParams::GenNorm(_) => Family::GenNorm,
        }
    }

    /// Inverse CDF for `q` in (0, 1).
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            FamilyParams::Normal { mean, std_dev } => {
                GenNormParams { mu: mean, alpha: std_dev * std::f64::consts::SQRT_2, beta: 2.0 }.quantile_unchecked(q)
            }
            FamilyParams::Laplace { loc, scale } => {
                if q < 0.5 {
                    loc + scale * (2.0 * q).ln()
                } else {
                    loc - scale * (2.0 * (1.0 - q)).ln()
                }
            }
            FamilyParams::DoubleWeibull { loc, scale, shape } => {
                if q < 0.5 {
                    loc - scale * (-(2.0 * q).ln()).powf(1.0 / shape)
                } else {
                    loc + scale * (-(2.0 * (1.0 - q)).ln()).powf(1.0 / shape)
                }
            }
            FamilyParams::GenNorm(p) => p.quantile_unchecked(q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: Family,
    pub params: FamilyParams,
    pub w2_distance: f64,
}

fn check_fit_input(samples: &[f64]) -> Result<()> {
    const MIN_SAMPLES: usize = 100;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_SAMPLES, got: samples.len() });
    }
    Ok(())
}

pub fn fit_family(samples: &[f64], family: Family) -> Result<FamilyFit> {
    check_fit_input(samples)?;
    let m = central_moments(samples)?;
    if m.m2.is_nan() || m.m2 <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let params = match family {
        Family::Normal => FamilyParams::Normal { mean: m.mean, std_dev: m.m2.sqrt() },
        Family::Laplace => {
            let mad = samples.iter().map(|x| (x - m.mean).abs()).sum::<f64>() / samples.len() as f64;
            FamilyParams::Laplace { loc: m.mean, scale: mad }
        }
        Family::DoubleWeibull => {
            let folded: Vec<f64> = samples.iter().map(|x| (x - m.mean).abs()).collect();
            let (shape, scale) = weibull_mle(&folded)?;
            FamilyParams::DoubleWeibull { loc: m.mean, scale, shape }
        }
        Family::GenNorm => FamilyParams::GenNorm(fit_gennorm(samples)?),
    };
    let w2 = w2_distance(samples, |q| params.quantile(q))?;
    Ok(FamilyFit { family, params, w2_distance: w2 })
}

/// Fits every family, in [`Family::ALL`] order.
pub fn fit_all_families(samples: &[f64]) -> Result<Vec<FamilyFit>> {
    Family::ALL.iter().map(|&f| fit_family(samples, f)).collect()
}

/// The fit with the smallest W2 distance; earlier entries win ties.
pub fn best_fit(fits: &[FamilyFit]) -> Option<&FamilyFit> {
    fits.iter().fold(None, |best: Option<&FamilyFit>, f| match best {
        Some(b) if b.w2_distance <= f.w2_distance => Some(b),
        _ => Some(f),
    })
}

/// Maximum-likelihood Weibull fit of positive data. Returns `(shape, scale)`.
///
/// The shape solves `Σ y^c ln y / Σ y^c − 1/c − mean(ln y) = 0`, whose left
/// side is increasing in `c`; Newton steps are kept inside a bisection
/// bracket. Data are normalized by their maximum so `y^c` cannot overflow.
/// Exact zeros carry no likelihood information about the shape and are
/// dropped.
pub(crate) fn weibull_mle(data: &[f64]) -> Result<(f64, f64)> {
    let positive: Vec<f64> = data.iter().copied().filter(|&y| y > 0.0).collect();
    if positive.len() < 2 {
        return Err(Error::DegenerateSample("fewer than two nonzero deviations".into()));
    }
    let y_max = positive.iter().copied().fold(0.0, f64::max);
    let logs: Vec<f64> = positive.iter().map(|&y| (y / y_max).ln()).collect();
    let n = logs.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    if mean_log == 0.0 {
        return Err(Error::DegenerateSample("all deviations equal".into()));
    }

    // returns (h(c), h'(c))
    let eval = |c: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (c * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let ratio = s1 / s0;
        let h = ratio - 1.0 / c - mean_log;
        let dh = s2 / s0 - ratio * ratio + 1.0 / (c * c);
        (h, dh)
    };

    let (mut lo, mut hi) = (1e-3, 1.0);
    while eval(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::DegenerateSample("Weibull shape diverges".into()));
        }
    }
    while eval(lo).0 > 0.0 {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::DegenerateSample("Weibull shape vanishes".into()));
        }
    }
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (h, dh) = eval(c);
        if h < 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let mut next = c - h / dh;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - c).abs() < 1e-13 * c {
            c = next;
            break;
        }
        c = next;
    }
    let mean_pow = logs.iter().map(|&l| (c * l).exp()).sum::<f64>() / n;
    let scale = y_max * mean_pow.powf(1.0 / c);
    Ok((c, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn weibull_mle_recovers_parameters() {
        // inverse-CDF draws from Weibull(shape 1.7, scale 2.3)
        let mut rng = crate::seed::rng(3);
        let data: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random();
                2.3 * (-(1.0 - u).ln()).powf(1.0 / 1.7)
            })
            .collect();
        let (shape, scale) = weibull_mle(&data).unwrap();
        assert!((shape - 1.7).abs() < 0.02, "{shape}");
        assert!((scale - 2.3).abs() < 0.02, "{scale}");
    }

    #[test]
    fn weibull_shape_one_is_exponential() {
        // Exponential draws: shape ≈ 1
        let data = GenNormParams::new(0.0, 1.0, 1.0).unwrap().sample(100_000, 8);
        let folded: Vec<f64> = data.iter().map(|x| x.abs()).collect();
        let (shape, scale) = weibull_mle(&folded).unwrap();
        assert!((shape - 1.0).abs() < 0.02 && (scale - 1.0).abs() < 0.02);
    }

    #[test]
    fn normal_data_prefers_normal_over_laplace() {
        let s = GenNormParams::normal(0.0, 1.0).unwrap().sample(100_000, 31);
        let normal = fit_family(&s, Family::Normal).unwrap();
        let laplace = fit_family(&s, Family::Laplace).unwrap();
        assert!(normal.w2_distance <= laplace.w2_distance);
        assert!(normal.w2_distance < 0.02, "{}", normal.w2_distance);
    }

    #[test]
    fn gennorm_data_prefers_gennorm() {
        let s = GenNormParams::new(0.0, 1.0, 1.2).unwrap().sample(100_000, 32);
        let fits = fit_all_families(&s).unwrap();
        let w = |f: Family| fits.iter().find(|x| x.family == f).unwrap().w2_distance;
        assert!(w(Family::GenNorm) <= w(Family::Normal));
        assert!(w(Family::GenNorm) <= w(Family::Laplace));
        assert!(fits.iter().all(|f| f.w2_distance >= 0.0));
    }

    #[test]
    fn laplace_quantile_closed_form() {
        let p = FamilyParams::Laplace { loc: 1.0, scale: 2.0 };
        assert!((p.quantile(0.75) - (1.0 + 2.0 * std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(p.quantile(0.5), 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_family(&[3.0; 200], Family::Normal), Err(Error::DegenerateSample(_))));
        assert!(matches!(fit_family(&[1.0, 2.0, 3.0], Family::Laplace), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn best_fit_picks_minimum() {
        let s = GenNormParams::new(0.0, 1.0, 1.0).unwrap().sample(50_000, 5);
        let fits = fit_all_families(&s).unwrap();
        let best = best_fit(&fits).unwrap();
        assert!(fits.iter().all(|f| best.w2_distance <= f.w2_distance));
        assert_ne!(best.family, Family::Normal);
    }
}

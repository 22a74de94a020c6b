use crate::error::{Error, Result};

/// How the per-quantile differences are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum W2Form {
    /// `(1/n Σ |x₍ᵢ₎ − F⁻¹(zᵢ)|²)^{1/2}`, the order-2 Wasserstein distance.
    #[default]
    Squared,
    /// `(1/n Σ |x₍ᵢ₎ − F⁻¹(zᵢ)|)^{1/2}`: absolute differences under the root.
    Unsquared,
}

/// Order-2 Wasserstein distance between the empirical law of `samples` and
/// the law with inverse CDF `quantile`, evaluated at the midpoint levels
/// `zᵢ = (i − 0.5)/n`.
pub fn w2_distance<F>(samples: &[f64], quantile: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    wasserstein_distance(samples, quantile, W2Form::Squared)
}

pub fn wasserstein_distance<F>(samples: &[f64], quantile: F, form: W2Form) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: samples.len() });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let acc: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = (x - quantile((i as f64 + 0.5) / n)).abs();
            match form {
                W2Form::Squared => d * d,
                W2Form::Unsquared => d,
            }
        })
        .sum();
    Ok((acc / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfit::GenNormParams;

    #[test]
    fn zero_on_exact_quantiles() {
        let d = GenNormParams::new(0.0, 1.0, 1.3).unwrap();
        let n = 500;
        let samples: Vec<f64> = (0..n).rev().map(|i| d.quantile((i as f64 + 0.5) / n as f64).unwrap()).collect();
        let w = w2_distance(&samples, |q| d.quantile_unchecked(q)).unwrap();
        assert!(w < 1e-12, "{w}");
    }

    #[test]
    fn point_masses_differ_by_translation() {
        let w = w2_distance(&[0.0; 10], |_| 2.5).unwrap();
        assert!((w - 2.5).abs() < 1e-15);
        let w = wasserstein_distance(&[0.0; 10], |_| 4.0, W2Form::Unsquared).unwrap();
        assert!((w - 2.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples() {
        assert!(w2_distance(&[1.0], |q| q).is_err());
    }
}

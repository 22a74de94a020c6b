use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moment summary of a sample. `variance` and `kurtosis` are the plain
/// (biased) moment estimators `m2` and `m4 / m2²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub kurtosis: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CentralMoments {
    pub mean: f64,
    pub m2: f64,
    pub m4: f64,
}

pub(crate) fn central_moments(samples: &[f64]) -> Result<CentralMoments> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    Ok(CentralMoments { mean, m2: m2 / n, m4: m4 / n })
}

pub fn sample_stats(samples: &[f64]) -> Result<SampleStats> {
    if samples.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: samples.len() });
    }
    let m = central_moments(samples)?;
    if m.m2.is_nan() || m.m2 <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let kurtosis = m.m4 / (m.m2 * m.m2);
    Ok(SampleStats { n: samples.len(), mean: m.mean, variance: m.m2, kurtosis, excess_kurtosis: kurtosis - 3.0 })
}

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::special::{gamma_p_inv, gamma_q, ln_gamma};

/// Shape search interval used by [`fit_gennorm`].
pub const BETA_MIN: f64 = 0.2;
pub const BETA_MAX: f64 = 5.0;

/// Generalized normal distribution with location `mu`, scale `alpha` and
/// shape `beta`. `beta = 1` is the Laplace law and `beta = 2` a normal law
/// with variance `alpha² / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenNormParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Kurtosis `Γ(5/β)Γ(1/β)/Γ(3/β)²` of the shape-`beta` family.
pub fn kurtosis_of_shape(beta: f64) -> f64 {
    (ln_gamma(5.0 / beta) + ln_gamma(1.0 / beta) - 2.0 * ln_gamma(3.0 / beta)).exp()
}

impl GenNormParams {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { mu, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    /// The standard parametrization of a normal law.
    pub fn normal(mean: f64, std_dev: f64) -> Result<Self> {
        Self::new(mean, std_dev * std::f64::consts::SQRT_2, 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::ParameterDomain(format!("location must be finite, got {}", self.mu)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::ParameterDomain(format!("scale must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::ParameterDomain(format!("shape must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        let b = self.beta;
        self.alpha * self.alpha * (ln_gamma(3.0 / b) - ln_gamma(1.0 / b)).exp()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn kurtosis(&self) -> f64 {
        kurtosis_of_shape(self.beta)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        self.kurtosis() - 3.0
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let b = self.beta;
        let z = (x - self.mu).abs() / self.alpha;
        let log_norm = b.ln() - (2.0 * self.alpha).ln() - ln_gamma(1.0 / b);
        (log_norm - z.powf(b)).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        let d = x - self.mu;
        let z = (d.abs() / self.alpha).powf(self.beta);
        let a = 1.0 / self.beta;
        if d >= 0.0 {
            1.0 - 0.5 * gamma_q(a, z)
        } else {
            0.5 * gamma_q(a, z)
        }
    }

    /// Survival function `1 − F(x)`, accurate deep in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        self.cdf(2.0 * self.mu - x)
    }

    /// Probability mass of the interval `[lo, hi]`, evaluated on the side of
    /// the location where it does not suffer cancellation.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if lo >= hi {
            return 0.0;
        }
        let mass = if lo >= self.mu { self.sf(lo) - self.sf(hi) } else { self.cdf(hi) - self.cdf(lo) };
        mass.max(0.0)
    }

    /// Inverse CDF. `q` must lie strictly inside (0, 1).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        Ok(self.quantile_unchecked(q))
    }

    pub(crate) fn quantile_unchecked(&self, q: f64) -> f64 {
        if q == 0.5 {
            return self.mu;
        }
        // |X − μ| / α = Y^{1/β} with Y ~ Gamma(1/β); P(|X − μ| ≤ r) = |2q − 1|
        let tail = if q > 0.5 { 1.0 - q } else { q };
        let central = 1.0 - 2.0 * tail;
        let y = gamma_p_inv(1.0 / self.beta, central);
        let r = self.alpha * y.powf(1.0 / self.beta);
        if q > 0.5 {
            self.mu + r
        } else {
            self.mu - r
        }
    }

    /// Draws i.i.d. samples as `μ ± α·G^{1/β}`, `G ~ Gamma(1/β, 1)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let gamma = Gamma::new(1.0 / self.beta, 1.0).expect("validated shape");
        let inv_beta = 1.0 / self.beta;
        (0..n)
            .map(|_| {
                let r = self.alpha * gamma.sample(rng).powf(inv_beta);
                if rng.random::<bool>() {
                    self.mu + r
                } else {
                    self.mu - r
                }
            })
            .collect()
    }
}

/// Kurtosis-matching fit: mean for the location, shape from the sample
/// kurtosis by bisection on `[BETA_MIN, BETA_MAX]`, scale from the variance.
pub fn fit_gennorm(samples: &[f64]) -> Result<GenNormParams> {
    const MIN_SAMPLES: usize = 100;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_SAMPLES, got: samples.len() });
    }
    let m = super::stats::central_moments(samples)?;
    if m.m2.is_nan() || m.m2 <= 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let kurt = m.m4 / (m.m2 * m.m2);
    let beta = shape_from_kurtosis(kurt);
    let alpha = (m.m2 * (ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta)).exp()).sqrt();
    GenNormParams::new(m.mean, alpha, beta)
}

/// Inverts the strictly decreasing kurtosis map, clamping to the search
/// interval when the target is unattainable.
pub fn shape_from_kurtosis(kurt: f64) -> f64 {
    if kurt >= kurtosis_of_shape(BETA_MIN) {
        return BETA_MIN;
    }
    if kurt <= kurtosis_of_shape(BETA_MAX) {
        return BETA_MAX;
    }
    let (mut lo, mut hi) = (BETA_MIN, BETA_MAX);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if kurtosis_of_shape(mid) > kurt {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

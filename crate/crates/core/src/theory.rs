//! Numerical checks of the quantization-error bound and of the strongly
//! convex convergence bound for CO3.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distfit::GenNormParams;
use crate::error::{Error, Result};
use crate::fedsim::{run_experiment, BiasRule, RunOptions, SchemeConfig, SimConfig, Task, TaskSpec};
use crate::fpquant::{quantization_error_moment, ErrorMoments, FpFormat};
use crate::seed;
use crate::special::{gamma_q, ln_gamma};

/// Upper-tail error moment claimed for unit-scale sources.
pub const TAIL_BOUND: f64 = 0.15;

/// `E[E²] ≤ 2^{4−2·mant} + 0.3`.
pub fn lemma1_bound(mant_bits: u8) -> f64 {
    (4.0 - 2.0 * f64::from(mant_bits)).exp2() + 0.3
}

/// Exact `E[(G − B)² · 1{G > B}]` for `G ~ GenNorm(p)`, where `B` is the
/// largest level of `format`: the error of draws clipped at the top of
/// the grid.
///
/// With `z = ((B − μ)/α)^β` and `c = B − μ ≥ 0`,
/// `∫_B^∞ (x − B)² f(x) dx = [α²Γ(3/β, z) − 2cαΓ(2/β, z) + c²Γ(1/β, z)] / (2Γ(1/β))`.
pub fn upper_tail_moment(p: &GenNormParams, format: &FpFormat) -> Result<f64> {
    p.validate()?;
    let c = format.max_level() - p.mu;
    if c < 0.0 {
        return Err(Error::Domain("location lies above the largest level".into()));
    }
    let (a, b) = (p.alpha, p.beta);
    let z = (c / a).powf(b);
    // Γ(s, z) / Γ(1/β)
    let upper = |s: f64| gamma_q(s, z) * (ln_gamma(s) - ln_gamma(1.0 / b)).exp();
    Ok(0.5 * (a * a * upper(3.0 / b) - 2.0 * c * a * upper(2.0 / b) + c * c * upper(1.0 / b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Point {
    pub beta: f64,
    pub moments: ErrorMoments,
    /// Quadrature value of the upper-tail moment.
    pub tail_exact: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub tail_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub format: FpFormat,
    pub points: Vec<Lemma1Point>,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| p.within_bound && p.tail_within_bound)
    }

    pub fn text(&self) -> String {
        let f = &self.format;
        let mut s = format!(
            "fp[1,{},{}] scale {}  bound {:.4}  tail bound {TAIL_BOUND} (+{TAIL_SLACK} MC slack)\n",
            f.exp_bits(),
            f.mant_bits(),
            f.scale(),
            lemma1_bound(f.mant_bits())
        );
        s.push_str("  beta    E[E^2]      tail(MC)    tail(exact)  ok\n");
        for p in &self.points {
            writeln!(
                s,
                "  {:<6.3}  {:<10.6}  {:<10.6}  {:<11.6}  {}",
                p.beta,
                p.moments.mean_square,
                p.moments.upper_tail,
                p.tail_exact,
                if p.within_bound && p.tail_within_bound { "yes" } else { "NO" }
            )
            .unwrap();
        }
        s
    }
}

/// Allowance for Monte-Carlo noise on the tail moment.
pub const TAIL_SLACK: f64 = 0.01;

/// Monte-Carlo error moments of unit-scale sources `GenNorm(0, 1, β)` on
/// `format` with the theory scale at `L = 0`, for each shape in `betas`.
pub fn verify_lemma1(format: FpFormat, betas: &[f64], n: usize, seed: u64) -> Result<Lemma1Report> {
    let format = format.with_theory_scale(0.0)?;
    let bound = lemma1_bound(format.mant_bits());
    let points = betas
        .par_iter()
        .enumerate()
        .map(|(i, &beta)| {
            let p = GenNormParams::new(0.0, 1.0, beta)?;
            let moments = quantization_error_moment(&p, &format, n, seed::derive(seed, &[i as u64]))?;
            let tail_exact = upper_tail_moment(&p, &format)?;
            Ok(Lemma1Point {
                beta,
                moments,
                tail_exact,
                bound,
                within_bound: moments.mean_square <= bound,
                tail_within_bound: moments.upper_tail <= TAIL_BOUND + TAIL_SLACK,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Lemma1Report { format, points })
}

/// Constants of the convergence theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub smoothness: f64,
    pub mu: f64,
    /// Bound on the stochastic gradient norm.
    pub g_bound: f64,
    pub rounds: usize,
    pub eta: f64,
    pub mant_bits: u8,
}

impl TheoryParams {
    /// Parameters in the theorem's regime `η = 1/√T`.
    pub fn new(smoothness: f64, mu: f64, g_bound: f64, rounds: usize, mant_bits: u8) -> Result<Self> {
        let p = Self { smoothness, mu, g_bound, rounds, eta: 1.0 / (rounds as f64).sqrt(), mant_bits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.smoothness >= self.mu && self.smoothness.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "need L >= mu > 0, got L = {}, mu = {}",
                self.smoothness, self.mu
            )));
        }
        if self.rounds == 0 {
            return Err(Error::ParameterDomain("rounds must be positive".into()));
        }
        if !(self.g_bound >= 0.0 && self.g_bound.is_finite()) {
            return Err(Error::ParameterDomain(format!("G must be non-negative, got {}", self.g_bound)));
        }
        let expected = 1.0 / (self.rounds as f64).sqrt();
        if (self.eta - expected).abs() > 1e-12 * expected {
            return Err(Error::ParameterDomain(format!(
                "the bound assumes eta = 1/sqrt(T) = {expected}, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// The three terms of the bound on `E L(w̄_T) − L*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `‖ŵ₀ − w*‖² / √T`
    pub initial: f64,
    /// `G² / √T`
    pub gradient: f64,
    /// `(μ + 2L)(2^{4−2·mant} + 0.3) / T`
    pub quantization: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.initial + self.gradient + self.quantization
    }
}

pub fn theorem_terms(p: &TheoryParams, w0_dist_sq: f64) -> Result<BoundTerms> {
    p.validate()?;
    let t = p.rounds as f64;
    Ok(BoundTerms {
        initial: w0_dist_sq / t.sqrt(),
        gradient: p.g_bound * p.g_bound / t.sqrt(),
        quantization: (p.mu + 2.0 * p.smoothness) * lemma1_bound(p.mant_bits) / t,
    })
}

pub fn theorem_bound(p: &TheoryParams, w0_dist_sq: f64) -> Result<f64> {
    theorem_terms(p, w0_dist_sq).map(|t| t.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub g_bound: f64,
    pub max_gradient_norm: f64,
    /// Trajectory indices where `‖∇L(w)‖ > G`.
    pub violations: Vec<usize>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reads L and μ off the quadratic's Hessian and checks the true gradient
/// norm against `g_bound` along `trajectory`.
pub fn check_assumptions(task: &Task, trajectory: &[Vec<f64>], g_bound: f64) -> Result<AssumptionReport> {
    let (Some(smoothness), Some(strong_convexity), Some(_)) =
        (task.smoothness(), task.strong_convexity(), task.hessian_diagonal())
    else {
        return Err(Error::Input("assumption checks need a quadratic task".into()));
    };
    let mut max_gradient_norm: f64 = 0.0;
    let mut violations = Vec::new();
    for (i, w) in trajectory.iter().enumerate() {
        let norm = task.full_gradient(w).iter().map(|g| g * g).sum::<f64>().sqrt();
        max_gradient_norm = max_gradient_norm.max(norm);
        if norm > g_bound {
            violations.push(i);
        }
    }
    Ok(AssumptionReport { smoothness, strong_convexity, g_bound, max_gradient_norm, violations })
}

/// A CO3 setup for the convergence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSetup {
    pub task: TaskSpec,
    pub format: FpFormat,
    pub gamma: f64,
    pub users: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ConvergenceSetup {
    /// Two-dimensional quadratic with Hessian diag(1, 2), optimum (1, −1),
    /// start at the origin and GenNorm(β = 1.5) gradient noise of unit
    /// standard deviation; fp4 with full memory, one user, 50 repeats.
    fn default() -> Self {
        let mut task = TaskSpec::quadratic(2, 1.0, 2.0).with_noise(1.0, 1.5);
        task.optimum = Some(vec![1.0, -1.0]);
        Self { task, format: FpFormat::FP4, gamma: 1.0, users: 1, repeats: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub rounds: usize,
    /// Mean of `L(w̄_T) − L*` over repeats.
    pub empirical_gap: f64,
    pub std_error: f64,
    pub terms: BoundTerms,
    pub bound: f64,
    pub g_bound: f64,
    /// Largest `‖m_t‖₁²` seen (an upper bound on `‖m_t‖²`), to compare
    /// with the error-moment bound the third term relies on.
    pub max_memory_sq: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub points: Vec<ConvergencePoint>,
}

impl BoundReport {
    pub fn satisfied(&self) -> bool {
        self.points.iter().all(|p| p.satisfied)
    }

    /// `gap(T_first) / gap(T_last)`.
    pub fn shrink_factor(&self) -> Option<f64> {
        let (a, b) = (self.points.first()?, self.points.last()?);
        Some(a.empirical_gap / b.empirical_gap)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("T,empirical_gap,bound\n");
        for p in &self.points {
            writeln!(s, "{},{:.16e},{:.16e}", p.rounds, p.empirical_gap, p.bound).unwrap();
        }
        s
    }

    pub fn text(&self) -> String {
        let mut s = String::from(
            "     T  gap(mean)     std.err      bound         initial     gradient    quant       G^2        max|m|1^2 ok\n",
        );
        for p in &self.points {
            writeln!(
                s,
                "{:>6}  {:<12.6e}  {:<10.3e}  {:<12.6e}  {:<10.4e}  {:<10.4e}  {:<10.4e}  {:<9.4}  {:<8.4}  {}",
                p.rounds,
                p.empirical_gap,
                p.std_error,
                p.bound,
                p.terms.initial,
                p.terms.gradient,
                p.terms.quantization,
                p.g_bound * p.g_bound,
                p.max_memory_sq,
                if p.satisfied { "yes" } else { "NO" }
            )
            .unwrap();
        }
        s
    }
}

struct RepeatResult {
    gap: f64,
    max_grad_sq: f64,
    max_memory_sq: f64,
}

/// Runs `setup.repeats` seeded CO3 trajectories with the theory scale and
/// `η = 1/√T` for each horizon and compares the mean gap at the averaged
/// iterate with the bound.
///
/// `G²` is the largest `‖∇L(ŵ_t)‖²` seen on any trajectory plus the noise
/// second moment, which bounds `E‖g_t‖²` along the runs.
pub fn verify_convergence(setup: &ConvergenceSetup, horizons: &[usize]) -> Result<BoundReport> {
    let probe = setup.task.build(setup.users, setup.seed)?;
    let (Some(smoothness), Some(mu), Some(optimum)) = (probe.smoothness(), probe.strong_convexity(), probe.optimum())
    else {
        return Err(Error::Input("convergence check needs a quadratic task".into()));
    };
    if setup.repeats == 0 {
        return Err(Error::ParameterDomain("repeats must be positive".into()));
    }
    let w0_dist_sq: f64 = probe.initial_model().iter().zip(optimum).map(|(w, o)| (w - o) * (w - o)).sum();
    let noise_sq = probe.noise_second_moment().unwrap_or(0.0);

    let mut points = Vec::with_capacity(horizons.len());
    for &rounds in horizons {
        let eta = 1.0 / (rounds as f64).sqrt();
        let scheme = SchemeConfig::co3(setup.format, setup.gamma).with_bias_rule(BiasRule::Theory);
        let results = (0..setup.repeats)
            .into_par_iter()
            .map(|r| {
                let run_seed = seed::derive(setup.seed, &[rounds as u64, r as u64]);
                let config = SimConfig::new(setup.task.clone(), scheme.clone(), rounds, setup.users, eta, run_seed);
                let out = run_experiment(&config, RunOptions { keep_trajectory: true, ..Default::default() })?;
                let max_grad_sq = out.trajectory.iter().map(|w| grad_sq(&out.task, w)).fold(0.0, f64::max);
                let max_memory_sq = out.records.iter().flat_map(|r| r.mem_l1.iter()).map(|m| m * m).fold(0.0, f64::max);
                Ok(RepeatResult { gap: out.average_gap().expect("quadratic"), max_grad_sq, max_memory_sq })
            })
            .collect::<Result<Vec<_>>>()?;

        let n = results.len() as f64;
        let mean = results.iter().map(|r| r.gap).sum::<f64>() / n;
        let var = results.iter().map(|r| (r.gap - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let max_grad_sq = results.iter().map(|r| r.max_grad_sq).fold(0.0, f64::max);
        let g_bound = (max_grad_sq + noise_sq).sqrt();
        let params = TheoryParams::new(smoothness, mu, g_bound, rounds, setup.format.mant_bits())?;
        let terms = theorem_terms(&params, w0_dist_sq)?;
        points.push(ConvergencePoint {
            rounds,
            empirical_gap: mean,
            std_error: (var / n).sqrt(),
            terms,
            bound: terms.total(),
            g_bound,
            max_memory_sq: results.iter().map(|r| r.max_memory_sq).fold(0.0, f64::max),
            satisfied: mean <= terms.total(),
        });
    }
    Ok(BoundReport { points })
}

fn grad_sq(task: &Task, w: &[f64]) -> f64 {
    task.full_gradient(w).iter().map(|g| g * g).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::{run_experiment, RunOptions, SchemeKind};

    #[test]
    fn lemma_bound_values() {
        assert_eq!(lemma1_bound(1), 4.3);
        assert_eq!(lemma1_bound(2), 1.3);
        assert_eq!(lemma1_bound(0), 16.3);
    }

    #[test]
    fn theorem_example() {
        let p = TheoryParams::new(1.0, 1.0, 1.0, 100, 2).unwrap();
        assert!((theorem_bound(&p, 1.0).unwrap() - 0.239).abs() < 1e-12);
        let far = TheoryParams::new(1.0, 1.0, 1.0, 100_000_000, 2).unwrap();
        assert!(theorem_bound(&far, 1.0).unwrap() < 3e-4);
        let coarse = theorem_terms(&TheoryParams::new(1.0, 1.0, 1.0, 100, 1).unwrap(), 1.0).unwrap();
        let fine = theorem_terms(&p, 1.0).unwrap();
        assert_eq!((coarse.initial, coarse.gradient), (fine.initial, fine.gradient));
        assert!(coarse.quantization > fine.quantization);
        let mut bad = p;
        bad.eta = 0.5;
        assert!(theorem_bound(&bad, 1.0).is_err());
        assert!(TheoryParams::new(1.0, 2.0, 1.0, 100, 2).is_err());
    }

    #[test]
    fn bound_monotonicity_grid() {
        let b = |l: f64, mu: f64, g: f64, t: usize, m: u8| {
            theorem_bound(&TheoryParams::new(l, mu, g, t, m).unwrap(), 1.0).unwrap()
        };
        for &t in &[10, 100, 1000] {
            for &g in &[0.5, 1.0, 2.0] {
                assert!(b(2.0, 1.0, g, t, 2) > b(2.0, 1.0, g, 4 * t, 2));
                assert!(b(2.0, 1.0, g, t, 2) < b(2.0, 1.0, 2.0 * g, t, 2));
                assert!(b(2.0, 1.0, g, t, 2) < b(3.0, 1.0, g, t, 2));
                assert!(b(2.0, 1.0, g, t, 2) < b(2.0, 1.5, g, t, 2));
                assert!(b(2.0, 1.0, g, t, 2) < b(2.0, 1.0, g, t, 1));
            }
        }
    }

    #[test]
    fn tail_moment_matches_quadrature() {
        // mpmath quadrature of ∫_3^∞ (x−3)² f(x) dx, unit scale
        let format = FpFormat::FP4.with_theory_scale(0.0).unwrap();
        for (beta, expect) in
            [(1.0, 0.049_787_068_367_863_943), (1.5, 2.614_623_899_113_701_4e-4), (2.0, 4.900_717_832_199_561e-7)]
        {
            let p = GenNormParams::new(0.0, 1.0, beta).unwrap();
            let exact = upper_tail_moment(&p, &format).unwrap();
            assert!((exact - expect).abs() < 1e-12 * expect.max(1e-3), "β={beta}: {exact}");
        }
    }

    #[test]
    fn tail_moment_agrees_with_monte_carlo() {
        let format = FpFormat::FP4.with_theory_scale(0.0).unwrap();
        for beta in [1.0, 1.5] {
            let p = GenNormParams::new(0.0, 1.0, beta).unwrap();
            let exact = upper_tail_moment(&p, &format).unwrap();
            let mc = quantization_error_moment(&p, &format, 1_000_000, 17).unwrap().upper_tail;
            // few draws land beyond B at β = 1.5, so the tolerance is loose
            assert!((exact - mc).abs() < 0.2 * exact, "β={beta}: {exact} vs {mc}");
        }
    }

    #[test]
    fn assumption_checks() {
        let mut spec = TaskSpec::quadratic(2, 1.0, 4.0);
        spec.optimum = Some(vec![0.0, 0.0]);
        let task = spec.build(1, 0).unwrap();
        let r = check_assumptions(&task, &[vec![0.5, 0.0], vec![0.0, 1.0]], 3.0).unwrap();
        assert_eq!((r.strong_convexity, r.smoothness), (1.0, 4.0));
        assert_eq!(r.violations, vec![1]);
        assert!(!r.holds());
        let identity = TaskSpec::quadratic(3, 1.0, 1.0).build(1, 0).unwrap();
        let r = check_assumptions(&identity, &[], 1.0).unwrap();
        assert_eq!((r.smoothness, r.strong_convexity), (1.0, 1.0));
        assert!(check_assumptions(&TaskSpec::logistic(2).build(1, 0).unwrap(), &[], 1.0).is_err());
    }

    #[test]
    fn trajectory_stays_in_gradient_ball() {
        let setup = ConvergenceSetup::default();
        let config = SimConfig::new(setup.task.clone(), SchemeConfig::new(SchemeKind::Uncompressed), 50, 1, 0.1, 3);
        let out = run_experiment(&config, RunOptions { keep_trajectory: true, ..Default::default() }).unwrap();
        assert_eq!(out.trajectory.len(), 51);
        let r = check_assumptions(&out.task, &out.trajectory, 10.0).unwrap();
        assert!(r.holds(), "{r:?}");
    }

    #[test]
    fn noiseless_convergence_is_within_bound() {
        let mut setup = ConvergenceSetup { repeats: 4, ..Default::default() };
        setup.task.noise_scale = 0.0;
        let report = verify_convergence(&setup, &[100]).unwrap();
        assert!(report.satisfied(), "{}", report.text());
    }
}

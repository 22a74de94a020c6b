//! Desk-scale training problems with seeded per-user data.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distfit::GenNormParams;
use crate::error::{Error, Result};
use crate::seed;
use crate::special::ln_gamma;

/// Stream tags for [`seed::derive`].
const DATA_STREAM: u64 = 0xDA7A;
const GRAD_STREAM: u64 = 0x6AAD;
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    LogisticRegression,
    TeacherStudentMlp,
}

fn default_one() -> f64 {
    1.0
}
fn default_smoothness() -> f64 {
    4.0
}
fn default_noise_shape() -> f64 {
    2.0
}
fn default_samples() -> usize {
    256
}
fn default_batch() -> usize {
    32
}
fn default_hidden() -> usize {
    16
}
fn default_l2() -> f64 {
    1e-3
}

/// Problem description as read from a config file.
///
/// `dim` is the parameter count for the quadratic and the input width for
/// the other two tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    /// Smallest Hessian eigenvalue (quadratic).
    #[serde(default = "default_one")]
    pub mu: f64,
    /// Largest Hessian eigenvalue (quadratic).
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    /// Explicit Hessian diagonal; overrides `mu`/`smoothness`.
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    /// Explicit optimum; drawn from N(0, 1) when absent.
    #[serde(default)]
    pub optimum: Option<Vec<f64>>,
    /// Explicit starting point; zero when absent (random for the MLP).
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Standard deviation of additive gradient noise (quadratic) or label
    /// noise (MLP).
    #[serde(default)]
    pub noise_scale: f64,
    /// GenNorm shape of the quadratic's gradient noise.
    #[serde(default = "default_noise_shape")]
    pub noise_shape: f64,
    /// Spread of per-user optima around the global optimum (quadratic).
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default = "default_samples")]
    pub samples_per_user: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

impl TaskSpec {
    pub fn quadratic(dim: usize, mu: f64, smoothness: f64) -> Self {
        Self {
            kind: TaskKind::Quadratic,
            dim,
            mu,
            smoothness,
            eigenvalues: None,
            optimum: None,
            init: None,
            noise_scale: 0.0,
            noise_shape: default_noise_shape(),
            heterogeneity: 0.0,
            samples_per_user: default_samples(),
            batch_size: default_batch(),
            hidden: default_hidden(),
            l2: default_l2(),
        }
    }

    pub fn logistic(dim: usize) -> Self {
        Self { kind: TaskKind::LogisticRegression, ..Self::quadratic(dim, 1.0, 1.0) }
    }

    pub fn mlp(dim: usize, hidden: usize) -> Self {
        Self { kind: TaskKind::TeacherStudentMlp, hidden, ..Self::quadratic(dim, 1.0, 1.0) }
    }

    pub fn with_noise(mut self, scale: f64, shape: f64) -> Self {
        self.noise_scale = scale;
        self.noise_shape = shape;
        self
    }

    /// Checks the spec and reports the first offending field by name.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("task.{field}: {why}")));
        if self.dim == 0 {
            return bad("dim", "must be at least 1".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale", format!("must be finite and non-negative, got {}", self.noise_scale));
        }
        if !(self.noise_shape > 0.0 && self.noise_shape.is_finite()) {
            return bad("noise_shape", format!("must be positive, got {}", self.noise_shape));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return bad("heterogeneity", format!("must be non-negative, got {}", self.heterogeneity));
        }
        match self.kind {
            TaskKind::Quadratic => {
                if let Some(ev) = &self.eigenvalues {
                    if ev.len() != self.dim {
                        return bad("eigenvalues", format!("expected {} entries, got {}", self.dim, ev.len()));
                    }
                    if ev.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                        return bad("eigenvalues", "entries must be positive".into());
                    }
                } else {
                    if !(self.mu > 0.0 && self.mu.is_finite()) {
                        return bad("mu", format!("must be positive, got {}", self.mu));
                    }
                    if !(self.smoothness >= self.mu && self.smoothness.is_finite()) {
                        return bad(
                            "smoothness",
                            format!("must be at least mu = {}, got {}", self.mu, self.smoothness),
                        );
                    }
                    if self.dim == 1 && self.smoothness != self.mu {
                        return bad("smoothness", "a one-dimensional quadratic needs smoothness == mu".into());
                    }
                }
                if let Some(o) = &self.optimum {
                    if o.len() != self.dim {
                        return bad("optimum", format!("expected {} entries, got {}", self.dim, o.len()));
                    }
                }
            }
            TaskKind::LogisticRegression | TaskKind::TeacherStudentMlp => {
                if self.samples_per_user == 0 {
                    return bad("samples_per_user", "must be at least 1".into());
                }
                if self.batch_size == 0 {
                    return bad("batch_size", "must be at least 1".into());
                }
                if !(self.l2 >= 0.0 && self.l2.is_finite()) {
                    return bad("l2", format!("must be non-negative, got {}", self.l2));
                }
                if self.kind == TaskKind::TeacherStudentMlp && self.hidden == 0 {
                    return bad("hidden", "must be at least 1".into());
                }
            }
        }
        if let Some(init) = &self.init {
            let expected = self.param_count();
            if init.len() != expected {
                return bad("init", format!("expected {expected} entries, got {}", init.len()));
            }
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        match self.kind {
            TaskKind::Quadratic | TaskKind::LogisticRegression => self.dim,
            TaskKind::TeacherStudentMlp => self.hidden * self.dim + self.hidden,
        }
    }

    /// Materializes per-user data for `users` users.
    pub fn build(&self, users: usize, seed: u64) -> Result<Task> {
        self.validate()?;
        if users == 0 {
            return Err(Error::Config("users: must be at least 1".into()));
        }
        let inner = match self.kind {
            TaskKind::Quadratic => Inner::Quadratic(Quadratic::build(self, users, seed)?),
            TaskKind::LogisticRegression => Inner::Logistic(Logistic::build(self, users, seed)),
            TaskKind::TeacherStudentMlp => Inner::Mlp(Mlp::build(self, users, seed)),
        };
        let init = match (&self.init, &inner) {
            (Some(w), _) => w.clone(),
            (None, Inner::Mlp(m)) => m.random_init(seed),
            (None, _) => vec![0.0; self.param_count()],
        };
        Ok(Task { spec: self.clone(), users, seed, inner, init })
    }
}

/// A built task: per-user data plus loss and gradient oracles.
#[derive(Debug, Clone)]
pub struct Task {
    spec: TaskSpec,
    users: usize,
    seed: u64,
    inner: Inner,
    init: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Inner {
    Quadratic(Quadratic),
    Logistic(Logistic),
    Mlp(Mlp),
}

impl Task {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn dim(&self) -> usize {
        self.init.len()
    }

    pub fn initial_model(&self) -> &[f64] {
        &self.init
    }

    /// Parameter ranges fitted and coded separately, one per weight tensor.
    pub fn layers(&self) -> Vec<Range<usize>> {
        match &self.inner {
            Inner::Mlp(m) => {
                let split = m.hidden * m.n_in;
                vec![0..split, split..split + m.hidden]
            }
            _ => std::iter::once(0..self.dim()).collect(),
        }
    }

    /// Global objective: the mean of the users' local objectives.
    pub fn loss(&self, w: &[f64]) -> f64 {
        match &self.inner {
            Inner::Quadratic(q) => q.loss(w),
            Inner::Logistic(l) => l.loss(w),
            Inner::Mlp(m) => m.loss(w),
        }
    }

    pub fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        match &self.inner {
            Inner::Quadratic(q) => q.gradient(w),
            Inner::Logistic(l) => l.full_gradient(w),
            Inner::Mlp(m) => m.full_gradient(w),
        }
    }

    /// Stochastic gradient of user `u` at round `t`. Its expectation over the
    /// draw is the user's full local gradient.
    pub fn local_gradient(&self, u: usize, w: &[f64], t: usize) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive(self.seed, &[GRAD_STREAM, t as u64, u as u64]));
        match &self.inner {
            Inner::Quadratic(q) => q.local_gradient(u, w, &mut rng),
            Inner::Logistic(l) => l.local_gradient(u, w, self.spec.batch_size, &mut rng),
            Inner::Mlp(m) => m.local_gradient(u, w, self.spec.batch_size, &mut rng),
        }
    }

    /// Minimizer, when known in closed form.
    pub fn optimum(&self) -> Option<&[f64]> {
        match &self.inner {
            Inner::Quadratic(q) => Some(&q.optimum),
            _ => None,
        }
    }

    pub fn optimal_loss(&self) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.loss(&q.optimum)),
            _ => None,
        }
    }

    /// `L(w) − L*` when the optimum is known.
    pub fn gap(&self, w: &[f64]) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.gap(w)),
            _ => None,
        }
    }

    /// Diagonal Hessian of the quadratic.
    pub fn hessian_diagonal(&self) -> Option<&[f64]> {
        match &self.inner {
            Inner::Quadratic(q) => Some(&q.eigen),
            _ => None,
        }
    }

    /// Largest Hessian eigenvalue (an upper bound for logistic regression).
    pub fn smoothness(&self) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.eigen.iter().copied().fold(f64::MIN, f64::max)),
            Inner::Logistic(l) => Some(l.smoothness_bound()),
            Inner::Mlp(_) => None,
        }
    }

    pub fn strong_convexity(&self) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.eigen.iter().copied().fold(f64::MAX, f64::min)),
            Inner::Logistic(l) if l.l2 > 0.0 => Some(l.l2),
            _ => None,
        }
    }

    /// `E‖g − ∇L_u‖²` for the quadratic's additive noise.
    pub fn noise_second_moment(&self) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.noise.map_or(0.0, |n| n.variance()) * self.dim() as f64),
            _ => None,
        }
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½ (w − w_u)ᵀ A (w − w_u)` per user, `A` diagonal, plus GenNorm noise on
/// the gradient.
#[derive(Debug, Clone)]
struct Quadratic {
    eigen: Vec<f64>,
    optimum: Vec<f64>,
    /// Per-user optima; they average to `optimum`.
    user_optima: Vec<Vec<f64>>,
    noise: Option<GenNormParams>,
}

impl Quadratic {
    fn build(spec: &TaskSpec, users: usize, seed: u64) -> Result<Self> {
        let d = spec.dim;
        let eigen = match &spec.eigenvalues {
            Some(ev) => ev.clone(),
            None if d == 1 => vec![spec.mu],
            None => (0..d).map(|i| spec.mu + (spec.smoothness - spec.mu) * i as f64 / (d - 1) as f64).collect(),
        };
        let mut rng = seed::rng(seed::derive(seed, &[DATA_STREAM]));
        let optimum = match &spec.optimum {
            Some(o) => o.clone(),
            None => gaussian_vec(&mut rng, d, 1.0),
        };
        let mut offsets: Vec<Vec<f64>> = (0..users).map(|_| gaussian_vec(&mut rng, d, spec.heterogeneity)).collect();
        for i in 0..d {
            let mean = offsets.iter().map(|o| o[i]).sum::<f64>() / users as f64;
            offsets.iter_mut().for_each(|o| o[i] -= mean);
        }
        let user_optima = offsets.into_iter().map(|o| o.iter().zip(&optimum).map(|(a, b)| a + b).collect()).collect();
        let noise = if spec.noise_scale > 0.0 {
            let beta = spec.noise_shape;
            // α chosen so the noise has standard deviation `noise_scale`
            let alpha = spec.noise_scale * (0.5 * (ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta))).exp();
            Some(GenNormParams::new(0.0, alpha, beta)?)
        } else {
            None
        };
        Ok(Self { eigen, optimum, user_optima, noise })
    }

    fn gap(&self, w: &[f64]) -> f64 {
        0.5 * w.iter().zip(&self.optimum).zip(&self.eigen).map(|((w, o), a)| a * (w - o) * (w - o)).sum::<f64>()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let per_user = self
            .user_optima
            .iter()
            .map(|o| 0.5 * w.iter().zip(o).zip(&self.eigen).map(|((w, o), a)| a * (w - o) * (w - o)).sum::<f64>());
        per_user.sum::<f64>() / self.user_optima.len() as f64
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.optimum).zip(&self.eigen).map(|((w, o), a)| a * (w - o)).collect()
    }

    fn local_gradient<R: Rng>(&self, u: usize, w: &[f64], rng: &mut R) -> Vec<f64> {
        let mut g: Vec<f64> =
            w.iter().zip(&self.user_optima[u]).zip(&self.eigen).map(|((w, o), a)| a * (w - o)).collect();
        if let Some(noise) = &self.noise {
            for (g, n) in g.iter_mut().zip(noise.sample_with(rng, w.len())) {
                *g += n;
            }
        }
        g
    }
}

/// Binary logistic regression with labels drawn from a random teacher and
/// an L2 penalty `l2/2 ‖w‖²`.
#[derive(Debug, Clone)]
struct Logistic {
    /// Per user: rows of features and ±1 labels.
    features: Vec<Vec<Vec<f64>>>,
    labels: Vec<Vec<f64>>,
    l2: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{−z})` without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl Logistic {
    fn build(spec: &TaskSpec, users: usize, seed: u64) -> Self {
        let d = spec.dim;
        let mut rng = seed::rng(seed::derive(seed, &[DATA_STREAM]));
        let teacher = gaussian_vec(&mut rng, d, 3.0 / (d as f64).sqrt());
        let mut features = Vec::with_capacity(users);
        let mut labels = Vec::with_capacity(users);
        for u in 0..users {
            let mut rng = seed::rng(seed::derive(seed, &[DATA_STREAM, u as u64]));
            let xs: Vec<Vec<f64>> = (0..spec.samples_per_user).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
            let ys =
                xs.iter().map(|x| if rng.random::<f64>() < sigmoid(dot(x, &teacher)) { 1.0 } else { -1.0 }).collect();
            features.push(xs);
            labels.push(ys);
        }
        Self { features, labels, l2: spec.l2 }
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (xs, ys) in self.features.iter().zip(&self.labels) {
            for (x, y) in xs.iter().zip(ys) {
                total += softplus_neg(y * dot(x, w));
            }
            n += xs.len();
        }
        total / n as f64 + 0.5 * self.l2 * dot(w, w)
    }

    fn accumulate(&self, grad: &mut [f64], x: &[f64], y: f64, w: &[f64], weight: f64) {
        // d/dw ln(1 + e^{−y x·w}) = −y σ(−y x·w) x
        let c = -y * sigmoid(-y * dot(x, w)) * weight;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += c * xi;
        }
    }

    fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        let n: usize = self.features.iter().map(Vec::len).sum();
        let mut g: Vec<f64> = w.iter().map(|w| self.l2 * w).collect();
        for (xs, ys) in self.features.iter().zip(&self.labels) {
            for (x, &y) in xs.iter().zip(ys) {
                self.accumulate(&mut g, x, y, w, 1.0 / n as f64);
            }
        }
        g
    }

    fn local_gradient<R: Rng>(&self, u: usize, w: &[f64], batch: usize, rng: &mut R) -> Vec<f64> {
        let xs = &self.features[u];
        let mut g: Vec<f64> = w.iter().map(|w| self.l2 * w).collect();
        for _ in 0..batch {
            let i = rng.random_range(0..xs.len());
            self.accumulate(&mut g, &xs[i], self.labels[u][i], w, 1.0 / batch as f64);
        }
        g
    }

    /// `¼ max ‖x‖² + l2`, an upper bound on the Hessian's spectral norm.
    fn smoothness_bound(&self) -> f64 {
        let max_sq = self.features.iter().flatten().map(|x| dot(x, x)).fold(0.0, f64::max);
        0.25 * max_sq + self.l2
    }
}

/// Two-layer tanh network `f(x) = v · tanh(W x)` trained on the outputs of a
/// fixed random teacher with the same architecture. Parameters are laid out
/// as `W` (row-major, `hidden × n_in`) followed by `v`.
#[derive(Debug, Clone)]
struct Mlp {
    n_in: usize,
    hidden: usize,
    inputs: Vec<Vec<Vec<f64>>>,
    targets: Vec<Vec<f64>>,
}

impl Mlp {
    fn build(spec: &TaskSpec, users: usize, seed: u64) -> Self {
        let (n_in, hidden) = (spec.dim, spec.hidden);
        let mut rng = seed::rng(seed::derive(seed, &[DATA_STREAM]));
        let teacher = Self::random_params(&mut rng, n_in, hidden);
        let mut inputs = Vec::with_capacity(users);
        let mut targets = Vec::with_capacity(users);
        let shape = Mlp { n_in, hidden, inputs: Vec::new(), targets: Vec::new() };
        for u in 0..users {
            let mut rng = seed::rng(seed::derive(seed, &[DATA_STREAM, u as u64]));
            let xs: Vec<Vec<f64>> = (0..spec.samples_per_user).map(|_| gaussian_vec(&mut rng, n_in, 1.0)).collect();
            let ys = xs
                .iter()
                .map(|x| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    shape.forward(&teacher, x).0 + spec.noise_scale * noise
                })
                .collect();
            inputs.push(xs);
            targets.push(ys);
        }
        Self { n_in, hidden, inputs, targets }
    }

    fn random_params<R: Rng>(rng: &mut R, n_in: usize, hidden: usize) -> Vec<f64> {
        let mut p = gaussian_vec(rng, hidden * n_in, 1.0 / (n_in as f64).sqrt());
        p.extend(gaussian_vec(rng, hidden, 1.0 / (hidden as f64).sqrt()));
        p
    }

    fn random_init(&self, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive(seed, &[INIT_STREAM]));
        Self::random_params(&mut rng, self.n_in, self.hidden)
    }

    /// Returns the output and the hidden activations.
    fn forward(&self, p: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let (w, v) = p.split_at(self.hidden * self.n_in);
        let h: Vec<f64> = w.chunks(self.n_in).map(|row| dot(row, x).tanh()).collect();
        (dot(v, &h), h)
    }

    fn loss(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (xs, ys) in self.inputs.iter().zip(&self.targets) {
            for (x, y) in xs.iter().zip(ys) {
                let r = self.forward(p, x).0 - y;
                total += 0.5 * r * r;
            }
            n += xs.len();
        }
        total / n as f64
    }

    fn accumulate(&self, grad: &mut [f64], p: &[f64], x: &[f64], y: f64, weight: f64) {
        let (out, h) = self.forward(p, x);
        let r = (out - y) * weight;
        let split = self.hidden * self.n_in;
        let v = &p[split..];
        let (gw, gv) = grad.split_at_mut(split);
        for j in 0..self.hidden {
            gv[j] += r * h[j];
            let back = r * v[j] * (1.0 - h[j] * h[j]);
            for (g, xi) in gw[j * self.n_in..(j + 1) * self.n_in].iter_mut().zip(x) {
                *g += back * xi;
            }
        }
    }

    fn full_gradient(&self, p: &[f64]) -> Vec<f64> {
        let n: usize = self.inputs.iter().map(Vec::len).sum();
        let mut g = vec![0.0; p.len()];
        for (xs, ys) in self.inputs.iter().zip(&self.targets) {
            for (x, &y) in xs.iter().zip(ys) {
                self.accumulate(&mut g, p, x, y, 1.0 / n as f64);
            }
        }
        g
    }

    fn local_gradient<R: Rng>(&self, u: usize, p: &[f64], batch: usize, rng: &mut R) -> Vec<f64> {
        let xs = &self.inputs[u];
        let mut g = vec![0.0; p.len()];
        for _ in 0..batch {
            let i = rng.random_range(0..xs.len());
            self.accumulate(&mut g, p, &xs[i], self.targets[u][i], 1.0 / batch as f64);
        }
        g
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn numeric_gradient(task: &Task, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|i| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[i] += h;
                b[i] -= h;
                (task.loss(&a) - task.loss(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_exact_gradient_without_noise() {
        let mut spec = TaskSpec::quadratic(2, 1.0, 4.0);
        spec.optimum = Some(vec![1.0, -2.0]);
        let task = spec.build(3, 0).unwrap();
        assert_eq!(task.hessian_diagonal().unwrap(), &[1.0, 4.0]);
        assert_eq!((task.strong_convexity(), task.smoothness()), (Some(1.0), Some(4.0)));
        // A·w − b with b = A·w*
        assert_eq!(task.local_gradient(1, &[0.0, 0.0], 7), vec![-1.0, 8.0]);
        assert_eq!(task.local_gradient(0, &[1.0, -2.0], 3), vec![0.0, 0.0]);
        assert_eq!(task.gap(&[1.0, -2.0]), Some(0.0));
    }

    #[test]
    fn heterogeneous_users_share_the_global_optimum() {
        let mut spec = TaskSpec::quadratic(3, 0.5, 2.0);
        spec.heterogeneity = 1.0;
        let task = spec.build(4, 11).unwrap();
        let w = [0.3, -0.1, 0.8];
        let mean: Vec<f64> =
            (0..3).map(|i| (0..4).map(|u| task.local_gradient(u, &w, 0)[i]).sum::<f64>() / 4.0).collect();
        let full = task.full_gradient(&w);
        for (a, b) in mean.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_noise_is_unbiased() {
        let spec = TaskSpec::quadratic(2, 1.0, 2.0).with_noise(0.5, 1.2);
        let task = spec.build(1, 5).unwrap();
        let w = [0.5, 0.5];
        let n = 10_000;
        let full = task.full_gradient(&w);
        for i in 0..2 {
            let draws: Vec<f64> = (0..n).map(|t| task.local_gradient(0, &w, t)[i]).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let se = 0.5 / (n as f64).sqrt();
            assert!((mean - full[i]).abs() < 3.0 * se, "coordinate {i}: {mean} vs {}", full[i]);
        }
        assert!((task.noise_second_moment().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut spec = TaskSpec::logistic(5);
        spec.samples_per_user = 40;
        let task = spec.build(2, 3).unwrap();
        let w = [0.2, -0.4, 0.1, 0.0, 0.3];
        let num = numeric_gradient(&task, &w);
        for (a, b) in task.full_gradient(&w).iter().zip(&num) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn logistic_minibatch_is_unbiased() {
        let mut spec = TaskSpec::logistic(3);
        spec.samples_per_user = 20;
        spec.batch_size = 4;
        let task = spec.build(1, 9).unwrap();
        let w = [0.1, 0.2, -0.3];
        let full = task.full_gradient(&w);
        let n = 10_000;
        for i in 0..3 {
            let draws: Vec<f64> = (0..n).map(|t| task.local_gradient(0, &w, t)[i]).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - full[i]).abs() < 3.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn mlp_layers_and_gradient() {
        let mut spec = TaskSpec::mlp(4, 3);
        spec.samples_per_user = 30;
        let task = spec.build(2, 1).unwrap();
        assert_eq!(task.dim(), 15);
        assert_eq!(task.layers(), vec![0..12, 12..15]);
        let w = task.initial_model().to_vec();
        let num = numeric_gradient(&task, &w);
        for (a, b) in task.full_gradient(&w).iter().zip(&num) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert!(task.optimum().is_none() && task.gap(&w).is_none());
    }

    #[test]
    fn validation_names_the_field() {
        let mut spec = TaskSpec::quadratic(2, 2.0, 1.0);
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("task.smoothness"), "{err}");
        spec.smoothness = 3.0;
        spec.optimum = Some(vec![1.0]);
        assert!(spec.validate().unwrap_err().to_string().contains("task.optimum"));
        assert!(TaskSpec::quadratic(1, 1.0, 2.0).validate().is_err());
    }
}

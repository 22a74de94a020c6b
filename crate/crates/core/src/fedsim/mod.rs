//! Deterministic parameter-server simulation.
//!
//! Each round every user computes a stochastic gradient at the shared model,
//! encodes it under the configured scheme and uploads it. The PS decodes
//! all uploads, averages them in user order and takes one step:
//! `ŵ ← ŵ − (η/U)·Σ_u ĝ_u`.
//!
//! Users are processed on a rayon pool. All randomness is keyed by
//! `(seed, round, user)`, so results do not depend on the thread count.

mod config;
mod record;
mod task;
mod user;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    BiasRule, ExperimentConfig, FormatSpec, NamedFormat, NamedStep, SchemeConfig, SchemeKind, SimConfig, StepSize,
};
pub use record::{
    diagnose, gradient_diagnostics, records_to_csv, write_csv, RoundDiagnostics, RoundRecord, CSV_HEADER,
};
pub use task::{Task, TaskKind, TaskSpec};
pub use user::{choose_scale, fit_model, index_bits, reconstruct, top_k_indices, LayerCoding, Upload, UserState};

use crate::entropy::{CommLedger, LedgerEntry};
use crate::error::{Error, Result};

/// Worker threads for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Parallelism {
    /// rayon's global pool.
    #[default]
    Default,
    /// Everything on one thread.
    Sequential,
    Threads(usize),
}

impl Parallelism {
    pub const ENV_VAR: &'static str = "CO3_THREADS";

    /// Reads [`Self::ENV_VAR`]: unset or empty means the default pool,
    /// `0` single-threaded, `n` a pool of `n` threads.
    pub fn from_env() -> Result<Self> {
        Self::parse(std::env::var(Self::ENV_VAR).ok().as_deref())
    }

    pub fn parse(value: Option<&str>) -> Result<Self> {
        match value.map(str::trim) {
            None | Some("") => Ok(Parallelism::Default),
            Some(s) => match s.parse::<usize>() {
                Ok(0) => Ok(Parallelism::Sequential),
                Ok(n) => Ok(Parallelism::Threads(n)),
                Err(_) => Err(Error::Config(format!("{}: expected a thread count, got `{s}`", Self::ENV_VAR))),
            },
        }
    }

    /// Runs `f` under this setting.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let threads = match *self {
            Parallelism::Default => return Ok(f()),
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub parallelism: Parallelism,
    /// Keep user 0's first pre-conversion tensor in every record.
    pub keep_samples: bool,
    /// Keep every emitted frame.
    pub keep_frames: bool,
    /// Keep the iterates `ŵ_0 … ŵ_T`.
    pub keep_trajectory: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub label: String,
    pub records: Vec<RoundRecord>,
    pub ledger: CommLedger,
    pub final_model: Vec<f64>,
    /// `(1/T) Σ_{t<T} ŵ_t`, the iterates before each round's update.
    pub average_model: Vec<f64>,
    /// `ŵ_0 … ŵ_T` when requested.
    pub trajectory: Vec<Vec<f64>>,
    pub task: Task,
}

impl RunOutput {
    pub fn final_gap(&self) -> Option<f64> {
        self.task.gap(&self.final_model)
    }

    pub fn average_gap(&self) -> Option<f64> {
        self.task.gap(&self.average_model)
    }

    pub fn csv(&self) -> String {
        records_to_csv(&self.records)
    }
}

/// A run in progress: the shared model plus every user's state.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    task: Task,
    users: Vec<UserState>,
    model: Vec<f64>,
    model_sum: Vec<f64>,
    trajectory: Vec<Vec<f64>>,
    ledger: CommLedger,
    t: usize,
    options: RunOptions,
}

impl Simulation {
    /// Validates the configuration and builds the task.
    pub fn new(config: &SimConfig, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let task = config.task.build(config.users, config.seed)?;
        let layers = task.layers().len();
        let users = (0..config.users)
            .map(|_| UserState::new(task.dim(), layers, config.scheme.gamma()))
            .collect::<Result<Vec<_>>>()?;
        let model = task.initial_model().to_vec();
        Ok(Self {
            config: config.clone(),
            model_sum: vec![0.0; model.len()],
            trajectory: if options.keep_trajectory { vec![model.clone()] } else { Vec::new() },
            model,
            task,
            users,
            ledger: CommLedger::new(),
            t: 0,
            options,
        })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn round(&self) -> usize {
        self.t
    }

    /// Runs one round on the current rayon pool.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let t = self.t;
        let (task, scheme, seed) = (&self.task, &self.config.scheme, self.config.seed);
        let model = &self.model;
        let uploads = self
            .users
            .par_iter_mut()
            .enumerate()
            .map(|(u, state)| state.upload(task, scheme, model, t, u, seed))
            .collect::<Result<Vec<_>>>()?;

        let layers = task.layers();
        let received =
            uploads.par_iter().map(|up| reconstruct(up, &layers, scheme.kind)).collect::<Result<Vec<_>>>()?;
        for (u, (up, rx)) in uploads.iter().zip(&received).enumerate() {
            let same = up.g_hat.len() == rx.len() && up.g_hat.iter().zip(rx).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::Decode(format!("round {t}, user {u}: PS reconstruction differs from the sender's")));
            }
        }

        for (s, w) in self.model_sum.iter_mut().zip(&self.model) {
            *s += w;
        }
        let step = self.config.eta / self.config.users as f64;
        for (i, w) in self.model.iter_mut().enumerate() {
            let agg: f64 = received.iter().map(|g| g[i]).sum();
            *w -= step * agg;
        }

        if self.options.keep_trajectory {
            self.trajectory.push(self.model.clone());
        }
        for (u, up) in uploads.iter().enumerate() {
            self.ledger.record(t, u, up.payload_bits, up.header_bits);
        }
        let first = &layers[0];
        let sample = uploads[0].pre_quant[first.clone()].to_vec();
        let record = RoundRecord {
            t,
            loss: task.loss(&self.model),
            gap: task.gap(&self.model),
            bits_payload: uploads.iter().map(|u| u.payload_bits).sum(),
            bits_header: uploads.iter().map(|u| u.header_bits).sum(),
            user_bits: uploads
                .iter()
                .map(|u| LedgerEntry { payload_bits: u.payload_bits, header_bits: u.header_bits })
                .collect(),
            mem_l1: uploads.iter().map(|u| u.mem_l1).collect(),
            grad_l1: uploads.iter().map(|u| u.grad_l1).collect(),
            models: uploads[0].codings.iter().map(|c| c.map(|c| c.model)).collect(),
            scales: uploads[0].codings.iter().map(|c| c.map(|c| c.format.scale())).collect(),
            diagnostics: self.config.diagnostics.then(|| diagnose(&sample)),
            sample: self.options.keep_samples.then_some(sample),
            frames: (self.options.keep_frames && scheme.kind == SchemeKind::Co3)
                .then(|| uploads.into_iter().map(|u| u.frames).collect()),
        };
        self.t += 1;
        Ok(record)
    }

    fn finish(self, records: Vec<RoundRecord>) -> RunOutput {
        let n = self.t.max(1) as f64;
        RunOutput {
            label: self.config.scheme.label(),
            records,
            ledger: self.ledger,
            final_model: self.model,
            average_model: self.model_sum.iter().map(|s| s / n).collect(),
            trajectory: self.trajectory,
            task: self.task,
        }
    }
}

/// Runs all rounds of one scheme. Configuration errors surface before the
/// first round.
pub fn run_experiment(config: &SimConfig, options: RunOptions) -> Result<RunOutput> {
    let mut sim = Simulation::new(config, options)?;
    options.parallelism.install(move || {
        let mut records = Vec::with_capacity(sim.config.rounds);
        for _ in 0..sim.config.rounds {
            records.push(sim.step()?);
        }
        Ok(sim.finish(records))
    })?
}

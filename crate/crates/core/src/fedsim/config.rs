//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! rounds = 200
//! users = 4
//! eta = 0.05            # or "inv_sqrt_t" for 1/√T
//!
//! [task]
//! kind = "quadratic"
//! dim = 512
//! noise_scale = 0.5
//! noise_shape = 1.2
//!
//! [[schemes]]
//! kind = "co3"
//! format = "fp4"
//! gamma = 0.7
//!
//! [[schemes]]
//! kind = "top_k"
//! format = "fp8"
//! topk_fraction = 0.5
//! ```

use serde::{Deserialize, Serialize};

use super::task::TaskSpec;
use crate::error::{Error, Result};
use crate::fpquant::FpFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Feedback, fp conversion and Huffman coding.
    Co3,
    /// Float32 values, no compression.
    Uncompressed,
    /// Largest-magnitude entries, fp-converted, sent with their indices.
    TopK,
    /// fp conversion with fixed-width symbols.
    FpOnly,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Co3 => "co3",
            SchemeKind::Uncompressed => "uncompressed",
            SchemeKind::TopK => "top_k",
            SchemeKind::FpOnly => "fp_only",
        }
    }

    fn default_gamma(&self) -> f64 {
        match self {
            SchemeKind::Co3 => crate::feedback::DEFAULT_GAMMA,
            _ => 0.0,
        }
    }
}

/// How the grid scale is chosen at each refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasRule {
    /// Fitted polynomial in the shape, with a Monte-Carlo fallback.
    #[default]
    Polynomial,
    /// `(1 + L)·2^{−(2^{exp−1}−2)}` from the task's smoothness.
    Theory,
    /// Monte-Carlo search on the fitted model.
    MonteCarlo,
}

/// `"fp4"`, `"fp8"` or `{ exp_bits = 4, mant_bits = 3 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormatSpec {
    Named(NamedFormat),
    Bits { exp_bits: u8, mant_bits: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedFormat {
    Fp4,
    Fp8,
}

impl Default for FormatSpec {
    fn default() -> Self {
        FormatSpec::Named(NamedFormat::Fp4)
    }
}

impl FormatSpec {
    pub fn format(&self) -> Result<FpFormat> {
        match *self {
            FormatSpec::Named(NamedFormat::Fp4) => Ok(FpFormat::FP4),
            FormatSpec::Named(NamedFormat::Fp8) => Ok(FpFormat::FP8),
            FormatSpec::Bits { exp_bits, mant_bits } => FpFormat::new(exp_bits, mant_bits),
        }
    }
}

fn default_refit() -> usize {
    5
}
fn default_mc_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Output name; defaults to the scheme kind.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub format: FormatSpec,
    /// Memory decay. Defaults to 0.7 for CO3 and 0 otherwise.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Rounds between model refits and scale updates.
    #[serde(default = "default_refit")]
    pub refit_interval: usize,
    #[serde(default)]
    pub topk_fraction: Option<f64>,
    #[serde(default)]
    pub bias_rule: BiasRule,
    /// Draws for the Monte-Carlo scale search.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Smoothness for [`BiasRule::Theory`]; defaults to the task's.
    #[serde(default)]
    pub theory_smoothness: Option<f64>,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            label: None,
            format: FormatSpec::default(),
            gamma: None,
            refit_interval: default_refit(),
            topk_fraction: None,
            bias_rule: BiasRule::default(),
            mc_samples: default_mc_samples(),
            theory_smoothness: None,
        }
    }

    pub fn co3(format: FpFormat, gamma: f64) -> Self {
        Self { gamma: Some(gamma), ..Self::new(SchemeKind::Co3) }.with_format(format)
    }

    pub fn top_k(format: FpFormat, fraction: f64) -> Self {
        Self { topk_fraction: Some(fraction), ..Self::new(SchemeKind::TopK) }.with_format(format)
    }

    pub fn with_format(mut self, format: FpFormat) -> Self {
        self.format = FormatSpec::Bits { exp_bits: format.exp_bits(), mant_bits: format.mant_bits() };
        self
    }

    pub fn with_bias_rule(mut self, rule: BiasRule) -> Self {
        self.bias_rule = rule;
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.kind.default_gamma())
    }

    /// Checks one scheme; `at` prefixes error messages (e.g. `schemes[1]`).
    pub fn validate(&self, at: &str) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{at}.{field}: {why}")));
        if let Err(e) = self.format.format() {
            return bad("format", e.to_string());
        }
        let gamma = self.gamma();
        if !(0.0..=1.0).contains(&gamma) {
            return bad("gamma", format!("must lie in [0, 1], got {gamma}"));
        }
        if self.refit_interval == 0 {
            return bad("refit_interval", "must be at least 1".into());
        }
        match (self.kind, self.topk_fraction) {
            (SchemeKind::TopK, None) => return bad("topk_fraction", "required for the top_k scheme".into()),
            (SchemeKind::TopK, Some(k)) if !(k > 0.0 && k <= 1.0) => {
                return bad("topk_fraction", format!("must lie in (0, 1], got {k}"))
            }
            _ => {}
        }
        if self.bias_rule == BiasRule::MonteCarlo && self.mc_samples == 0 {
            return bad("mc_samples", "must be positive".into());
        }
        if let Some(l) = self.theory_smoothness {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("theory_smoothness", format!("must be non-negative, got {l}"));
            }
        }
        if let Some(label) = &self.label {
            if label.is_empty() || label.contains(['/', '\\']) {
                return bad("label", format!("`{label}` is not usable as a file name"));
            }
        }
        Ok(())
    }
}

/// Step size: a constant, or `1/√T` for the run's horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Constant(f64),
    Named(NamedStep),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedStep {
    InvSqrtT,
}

impl StepSize {
    pub fn value(&self, rounds: usize) -> f64 {
        match *self {
            StepSize::Constant(eta) => eta,
            StepSize::Named(NamedStep::InvSqrtT) => 1.0 / (rounds as f64).sqrt(),
        }
    }
}

fn default_users() -> usize {
    4
}
fn default_true() -> bool {
    true
}

/// A config file: one task, several schemes run on identical seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    #[serde(default = "default_users")]
    pub users: usize,
    pub eta: StepSize,
    /// Fit all comparison families to user 0's first tensor every round.
    #[serde(default = "default_true")]
    pub diagnostics: bool,
    pub task: TaskSpec,
    pub schemes: Vec<SchemeConfig>,
}

/// One scheme on one task: the unit that [`super::run_experiment`] executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub rounds: usize,
    pub users: usize,
    pub eta: f64,
    pub diagnostics: bool,
    pub task: TaskSpec,
    pub scheme: SchemeConfig,
}

impl SimConfig {
    pub fn new(task: TaskSpec, scheme: SchemeConfig, rounds: usize, users: usize, eta: f64, seed: u64) -> Self {
        Self { seed, rounds, users, eta, diagnostics: false, task, scheme }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds: must be at least 1".into()));
        }
        if self.users == 0 {
            return Err(Error::Config("users: must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta: must be positive, got {}", self.eta)));
        }
        self.task.validate()?;
        self.scheme.validate("scheme")
    }
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry the offending line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(locate(text, &msg)),
            other => other,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds: must be at least 1".into()));
        }
        if self.users == 0 {
            return Err(Error::Config("users: must be at least 1".into()));
        }
        let eta = self.eta.value(self.rounds);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta: must be positive, got {eta}")));
        }
        self.task.validate()?;
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes: at least one [[schemes]] entry is required".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, s) in self.schemes.iter().enumerate() {
            s.validate(&format!("schemes[{i}]"))?;
            if !labels.insert(s.label()) {
                return Err(Error::Config(format!(
                    "schemes[{i}].label: duplicate scheme label `{}`; set distinct labels",
                    s.label()
                )));
            }
        }
        Ok(())
    }

    /// One [`SimConfig`] per scheme, all sharing the seed.
    pub fn runs(&self) -> Vec<SimConfig> {
        self.schemes
            .iter()
            .map(|s| SimConfig {
                seed: self.seed,
                rounds: self.rounds,
                users: self.users,
                eta: self.eta.value(self.rounds),
                diagnostics: self.diagnostics,
                task: self.task.clone(),
                scheme: s.clone(),
            })
            .collect()
    }
}

/// Prefixes a validation message of the form `path.field: why` with the
/// line of the config that sets that field (or opens its section).
fn locate(text: &str, msg: &str) -> String {
    let Some((path, _)) = msg.split_once(": ") else {
        return msg.to_string();
    };
    let (section, index, field) = match path.split_once('.') {
        Some((sec, field)) => match sec.split_once('[') {
            Some((name, idx)) => (name, idx.trim_end_matches(']').parse::<usize>().ok(), field),
            None => (sec, None, field),
        },
        None => ("", None, path),
    };

    let mut current = String::new();
    let mut seen = 0usize;
    let mut section_line = None;
    for (no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix("[[").and_then(|s| s.strip_suffix("]]")) {
            current = name.trim().to_string();
            if current == section {
                if index == Some(seen) {
                    section_line = Some(no + 1);
                }
                seen += 1;
            }
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && index.is_none() {
                section_line = Some(no + 1);
            }
            continue;
        }
        let in_target = if section.is_empty() {
            current.is_empty()
        } else {
            current == section && (index.is_none() || index == Some(seen.wrapping_sub(1)))
        };
        let key = trimmed.split('=').next().unwrap_or("").trim();
        if in_target && key == field {
            return format!("line {}: {msg}", no + 1);
        }
    }
    match section_line {
        Some(no) => format!("line {no}: {msg}"),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
rounds = 10
eta = 0.1

[task]
kind = "quadratic"
dim = 8

[[schemes]]
kind = "co3"
format = "fp8"

[[schemes]]
kind = "top_k"
topk_fraction = 0.25
format = { exp_bits = 3, mant_bits = 2 }
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.users, 4);
        assert!(c.diagnostics);
        assert_eq!(c.schemes[0].format.format().unwrap(), FpFormat::FP8);
        assert_eq!(c.schemes[0].gamma(), 0.7);
        assert_eq!(c.schemes[0].refit_interval, 5);
        assert_eq!(c.schemes[1].gamma(), 0.0);
        assert_eq!(c.schemes[1].format.format().unwrap(), FpFormat::new(3, 2).unwrap());
        let runs = c.runs();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].eta, 0.1);
    }

    #[test]
    fn inverse_sqrt_step() {
        let text = MINIMAL.replace("eta = 0.1", "eta = \"inv_sqrt_t\"").replace("rounds = 10", "rounds = 400");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.runs()[0].eta, 0.05);
    }

    #[test]
    fn unknown_scheme_names_field_and_line() {
        let text = MINIMAL.replace("kind = \"co3\"", "kind = \"zip\"");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 11"), "{err}");
        assert!(err.contains("kind"), "{err}");
        assert!(err.contains("unknown variant"), "{err}");
    }

    #[test]
    fn validation_errors_are_located() {
        let text = MINIMAL.replace("topk_fraction = 0.25", "topk_fraction = 1.5");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.starts_with("configuration error: line 16: schemes[1].topk_fraction"), "{err}");

        let text = MINIMAL.replace("topk_fraction = 0.25\n", "");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 14: schemes[1].topk_fraction"), "{err}");

        let text = MINIMAL.replace("dim = 8", "dim = 0");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 8: task.dim"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_duplicates() {
        let text = MINIMAL.replace("dim = 8", "dim = 8\nwidth = 3");
        assert!(ExperimentConfig::from_toml_str(&text).unwrap_err().to_string().contains("width"));
        let text = MINIMAL.replace("kind = \"top_k\"", "kind = \"co3\"");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }
}

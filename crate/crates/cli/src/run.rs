use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use co3::fedsim::{run_experiment, ExperimentConfig, Parallelism, RunOptions, RunOutput};
use serde::{Deserialize, Serialize};

use crate::Status;

/// Written as `manifest.toml` next to a run's CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub schemes: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub threads: String,
    pub config: ExperimentConfig,
}

pub fn cmd_run(config_path: &Path, out: &Path, seed: Option<u64>, par: Parallelism) -> Result<Status> {
    let text = fs::read_to_string(config_path).with_context(|| format!("cannot read {}", config_path.display()))?;
    let mut config = ExperimentConfig::from_toml_str(&text).with_context(|| format!("in {}", config_path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }

    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let dir = fresh_dir(out, &format!("{stem}-s{}-{timestamp}", config.seed))?;

    let manifest = RunManifest {
        config_path: config_path.to_path_buf(),
        output_dir: dir.clone(),
        seed: config.seed,
        schemes: config.schemes.iter().map(|s| s.label()).collect(),
        timestamp,
        threads: format!("{par:?}"),
        config: config.clone(),
    };
    fs::write(dir.join("manifest.toml"), toml::to_string_pretty(&manifest)?)?;

    let options = RunOptions { parallelism: par, ..RunOptions::default() };
    let mut outputs = Vec::new();
    for sim in config.runs() {
        let label = sim.scheme.label();
        let output = run_experiment(&sim, options).with_context(|| format!("scheme `{label}`"))?;
        fs::write(dir.join(format!("{label}.csv")), output.csv())?;
        outputs.push(output);
    }

    let float32_bits = 32 * (config.task.dim * config.rounds * config.users) as u64;
    let summary = summary_csv(&outputs, float32_bits);
    fs::write(dir.join("summary.csv"), &summary)?;
    print!("{}", summary_table(&outputs, float32_bits));
    println!("wrote {}", dir.display());
    Ok(Status::Ok)
}

/// `parent/name`, or `parent/name-2`, `-3`, … if taken.
fn fresh_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    for i in 1.. {
        let dir = if i == 1 { parent.join(name) } else { parent.join(format!("{name}-{i}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("cannot create {}", dir.display())),
        }
    }
    unreachable!()
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |x| format!("{x:.16e}"))
}

pub const SUMMARY_HEADER: &str =
    "scheme,total_bits,payload_bits,header_bits,float32_ratio,final_loss,final_gap,average_gap";

fn summary_csv(outputs: &[RunOutput], float32_bits: u64) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for o in outputs {
        let total = o.ledger.total_bits();
        let loss = o.records.last().map(|r| r.loss);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            o.label,
            total,
            o.ledger.payload_bits(),
            o.ledger.header_bits(),
            num(Some(total as f64 / float32_bits as f64)),
            num(loss),
            num(o.final_gap()),
            num(o.average_gap()),
        )
        .unwrap();
    }
    s
}

fn summary_table(outputs: &[RunOutput], float32_bits: u64) -> String {
    let mut s =
        format!("{:<24} {:>14} {:>9} {:>12} {:>12}\n", "scheme", "total bits", "vs f32", "final loss", "final gap");
    for o in outputs {
        let total = o.ledger.total_bits();
        let loss = o.records.last().map_or(f64::NAN, |r| r.loss);
        let gap = o.final_gap().map_or_else(|| "-".into(), |g| format!("{g:.4e}"));
        writeln!(
            s,
            "{:<24} {:>14} {:>8.2}% {:>12.4e} {:>12}",
            o.label,
            total,
            100.0 * total as f64 / float32_bits as f64,
            loss,
            gap
        )
        .unwrap();
    }
    s
}

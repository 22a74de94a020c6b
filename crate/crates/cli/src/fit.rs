use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use co3::distfit::{best_fit, fit_all_families, FamilyFit, FamilyParams};

use crate::Status;

pub fn cmd_fit(path: &Path, out: Option<&Path>) -> Result<Status> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let samples = parse_samples(&text).with_context(|| format!("in {}", path.display()))?;
    let fits = fit_all_families(&samples)?;
    print!("{}", table(&fits));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("fits.csv"), csv(&fits))?;
    }
    Ok(Status::Ok)
}

/// One real per line; blank lines are skipped.
pub fn parse_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x: f64 = line.parse().with_context(|| format!("line {}: `{line}` is not a number", i + 1))?;
        if !x.is_finite() {
            bail!("line {}: `{line}` is not finite", i + 1);
        }
        out.push(x);
    }
    if out.is_empty() {
        bail!("no samples");
    }
    Ok(out)
}

fn params(p: &FamilyParams) -> String {
    match *p {
        FamilyParams::GenNorm(g) => format!("mu={:.6} alpha={:.6} beta={:.4}", g.mu, g.alpha, g.beta),
        FamilyParams::Normal { mean, std_dev } => format!("mean={mean:.6} std={std_dev:.6}"),
        FamilyParams::Laplace { loc, scale } => format!("loc={loc:.6} scale={scale:.6}"),
        FamilyParams::DoubleWeibull { loc, scale, shape } => {
            format!("loc={loc:.6} scale={scale:.6} shape={shape:.4}")
        }
    }
}

fn table(fits: &[FamilyFit]) -> String {
    let best = best_fit(fits).map(|f| f.family);
    let mut s = format!("{:<15} {:>14}  {}\n", "family", "W2", "parameters");
    for f in fits {
        let mark = if Some(f.family) == best { "  <- best" } else { "" };
        writeln!(s, "{:<15} {:>14.6e}  {}{mark}", f.family.name(), f.w2_distance, params(&f.params)).unwrap();
    }
    s
}

fn csv(fits: &[FamilyFit]) -> String {
    let best = best_fit(fits).map(|f| f.family);
    let mut s = String::from("family,w2,best\n");
    for f in fits {
        writeln!(s, "{},{:.16e},{}", f.family.name(), f.w2_distance, Some(f.family) == best).unwrap();
    }
    s
}

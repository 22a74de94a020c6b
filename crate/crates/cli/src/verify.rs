use std::fs;
use std::path::Path;

use anyhow::Result;
use co3::distfit::{fit_all_families, fit_gennorm, Family, GenNormParams};
use co3::fedsim::Parallelism;
use co3::theory::{verify_convergence, verify_lemma1, ConvergenceSetup};
use co3::FpFormat;

use crate::{Status, Suite};

const LEMMA1_BETAS: [f64; 5] = [1.0, 1.25, 1.5, 1.75, 2.0];
const LEMMA1_SAMPLES: usize = 1_000_000;
const HORIZONS: [usize; 3] = [100, 400, 1600];
const MIN_SHRINK: f64 = 2.0;
const RECOVERY_BETAS: [f64; 4] = [1.0, 1.2, 1.5, 2.0];
const RECOVERY_SAMPLES: usize = 100_000;
const RECOVERY_TOL: f64 = 0.1;

pub fn cmd_verify(suite: Suite, seed: u64, out: Option<&Path>, par: Parallelism) -> Result<Status> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let ok = par.install(|| match suite {
        Suite::Lemma1 => lemma1(seed, out),
        Suite::Convergence => convergence(seed, out),
        Suite::Distfit => distfit(seed),
    })??;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { Status::Ok } else { Status::Violation })
}

fn lemma1(seed: u64, out: Option<&Path>) -> Result<bool> {
    let mut ok = true;
    let mut text = String::new();
    for format in [FpFormat::FP4, FpFormat::FP8] {
        let report = verify_lemma1(format, &LEMMA1_BETAS, LEMMA1_SAMPLES, seed)?;
        print!("{}", report.text());
        text.push_str(&report.text());
        ok &= report.passed();
    }
    if let Some(dir) = out {
        fs::write(dir.join("lemma1.txt"), text)?;
    }
    Ok(ok)
}

fn convergence(seed: u64, out: Option<&Path>) -> Result<bool> {
    let setup = ConvergenceSetup { seed, ..ConvergenceSetup::default() };
    let report = verify_convergence(&setup, &HORIZONS)?;
    print!("{}", report.text());
    let shrink = report.shrink_factor().unwrap_or(f64::NAN);
    println!("gap shrink T={} -> T={}: {shrink:.2}x (need >= {MIN_SHRINK})", HORIZONS[0], HORIZONS[2]);
    if let Some(dir) = out {
        fs::write(dir.join("convergence.csv"), report.csv())?;
    }
    Ok(report.satisfied() && shrink >= MIN_SHRINK)
}

fn distfit(seed: u64) -> Result<bool> {
    let mut ok = true;
    for (i, &beta) in RECOVERY_BETAS.iter().enumerate() {
        let sample = GenNormParams::new(0.0, 1.0, beta)?.sample(RECOVERY_SAMPLES, seed.wrapping_add(i as u64));
        let fit = fit_gennorm(&sample)?;
        let pass = (fit.beta - beta).abs() <= RECOVERY_TOL;
        ok &= pass;
        println!("recover beta={beta:<4}  beta_hat={:.4}  {}", fit.beta, if pass { "ok" } else { "FAIL" });
    }

    let sample = GenNormParams::new(0.0, 1.0, 1.2)?.sample(RECOVERY_SAMPLES, seed.wrapping_add(100));
    let fits = fit_all_families(&sample)?;
    let w2 = |f: Family| fits.iter().find(|x| x.family == f).map_or(f64::NAN, |x| x.w2_distance);
    for f in &fits {
        println!("  {:<15} W2={:.6e}", f.family.name(), f.w2_distance);
    }
    let pass = w2(Family::GenNorm) <= w2(Family::Normal) && w2(Family::GenNorm) <= w2(Family::Laplace);
    ok &= pass;
    println!("W2 ordering on GenNorm(0,1,1.2): {}", if pass { "ok" } else { "FAIL" });
    Ok(ok)
}

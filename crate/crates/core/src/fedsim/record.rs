use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::distfit::{fit_all_families, sample_stats, Family, FamilyFit, GenNormParams};
use crate::entropy::LedgerEntry;

/// Telemetry for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// Global objective after the round's update.
    pub loss: f64,
    /// `L(ŵ) − L*` after the update, when the optimum is known.
    pub gap: Option<f64>,
    pub bits_payload: u64,
    pub bits_header: u64,
    pub user_bits: Vec<LedgerEntry>,
    pub mem_l1: Vec<f64>,
    pub grad_l1: Vec<f64>,
    /// User 0's GenNorm model per tensor (quantizing schemes only).
    pub models: Vec<Option<GenNormParams>>,
    /// User 0's grid scale per tensor (quantizing schemes only).
    pub scales: Vec<Option<f64>>,
    /// Family fits to user 0's first tensor before conversion.
    pub diagnostics: Option<RoundDiagnostics>,
    /// User 0's first tensor before conversion.
    pub sample: Option<Vec<f64>>,
    /// Raw frames, indexed by user then tensor (CO3 only).
    pub frames: Option<Vec<Vec<Vec<u8>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RoundDiagnostics {
    Fitted {
        fits: Vec<FamilyFit>,
        excess_kurtosis: f64,
    },
    /// The sample could not be fitted; the reason is kept.
    Degenerate(String),
}

impl RoundDiagnostics {
    pub fn fit(&self, family: Family) -> Option<&FamilyFit> {
        match self {
            RoundDiagnostics::Fitted { fits, .. } => fits.iter().find(|f| f.family == family),
            RoundDiagnostics::Degenerate(_) => None,
        }
    }

    pub fn best(&self) -> Option<Family> {
        match self {
            RoundDiagnostics::Fitted { fits, .. } => crate::distfit::best_fit(fits).map(|f| f.family),
            RoundDiagnostics::Degenerate(_) => None,
        }
    }
}

/// Fits every family to `sample` and reports its excess kurtosis.
pub fn diagnose(sample: &[f64]) -> RoundDiagnostics {
    let stats = match sample_stats(sample) {
        Ok(s) => s,
        Err(e) => return RoundDiagnostics::Degenerate(e.to_string()),
    };
    match fit_all_families(sample) {
        Ok(fits) => RoundDiagnostics::Fitted { fits, excess_kurtosis: stats.excess_kurtosis },
        Err(e) => RoundDiagnostics::Degenerate(e.to_string()),
    }
}

/// Per-round family fits from records that kept their samples.
pub fn gradient_diagnostics(records: &[RoundRecord]) -> Vec<(usize, RoundDiagnostics)> {
    records
        .iter()
        .map(|r| {
            let d = match &r.sample {
                Some(s) => diagnose(s),
                None => RoundDiagnostics::Degenerate("sample not recorded".into()),
            };
            (r.t, d)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "t,loss,gap,bits_payload,bits_header,mem_l1,grad_l1,beta_hat,alpha_hat,w2_gennorm,w2_norm,w2_laplace,w2_dweibull";

/// 17 significant digits, enough to round-trip any f64.
fn num(out: &mut String, x: f64) {
    if x.is_nan() {
        out.push_str("NaN");
    } else {
        write!(out, "{x:.16e}").expect("write to String");
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl RoundRecord {
    /// One CSV row; `mem_l1` and `grad_l1` are user means. The shape and
    /// scale come from the model in use, or from the diagnostic fit for
    /// schemes that do not model gradients.
    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        write!(row, "{},", self.t).unwrap();
        num(&mut row, self.loss);
        row.push(',');
        num(&mut row, self.gap.unwrap_or(f64::NAN));
        write!(row, ",{},{},", self.bits_payload, self.bits_header).unwrap();
        num(&mut row, mean(&self.mem_l1));
        row.push(',');
        num(&mut row, mean(&self.grad_l1));

        let diag_gennorm = self.diagnostics.as_ref().and_then(|d| match d.fit(Family::GenNorm)?.params {
            crate::distfit::FamilyParams::GenNorm(p) => Some(p),
            _ => None,
        });
        let model = self.models.first().copied().flatten().or(diag_gennorm);
        for x in [model.map(|m| m.beta), model.map(|m| m.alpha)] {
            row.push(',');
            num(&mut row, x.unwrap_or(f64::NAN));
        }
        for family in [Family::GenNorm, Family::Normal, Family::Laplace, Family::DoubleWeibull] {
            row.push(',');
            let w2 = self.diagnostics.as_ref().and_then(|d| d.fit(family)).map(|f| f.w2_distance);
            num(&mut row, w2.unwrap_or(f64::NAN));
        }
        row
    }
}

pub fn records_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_csv<W: io::Write>(records: &[RoundRecord], mut w: W) -> io::Result<()> {
    w.write_all(records_to_csv(records).as_bytes())
}

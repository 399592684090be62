//! Result serialization: `rounds.csv`, `summary.csv`, and `summary.json`,
//! plus the content-hash run identifiers that join them.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::orchestrator::RunSummary;

/// First 12 hex characters of a content hash over the resolved config text
/// and the master seed.
pub fn run_id(resolved_text: &str, master_seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(resolved_text.as_bytes());
    hasher.update(master_seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(12);
    for byte in digest.iter().take(6) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Full hex digest of the resolved config text.
pub fn config_digest(resolved_text: &str) -> String {
    let digest = Sha256::digest(resolved_text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Six significant digits, '.' decimal separator, locale-free: fixed notation
/// for moderate exponents, scientific otherwise.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// One finished run ready for emission.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: String,
    /// Swept axis value, or "-" for standalone runs.
    pub axis_value: String,
    pub config_digest: String,
    pub summary: RunSummary,
}

/// A sweep value whose run failed; recorded, not fatal.
#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub axis_value: String,
    pub error: String,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    run_id: &'a str,
    axis_value: &'a str,
    epochs: usize,
    best_acc: f64,
    final_acc: f64,
    mean_acc_last5: f64,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    runs: Vec<SummaryRow<'a>>,
    failures: &'a [RunFailure],
}

/// Write `rounds.csv`, `summary.csv`, and `summary.json` into `out_dir`.
///
/// `rounds.csv` carries one line per (run, round) with the trust weights
/// expanded into `w_1..w_K`; `summary.csv` mirrors the geometry-sweep table
/// schema (axis value, epochs, best/final/mean-last-5 accuracy).
pub fn emit_results(outputs: &[RunOutput], failures: &[RunFailure], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let k = outputs
        .first()
        .and_then(|o| o.summary.records.first())
        .map(|r| r.weights.len())
        .unwrap_or(0);

    let mut rounds = String::new();
    rounds.push_str(
        "run_id,round,test_accuracy,global_loss,mean_fidelity,mean_latency,mean_instability,dispersion,grad_norm",
    );
    for i in 1..=k {
        rounds.push_str(&format!(",w_{i}"));
    }
    rounds.push('\n');
    for output in outputs {
        for record in &output.summary.records {
            rounds.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                output.run_id,
                record.round,
                format_g6(record.test_accuracy),
                format_g6(record.global_loss),
                format_g6(record.mean_fidelity),
                format_g6(record.mean_latency),
                format_g6(record.mean_instability),
                format_g6(record.dispersion),
                format_g6(record.grad_norm),
            ));
            for w in &record.weights {
                rounds.push_str(&format!(",{}", format_g6(*w)));
            }
            rounds.push('\n');
        }
    }
    write_atomic(&out_dir.join("rounds.csv"), rounds.as_bytes())?;

    let mut summary = String::from("run_id,axis_value,epochs,best_acc,final_acc,mean_acc_last5\n");
    for output in outputs {
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            output.run_id,
            output.axis_value,
            output.summary.records.len(),
            format_g6(output.summary.best_accuracy),
            format_g6(output.summary.final_accuracy),
            format_g6(output.summary.mean_accuracy_last5),
        ));
    }
    write_atomic(&out_dir.join("summary.csv"), summary.as_bytes())?;

    let doc = SummaryDoc {
        runs: outputs
            .iter()
            .map(|o| SummaryRow {
                run_id: &o.run_id,
                axis_value: &o.axis_value,
                epochs: o.summary.records.len(),
                best_acc: o.summary.best_accuracy,
                final_acc: o.summary.final_accuracy,
                mean_acc_last5: o.summary.mean_accuracy_last5,
                config_digest: &o.config_digest,
            })
            .collect(),
        failures,
    };
    let json = serde_json::to_string_pretty(&doc).expect("serializable summary");
    write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

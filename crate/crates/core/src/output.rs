//! Result files: `curve.csv`, `summary.txt` and a replayable `manifest.toml`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::emit_config;
use crate::error::{Error, Result};
use crate::experiments::{ExperimentOutcome, ExperimentSpec};

pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn render_curve_csv(outcome: &ExperimentOutcome) -> Result<String> {
    let curve = &outcome.curve;
    if curve.is_empty() {
        return Err(Error::invalid("refusing to write an empty curve"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let data_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["t", "mean_diff", "std_diff"])
        .map_err(data_err)?;
    for (t, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
        w.write_record([(t + 1).to_string(), m.to_string(), s.to_string()])
            .map_err(data_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// sha256 of the emitted configuration text.
pub fn config_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

/// The resolved configuration preceded by comment lines with its hash and seed.
pub fn render_manifest(spec: &ExperimentSpec) -> Result<String> {
    let body = emit_config(spec)?;
    Ok(format!(
        "# config sha256: {}\n# seed: {}\n# replay: poco run-{} --config {MANIFEST_FILE}\n{body}",
        config_hash(&body),
        spec.experiment.seed,
        spec.experiment.id.as_str(),
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

pub fn render_summary(spec: &ExperimentSpec, outcome: &ExperimentOutcome) -> String {
    let mut s = String::new();
    let e = &spec.experiment;
    let _ = writeln!(s, "experiment: {}", e.id.as_str());
    let _ = writeln!(s, "seed: {}", e.seed);
    let _ = writeln!(s, "repetitions: {}", outcome.curve.reps);
    let _ = writeln!(s, "horizon: {}", outcome.curve.len());
    if let Some(f) = outcome.curve.final_mean() {
        let sd = outcome.curve.std.last().copied().unwrap_or(0.0);
        let _ = writeln!(
            s,
            "final mean difference (method - ogd): {f:.6e} (std {sd:.6e})"
        );
    }
    let _ = writeln!(s, "\narms (means over repetitions):");
    for a in &outcome.arms {
        let _ = writeln!(
            s,
            "  {:<16} total loss {:.6e}  Reg_D {}  P* {}  P^theta {}  projection fallbacks {}",
            a.name,
            a.total_loss,
            opt(a.regret),
            opt(a.path_length),
            opt(a.prediction_regularity),
            a.projection_fallbacks
        );
    }
    if let Some(c) = &outcome.constants {
        let _ = writeln!(
            s,
            "\nconstants: G {:.6e}  L {:.6e}  lambda {:.6e}  C_theta {:.6e}  D {:.6e}",
            c.g, c.l, c.lambda, c.c_theta, c.d
        );
    }
    if let Some(c) = outcome.contraction {
        let _ = writeln!(s, "contraction C(eta, lambda): {c:.9}");
    }
    if !outcome.bounds.is_empty() {
        let _ = writeln!(s, "\nbound checks:");
    }
    for b in &outcome.bounds {
        let _ = write!(
            s,
            "  [{}] {}: {}/{} runs within bound, mean measured {:.6e}, mean bound {:.6e}",
            if b.all_hold() { "PASS" } else { "FAIL" },
            b.name,
            b.passed,
            b.total,
            b.mean_measured,
            b.mean_bound
        );
        if let Some(t) = b.terms {
            let _ = write!(
                s,
                " (initial {:.6e}, path {:.6e}, prediction {:.6e})",
                t.initial, t.path, t.prediction
            );
        }
        s.push('\n');
    }
    for n in &outcome.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Writes all three files into `out_dir`. Everything is rendered before the
/// first write, and files already written are removed if a later write fails.
pub fn emit_results(
    spec: &ExperimentSpec,
    outcome: &ExperimentOutcome,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let files = [
        (CURVE_FILE, render_curve_csv(outcome)?),
        (SUMMARY_FILE, render_summary(spec, outcome)),
        (MANIFEST_FILE, render_manifest(spec)?),
    ];
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, text) in files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, text) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

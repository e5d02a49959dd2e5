//! Report files: `results.json` (pretty-printed, sorted keys), `results.csv`,
//! and the per-perturbation plot data.

use std::path::Path;

use dbpa_core::{Error, Result};

use crate::experiment::AuditReport;

/// Serialize with sorted keys so reruns with the same seed are
/// byte-identical apart from the wall-clock field.
pub fn results_json(report: &AuditReport) -> Result<String> {
    let value = serde_json::to_value(report)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_results_json(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, results_json(report)?)?;
    Ok(())
}

pub fn load_results_json(path: impl AsRef<Path>) -> Result<AuditReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("unparseable results file: {e}")))
}

/// `results.csv`: one row per perturbation, empty cells for failed rows.
pub fn write_results_csv(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    writer
        .write_record([
            "perturbation_id",
            "metric",
            "omega",
            "p_value",
            "p_adjusted",
            "k",
            "B",
            "nbins",
            "seed",
        ])
        .map_err(csv_error)?;
    for row in &report.results {
        writer
            .write_record([
                row.perturbation_id.clone(),
                row.metric.to_string(),
                row.omega_observed.map(fmt_float).unwrap_or_default(),
                row.p_value.map(fmt_float).unwrap_or_default(),
                row.p_adjusted.map(fmt_float).unwrap_or_default(),
                row.k.to_string(),
                row.permutations.to_string(),
                row.nbins.to_string(),
                row.seed.to_string(),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Plot data: `plot_null_alt_<id>.csv` per successful perturbation and
/// one `plot_summary.csv` with a row per perturbation.
pub fn emit_plotdata(report: &AuditReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    for row in &report.results {
        let (Some(p0), Some(p1)) = (&row.p0, &row.p1) else {
            continue;
        };
        let path = dir.join(format!("plot_null_alt_{}.csv", row.perturbation_id));
        let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
        writer
            .write_record(["bin_left", "bin_right", "p0_mass", "p1_mass"])
            .map_err(csv_error)?;
        let edges = p0.bin_edges();
        for (i, (m0, m1)) in p0.masses().iter().zip(p1.masses()).enumerate() {
            writer
                .write_record([
                    fmt_float(edges[i]),
                    fmt_float(edges[i + 1]),
                    fmt_float(*m0),
                    fmt_float(*m1),
                ])
                .map_err(csv_error)?;
        }
        writer.flush()?;
    }

    let mut writer =
        csv::Writer::from_path(dir.join("plot_summary.csv")).map_err(csv_error)?;
    writer
        .write_record(["perturbation_id", "omega", "p_value", "significant"])
        .map_err(csv_error)?;
    for row in &report.results {
        writer
            .write_record([
                row.perturbation_id.clone(),
                row.omega_observed.map(fmt_float).unwrap_or_default(),
                row.p_value.map(fmt_float).unwrap_or_default(),
                row.rejected.unwrap_or(false).to_string(),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Human-readable rendering for the `report` subcommand.
pub fn render(report: &AuditReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "experiment {} (metric {}, k={}, B={}, nbins={}, alpha={}, adjustment {:?}, seed {})\n",
        report.experiment_id,
        report.metric,
        report.k,
        report.b,
        report.nbins,
        report.alpha,
        report.multiple_testing,
        report.seed,
    ));
    out.push_str(&format!("config fingerprint {}\n", report.config_fingerprint));
    if report.cache_hits + report.cache_misses > 0 {
        out.push_str(&format!(
            "sample cache: {} hits, {} misses\n",
            report.cache_hits, report.cache_misses
        ));
    }
    out.push_str(&format!(
        "{:<24} {:>10} {:>10} {:>10}  {}\n",
        "perturbation", "omega", "p", "p_adj", "verdict"
    ));
    for row in &report.results {
        if row.failed {
            out.push_str(&format!(
                "{:<24} {:>10} {:>10} {:>10}  FAILED: {}\n",
                row.perturbation_id,
                "-",
                "-",
                "-",
                row.error.as_deref().unwrap_or("unknown error"),
            ));
            continue;
        }
        let verdict = match row.rejected {
            Some(true) => "significant",
            Some(false) => "not significant",
            None => "-",
        };
        out.push_str(&format!(
            "{:<24} {:>10} {:>10} {:>10}  {}\n",
            row.perturbation_id,
            row.omega_observed.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.p_value.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.p_adjusted
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            verdict,
        ));
    }
    out
}

/// Shortest round-trip formatting keeps CSVs deterministic.
fn fmt_float(v: f64) -> String {
    format!("{v}")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv write failed: {e}"))
}

//! CSV and JSON output of a verification run.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::pipeline::VerificationBundle;
use crate::error::{Error, Result};
use crate::pgm::UncertaintyReport;

#[derive(Serialize)]
struct ResultRow<'a> {
    scorer: &'a str,
    i: usize,
    class: usize,
    b: usize,
    c: usize,
    statistic: f64,
    p_value: f64,
    reported_statistic: f64,
}

#[derive(Serialize)]
struct PlotRow<'a> {
    class: usize,
    i: usize,
    scorer: &'a str,
    reported_statistic: f64,
    significant: bool,
}

#[derive(Serialize)]
struct UncertaintyRow {
    u: usize,
    v: usize,
    gc: f64,
    delta: f64,
    neg_log_delta: f64,
    converged: bool,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

/// Writes `rows` with a header line, even when there are no rows.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_uncertainty_csv(report: &UncertaintyReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["u", "v", "gc", "delta", "neg_log_delta", "converged"],
        report.entries.iter().map(|r| UncertaintyRow {
            u: r.edge.u(),
            v: r.edge.v(),
            gc: r.gc,
            delta: r.delta,
            neg_log_delta: r.neg_log_delta,
            converged: r.converged,
        }),
    )
}

/// Writes `results.csv`, `plotdata.csv`, `bundle.json`, and one
/// `uncertainty/target_<node>.csv` per BP-scored target into `dir`.
/// Suppressed classes are left out of both CSVs.
pub fn emit_report(bundle: &VerificationBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let reported: Vec<_> = bundle.results.iter().filter(|r| !r.suppressed).collect();
    write_csv(
        &dir.join("results.csv"),
        &["scorer", "i", "class", "b", "c", "statistic", "p_value", "reported_statistic"],
        reported.iter().map(|r| ResultRow {
            scorer: r.scorer.name(),
            i: r.i,
            class: r.result.class_id,
            b: r.result.b,
            c: r.result.c,
            statistic: r.result.statistic,
            p_value: r.result.p_value,
            reported_statistic: r.result.reported_statistic,
        }),
    )?;
    let mut plot: Vec<_> = reported.clone();
    plot.sort_by_key(|r| (r.result.class_id, r.i, r.scorer));
    write_csv(
        &dir.join("plotdata.csv"),
        &["class", "i", "scorer", "reported_statistic", "significant"],
        plot.iter().map(|r| PlotRow {
            class: r.result.class_id,
            i: r.i,
            scorer: r.scorer.name(),
            reported_statistic: r.result.reported_statistic,
            significant: r.result.significant,
        }),
    )?;
    let udir = dir.join("uncertainty");
    for t in &bundle.targets {
        if let Some(report) = &t.uncertainty {
            fs::create_dir_all(&udir)?;
            write_uncertainty_csv(report, &udir.join(format!("target_{}.csv", t.target)))?;
        }
    }
    fs::write(dir.join("bundle.json"), bundle.to_json()?)?;
    Ok(())
}

//! CSV/JSON emission of evaluation results and recomputation from CSV.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::evaluate::Evaluation;
use super::segment::TimingReport;
use crate::data::SliceId;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, average_dsc, FiveNumber, MetricRecord, TissueSummary};
use crate::roi::Tissue;

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const BOXPLOT_CSV: &str = "boxplot.csv";
pub const AGREEMENT_CSV: &str = "agreement.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const TIMING_JSON: &str = "timing.json";
pub const ERROR_MAP_DIR: &str = "error_maps";

/// Marker for undefined values in CSV output.
pub const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or(NA.to_string(), |v| v.to_string())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(format!("writing {}", path.display()), std::io::Error::other(e))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io("serializing JSON", e.into()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// One row per (slice, tissue); undefined Hausdorff distances as `NA`.
pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.slice_id.to_string(),
                r.tissue.abbrev().to_string(),
                r.dsc.to_string(),
                r.voe.to_string(),
                opt(r.hd_mm),
                r.pa.to_string(),
            ]
        })
        .collect();
    write_rows(path, &["slice_id", "tissue", "dsc", "voe", "hd_mm", "pa"], &rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 6 {
            return Err(bad(format!("expected 6 columns, got {}", row.len())));
        }
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| bad(format!("{:?}: {e}", &row[i])));
        out.push(MetricRecord {
            slice_id: row[0].parse::<SliceId>()?,
            tissue: row[1].parse::<Tissue>()?,
            dsc: num(2)?,
            voe: num(3)?,
            hd_mm: if &row[4] == NA { None } else { Some(num(4)?) },
            pa: num(5)?,
        });
    }
    Ok(out)
}

/// Per-tissue means, closed by an `average` row holding the mean DSC over tissues.
pub fn write_summary_csv(path: &Path, summaries: &[TissueSummary]) -> Result<()> {
    let mut rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.tissue.abbrev().to_string(),
                s.count.to_string(),
                s.mean_dsc.to_string(),
                s.mean_voe.to_string(),
                opt(s.mean_hd_mm),
                s.hd_count.to_string(),
                s.mean_pa.to_string(),
            ]
        })
        .collect();
    let blank = || NA.to_string();
    rows.push(vec![
        "average".into(),
        summaries.iter().map(|s| s.count).sum::<usize>().to_string(),
        opt(average_dsc(summaries)),
        blank(),
        blank(),
        blank(),
        blank(),
    ]);
    write_rows(
        path,
        &["tissue", "count", "mean_dsc", "mean_voe", "mean_hd_mm", "hd_count", "mean_pa"],
        &rows,
    )
}

pub fn write_boxplot_csv(path: &Path, summaries: &[TissueSummary]) -> Result<()> {
    let mut rows = Vec::new();
    for s in summaries {
        let boxes = [("dsc", Some(s.dsc_box)), ("voe", Some(s.voe_box)), ("hd_mm", s.hd_box), ("pa", Some(s.pa_box))];
        for (metric, b) in boxes {
            let b: Option<FiveNumber> = b;
            let mut row = vec![s.tissue.abbrev().to_string(), metric.to_string()];
            match b {
                Some(b) => row.extend([b.min, b.q1, b.median, b.q3, b.max].map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(NA.to_string(), 5)),
            }
            rows.push(row);
        }
    }
    write_rows(path, &["tissue", "metric", "min", "q1", "median", "q3", "max"], &rows)
}

#[derive(Debug, Serialize)]
struct EvaluationStatus<'a> {
    status: &'a str,
    message: String,
    slices: usize,
    selected: usize,
    subjects: usize,
    average_dsc: Option<f64>,
}

/// Writes every evaluation artefact into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation, timings: &[TimingReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let subjects = eval.agreement.first().map_or(0, |a| a.manual_mm2.len());
    let status = if eval.is_empty_selection() {
        EvaluationStatus {
            status: "empty-selection",
            message: format!("no critical slices among {} test slices; no metrics computed", eval.slice_count),
            slices: eval.slice_count,
            selected: 0,
            subjects,
            average_dsc: None,
        }
    } else {
        EvaluationStatus {
            status: "ok",
            message: format!("{} of {} slices evaluated", eval.selected.len(), eval.slice_count),
            slices: eval.slice_count,
            selected: eval.selected.len(),
            subjects,
            average_dsc: eval.average_dsc,
        }
    };
    write_json(&dir.join(EVALUATION_JSON), &status)?;
    write_metrics_csv(&dir.join(METRICS_CSV), &eval.records)?;
    write_summary_csv(&dir.join(SUMMARY_CSV), &eval.summaries)?;
    write_boxplot_csv(&dir.join(BOXPLOT_CSV), &eval.summaries)?;

    let rows: Vec<Vec<String>> = eval
        .agreement
        .iter()
        .map(|a| {
            vec![
                a.tissue.abbrev().to_string(),
                a.manual_mm2.len().to_string(),
                opt(a.association.and_then(|s| s.r)),
                opt(a.association.and_then(|s| s.icc)),
                opt(a.association.and_then(|s| s.w)),
                opt(a.significance.map(|s| s.anova_f)),
                opt(a.significance.map(|s| s.anova_p)),
                opt(a.significance.map(|s| s.t_p)),
            ]
        })
        .collect();
    write_rows(
        &dir.join(AGREEMENT_CSV),
        &["tissue", "subjects", "r", "icc", "w", "anova_f", "anova_p", "t_p"],
        &rows,
    )?;

    let maps = dir.join(ERROR_MAP_DIR);
    fs::create_dir_all(&maps).map_err(|e| Error::io(format!("creating {}", maps.display()), e))?;
    for (id, map) in &eval.error_maps {
        map.write_png(&maps.join(format!("{id}_errors.png")))?;
    }
    write_json(&dir.join(TIMING_JSON), &timings)
}

/// Re-derives `summary.csv` and `boxplot.csv` in `dir` from its
/// `metrics.csv` and returns the recomputed summaries.
pub fn recompute_report(dir: &Path) -> Result<Vec<TissueSummary>> {
    let records = read_metrics_csv(&dir.join(METRICS_CSV))?;
    let summaries = if records.is_empty() { Vec::new() } else { aggregate(&records)? };
    write_summary_csv(&dir.join(SUMMARY_CSV), &summaries)?;
    write_boxplot_csv(&dir.join(BOXPLOT_CSV), &summaries)?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(METRICS_CSV);
        let records = vec![
            MetricRecord {
                slice_id: SliceId::new("9000001", 7),
                tissue: Tissue::FemoralCartilage,
                dsc: 2.0 / 3.0 * 100.0,
                voe: 50.0,
                hd_mm: None,
                pa: 99.1,
            },
            MetricRecord {
                slice_id: SliceId::new("9000001", 8),
                tissue: Tissue::TibialBone,
                dsc: 0.1 + 0.2,
                voe: 1e-17,
                hd_mm: Some(0.36),
                pa: 100.0,
            },
        ];
        write_metrics_csv(&path, &records).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), records);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",NA,99.1"));
    }
}

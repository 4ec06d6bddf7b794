//! Segmentation quality metrics and their aggregation.
//!
//! Overlap metrics are percentages. Hausdorff distances are in millimetres
//! and `None` when exactly one of the two masks is empty.

mod edt;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMask, SliceId};
use crate::error::{Error, Result};
use crate::roi::Tissue;

pub use edt::squared_distance_transform;
pub use stats::{association_measures, significance_tests, Association, Significance};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Validation(format!("mask sizes differ: {a} vs {b}")));
    }
    Ok(())
}

/// Dice similarity coefficient in percent. Two empty masks score 100.
pub fn dsc(k: &[bool], y: &[bool]) -> Result<f64> {
    check_len(k.len(), y.len())?;
    let (mut inter, mut nk, mut ny) = (0usize, 0usize, 0usize);
    for (&a, &b) in k.iter().zip(y) {
        nk += a as usize;
        ny += b as usize;
        inter += (a && b) as usize;
    }
    if nk + ny == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (nk + ny) as f64)
}

/// Jaccard index in `[0, 1]`. Two empty masks score 1.
pub fn jaccard(k: &[bool], y: &[bool]) -> Result<f64> {
    check_len(k.len(), y.len())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in k.iter().zip(y) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Volumetric overlap error from a DSC percentage.
pub fn voe(dsc_percent: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&dsc_percent) {
        return Err(Error::Validation(format!("DSC {dsc_percent} outside [0, 100]")));
    }
    Ok(100.0 * (1.0 - dsc_percent / (200.0 - dsc_percent)))
}

/// Symmetric Hausdorff distance between foreground pixel centres.
///
/// Both empty gives `Some(0.0)`; exactly one empty gives `None`.
pub fn hausdorff(k: &[bool], y: &[bool], height: usize, width: usize, spacing_mm: (f64, f64)) -> Result<Option<f64>> {
    check_len(k.len(), y.len())?;
    check_len(k.len(), height * width)?;
    let (any_k, any_y) = (k.iter().any(|&b| b), y.iter().any(|&b| b));
    match (any_k, any_y) {
        (false, false) => return Ok(Some(0.0)),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let directed = |from: &[bool], to: &[bool]| {
        let dt = squared_distance_transform(to, height, width, spacing_mm);
        from.iter()
            .zip(&dt)
            .filter(|(&f, _)| f)
            .map(|(_, &d)| d)
            .fold(0.0, f64::max)
    };
    Ok(Some(directed(k, y).max(directed(y, k)).sqrt()))
}

/// Fraction of matching labels in percent, over all classes jointly.
pub fn pixel_accuracy(k: &[u8], y: &[u8]) -> Result<f64> {
    check_len(k.len(), y.len())?;
    if k.is_empty() {
        return Err(Error::Validation("pixel accuracy of an empty map".into()));
    }
    let hits = k.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / k.len() as f64)
}

/// Metrics of one tissue on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub slice_id: SliceId,
    pub tissue: Tissue,
    pub dsc: f64,
    pub voe: f64,
    pub hd_mm: Option<f64>,
    /// Binary pixel accuracy of this tissue against everything else.
    pub pa: f64,
}

impl MetricRecord {
    /// Compares `pred` and `gt` (both 5-class coded) for one tissue.
    pub fn compute(
        slice_id: SliceId,
        tissue: Tissue,
        pred: &LabelMask,
        gt: &LabelMask,
        spacing_mm: (f64, f64),
    ) -> Result<MetricRecord> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::Validation(format!(
                "{slice_id}: prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let k = pred.indicator(tissue.code());
        let y = gt.indicator(tissue.code());
        let d = dsc(&k, &y)?;
        let kb: Vec<u8> = k.iter().map(|&b| b as u8).collect();
        let yb: Vec<u8> = y.iter().map(|&b| b as u8).collect();
        Ok(MetricRecord {
            slice_id,
            tissue,
            dsc: d,
            voe: voe(d)?,
            hd_mm: hausdorff(&k, &y, gt.height(), gt.width(), spacing_mm)?,
            pa: pixel_accuracy(&kb, &yb)?,
        })
    }
}

/// Minimum, quartiles (linear interpolation) and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<FiveNumber> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(FiveNumber {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-tissue means and distributions over a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueSummary {
    pub tissue: Tissue,
    pub count: usize,
    pub mean_dsc: f64,
    pub mean_voe: f64,
    /// Mean over defined distances only; `None` if none are defined.
    pub mean_hd_mm: Option<f64>,
    pub hd_count: usize,
    pub mean_pa: f64,
    pub dsc_box: FiveNumber,
    pub voe_box: FiveNumber,
    pub hd_box: Option<FiveNumber>,
    pub pa_box: FiveNumber,
}

/// Summaries in [`Tissue::ALL`] order for every tissue present in `records`.
pub fn aggregate(records: &[MetricRecord]) -> Result<Vec<TissueSummary>> {
    if records.is_empty() {
        return Err(Error::Validation("cannot aggregate an empty record set".into()));
    }
    let mut out = Vec::new();
    for tissue in Tissue::ALL {
        let rows: Vec<&MetricRecord> = records.iter().filter(|r| r.tissue == tissue).collect();
        if rows.is_empty() {
            continue;
        }
        let pick = |f: fn(&MetricRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let (dscs, voes, pas) = (pick(|r| r.dsc), pick(|r| r.voe), pick(|r| r.pa));
        let hds: Vec<f64> = rows.iter().filter_map(|r| r.hd_mm).collect();
        out.push(TissueSummary {
            tissue,
            count: rows.len(),
            mean_dsc: mean(&dscs),
            mean_voe: mean(&voes),
            mean_hd_mm: (!hds.is_empty()).then(|| mean(&hds)),
            hd_count: hds.len(),
            mean_pa: mean(&pas),
            dsc_box: FiveNumber::of(&dscs).expect("non-empty"),
            voe_box: FiveNumber::of(&voes).expect("non-empty"),
            hd_box: FiveNumber::of(&hds),
            pa_box: FiveNumber::of(&pas).expect("non-empty"),
        });
    }
    Ok(out)
}

/// Mean of the per-tissue mean DSCs (background excluded).
pub fn average_dsc(summaries: &[TissueSummary]) -> Option<f64> {
    (!summaries.is_empty()).then(|| summaries.iter().map(|s| s.mean_dsc).sum::<f64>() / summaries.len() as f64)
}

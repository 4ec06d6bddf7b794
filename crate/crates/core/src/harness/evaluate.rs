//! Critical-slice evaluation, agreement statistics and error maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::segment::{segment_volume, TimingReport};
use crate::data::{LabelMask, SliceId, SlicePair, Volume};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, association_measures, average_dsc, dsc, significance_tests, Association, MetricRecord, Significance,
    TissueSummary,
};
use crate::net::{probabilities, MtraUnet};
use crate::roi::{select_critical_slices, ThresholdConfig, Tissue};

/// Pixel-wise disagreement between a prediction and its ground truth.
///
/// Code 0 is a correct pixel. A ground-truth tissue pixel labelled anything
/// else is a miss of that tissue (`code = tissue`, 1..=4); a ground-truth
/// background pixel labelled as a tissue is a false detection of the
/// predicted tissue (`code = 4 + tissue`, 5..=8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMap {
    codes: Vec<u8>,
    height: usize,
    width: usize,
}

/// Largest code an [`ErrorMap`] can hold.
pub const MAX_ERROR_CODE: u8 = 8;

impl ErrorMap {
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nonzero_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c != 0).count()
    }

    /// Ground-truth `tissue` pixels predicted as something else.
    pub fn false_negatives(&self, tissue: Tissue) -> usize {
        self.codes.iter().filter(|&&c| c == tissue.code()).count()
    }

    /// Ground-truth background pixels predicted as `tissue`.
    pub fn false_positives(&self, tissue: Tissue) -> usize {
        self.codes.iter().filter(|&&c| c == 4 + tissue.code()).count()
    }

    /// Writes the map as a palette PNG (green/blue shades for misses,
    /// red/orange shades for false detections).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        const PALETTE: [u8; 27] = [
            0, 0, 0, // correct
            0, 160, 0, 0, 96, 255, 0, 255, 96, 0, 224, 255, // misses FB, TB, FC, TC
            200, 0, 0, 255, 128, 0, 255, 0, 160, 255, 224, 0, // false FB, TB, FC, TC
        ];
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(PALETTE.to_vec());
        let fail = |e: png::EncodingError| Error::io(format!("writing {}", path.display()), std::io::Error::other(e));
        enc.write_header().map_err(fail)?.write_image_data(&self.codes).map_err(fail)?;
        Ok(())
    }
}

/// Error map of `pred` against `gt`, both 5-class coded.
pub fn error_map(pred: &LabelMask, gt: &LabelMask) -> Result<ErrorMap> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Validation(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let codes = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .map(|(&p, &g)| match (p == g, g) {
            (true, _) => 0,
            (false, 0) => 4 + p,
            (false, g) => g,
        })
        .collect();
    Ok(ErrorMap {
        codes,
        height: gt.height(),
        width: gt.width(),
    })
}

/// Manual vs predicted per-subject areas of one tissue over critical slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueAgreement {
    pub tissue: Tissue,
    /// Ground-truth area per subject, mm².
    pub manual_mm2: Vec<f64>,
    pub predicted_mm2: Vec<f64>,
    /// `None` with fewer than three subjects.
    pub association: Option<Association>,
    pub significance: Option<Significance>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub slice_count: usize,
    /// Critical slices, chosen from the ground truth only.
    pub selected: Vec<SliceId>,
    pub records: Vec<MetricRecord>,
    pub summaries: Vec<TissueSummary>,
    pub average_dsc: Option<f64>,
    pub agreement: Vec<TissueAgreement>,
    pub error_maps: Vec<(SliceId, ErrorMap)>,
}

impl Evaluation {
    pub fn is_empty_selection(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Scores `predictions[i][j]` against slice `j` of `volumes[i]` on the
/// critical slices of each ground-truth volume.
pub fn evaluate_predictions(
    volumes: &[Volume],
    predictions: &[Vec<LabelMask>],
    mode: Mode,
    thresholds: &ThresholdConfig,
) -> Result<Evaluation> {
    if volumes.len() != predictions.len() {
        return Err(Error::Validation(format!(
            "{} volumes but {} prediction sets",
            volumes.len(),
            predictions.len()
        )));
    }
    let tissues = mode.tissues();
    let mut selected = Vec::new();
    let mut records = Vec::new();
    let mut error_maps = Vec::new();
    let mut areas: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); tissues.len()];
    for (volume, preds) in volumes.iter().zip(predictions) {
        if volume.len() != preds.len() {
            return Err(Error::Validation(format!(
                "subject {}: {} slices but {} predictions",
                volume.meta.subject_id,
                volume.len(),
                preds.len()
            )));
        }
        let mut manual = vec![0.0; tissues.len()];
        let mut predicted = vec![0.0; tissues.len()];
        for idx in select_critical_slices(volume.masks(), thresholds) {
            let (s, pred) = (&volume.slices[idx], &preds[idx]);
            let spacing = s.image.spacing_mm();
            let pixel_area = spacing.0 * spacing.1;
            for (i, &t) in tissues.iter().enumerate() {
                records.push(MetricRecord::compute(s.id.clone(), t, pred, &s.mask, spacing)?);
                manual[i] += s.mask.count(t.code()) as f64 * pixel_area;
                predicted[i] += pred.count(t.code()) as f64 * pixel_area;
            }
            error_maps.push((s.id.clone(), error_map(pred, &s.mask)?));
            selected.push(s.id.clone());
        }
        for (i, (m, p)) in areas.iter_mut().enumerate() {
            m.push(manual[i]);
            p.push(predicted[i]);
        }
    }

    let summaries = if records.is_empty() { Vec::new() } else { aggregate(&records)? };
    let agreement = tissues
        .iter()
        .zip(areas)
        .map(|(&tissue, (manual_mm2, predicted_mm2))| {
            let enough = manual_mm2.len() >= 3;
            Ok(TissueAgreement {
                tissue,
                association: enough.then(|| association_measures(&manual_mm2, &predicted_mm2)).transpose()?,
                significance: enough.then(|| significance_tests(&manual_mm2, &predicted_mm2)).transpose()?,
                manual_mm2,
                predicted_mm2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        slice_count: volumes.iter().map(Volume::len).sum(),
        selected,
        average_dsc: average_dsc(&summaries),
        records,
        summaries,
        agreement,
        error_maps,
    })
}

/// Segments every volume with `model` and evaluates the result.
pub fn evaluate_model(
    model: &MtraUnet,
    mode: Mode,
    volumes: &[Volume],
    thresholds: &ThresholdConfig,
) -> Result<(Evaluation, Vec<TimingReport>)> {
    let mut predictions = Vec::with_capacity(volumes.len());
    let mut timings = Vec::with_capacity(volumes.len());
    for v in volumes {
        let seg = segment_volume(model, mode, v)?;
        predictions.push(seg.masks);
        timings.push(seg.timing);
    }
    Ok((evaluate_predictions(volumes, &predictions, mode, thresholds)?, timings))
}

/// Mean per-slice DSC of every tissue present in the ground truth of
/// `slices`, averaged over the slices that contain it, in [`Tissue::ALL`] order.
pub fn slice_dsc_by_tissue(model: &MtraUnet, mode: Mode, slices: &[SlicePair]) -> Result<Vec<(Tissue, f64)>> {
    let mut sums = vec![(0.0, 0usize); Tissue::ALL.len()];
    for s in slices {
        let pred = mode.decode(&probabilities(&model.forward_slice(&s.image)?, 0)?)?;
        for (i, t) in Tissue::ALL.iter().enumerate() {
            if mode.tissues().contains(t) && s.mask.count(t.code()) > 0 {
                sums[i].0 += dsc(&pred.indicator(t.code()), &s.mask.indicator(t.code()))?;
                sums[i].1 += 1;
            }
        }
    }
    Ok(Tissue::ALL
        .iter()
        .zip(sums)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(&t, (sum, n))| (t, sum / n as f64))
        .collect())
}

//! Timed whole-volume segmentation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::data::{LabelMask, Volume};
use crate::error::{Error, Result};
use crate::net::{probabilities, MtraUnet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTiming {
    /// `<subject>_<NNN>`.
    pub slice_id: String,
    /// Forward pass plus mask decoding.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub subject_id: String,
    pub slice_count: usize,
    pub per_slice: Vec<SliceTiming>,
    /// Sum of the per-slice entries.
    pub compute_seconds: f64,
    /// Wall-clock time of the whole segmentation loop.
    pub total_seconds: f64,
    /// Reading the volume and writing masks; filled in by the caller.
    pub io_seconds: f64,
}

impl TimingReport {
    /// Relative gap between the per-slice sum and the wall-clock total.
    pub fn discrepancy(&self) -> f64 {
        if self.total_seconds == 0.0 {
            return 0.0;
        }
        (self.total_seconds - self.compute_seconds).abs() / self.total_seconds
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    /// One 5-class coded mask per slice, in volume order.
    pub masks: Vec<LabelMask>,
    pub timing: TimingReport,
}

/// Segments every slice of `volume`, one slice at a time.
pub fn segment_volume(model: &MtraUnet, mode: Mode, volume: &Volume) -> Result<Segmentation> {
    let cfg = model.config();
    if cfg.class_count != mode.class_count() {
        return Err(Error::Validation(format!(
            "model has {} output channels, mode {mode} needs {}",
            cfg.class_count,
            mode.class_count()
        )));
    }
    let size = cfg.input_size;
    if let Some(s) = volume
        .slices
        .iter()
        .find(|s| s.image.height() != size || s.image.width() != size)
    {
        return Err(Error::Validation(format!(
            "slice {} is {}x{}, model input is {size}x{size}",
            s.id,
            s.image.height(),
            s.image.width()
        )));
    }

    let start = Instant::now();
    let mut masks = Vec::with_capacity(volume.len());
    let mut per_slice = Vec::with_capacity(volume.len());
    for s in &volume.slices {
        let t = Instant::now();
        let scores = probabilities(&model.forward_slice(&s.image)?, 0)?;
        masks.push(mode.decode(&scores)?);
        per_slice.push(SliceTiming {
            slice_id: s.id.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    let total_seconds = start.elapsed().as_secs_f64();
    Ok(Segmentation {
        masks,
        timing: TimingReport {
            subject_id: volume.meta.subject_id.clone(),
            slice_count: per_slice.len(),
            compute_seconds: per_slice.iter().map(|t| t.seconds).sum(),
            per_slice,
            total_seconds,
            io_seconds: 0.0,
        },
    })
}

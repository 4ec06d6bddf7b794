//! Slice and mask containers, volume loading, resizing and synthetic phantoms.
//!
//! Masks use the OAI-ZIB label coding: background 0, femoral bone 1,
//! femoral cartilage 2, tibial bone 3, tibial cartilage 4.

mod io;
mod phantom;
mod resize;

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    image_file_name, load_volume, mask_file_name, read_label_png, write_label_png, write_volume,
    META_FILE,
};
pub use phantom::make_phantom;
pub use resize::{resize_bilinear, resize_nearest, resize_pair};

/// Number of classes in the multi-class coding (background + 4 tissues).
pub const MULTICLASS_COUNT: u8 = 5;

/// One 2D grayscale slice with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSlice {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
}

impl ImageSlice {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize, spacing_mm: (f64, f64)) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation("image slice must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Validation(format!(
                "pixel buffer has {} values, expected {height}x{width}",
                pixels.len()
            )));
        }
        if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0) {
            return Err(Error::Validation(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            pixels,
            height,
            width,
            spacing_mm,
        })
    }

    /// Builds a slice from raw scanner intensities using per-slice min-max
    /// normalization.
    pub fn from_raw(raw: &[f32], height: usize, width: usize, spacing_mm: (f64, f64)) -> Result<Self> {
        Self::new(normalize_min_max(raw), height, width, spacing_mm)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Physical (row, column) pixel spacing in millimetres.
    pub fn spacing_mm(&self) -> (f64, f64) {
        self.spacing_mm
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// `(1, H, W)` tensor of intensities.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.pixels, (1, self.height, self.width), device)?.to_dtype(dtype)?)
    }
}

/// Min-max normalization to `[0, 1]`. Constant inputs map to all zeros.
pub fn normalize_min_max(raw: &[f32]) -> Vec<f32> {
    let (lo, hi) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if raw.is_empty() || !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    let range = hi - lo;
    raw.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// Per-pixel integer labels in `0..class_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    labels: Vec<u8>,
    height: usize,
    width: usize,
    class_count: u8,
}

impl LabelMask {
    pub fn new(labels: Vec<u8>, height: usize, width: usize, class_count: u8) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Validation(format!("class_count must be >= 2, got {class_count}")));
        }
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::Validation(format!(
                "label buffer has {} values, expected {height}x{width}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Validation(format!(
                "label {bad} outside 0..{} for a {class_count}-class mask",
                class_count - 1
            )));
        }
        Ok(Self {
            labels,
            height,
            width,
            class_count,
        })
    }

    pub fn zeros(height: usize, width: usize, class_count: u8) -> Self {
        Self {
            labels: vec![0; height * width],
            height,
            width,
            class_count,
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> u8 {
        self.class_count
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Foreground indicator for one label code.
    pub fn indicator(&self, code: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == code).collect()
    }

    /// Binary (background/foreground) mask selecting one label code.
    pub fn binarize(&self, code: u8) -> LabelMask {
        LabelMask {
            labels: self.labels.iter().map(|&l| u8::from(l == code)).collect(),
            height: self.height,
            width: self.width,
            class_count: 2,
        }
    }

    /// Maps a binary mask back into a multi-class coding: foreground becomes `code`.
    pub fn recode_foreground(&self, code: u8, class_count: u8) -> Result<LabelMask> {
        let labels = self.labels.iter().map(|&l| if l != 0 { code } else { 0 }).collect();
        LabelMask::new(labels, self.height, self.width, class_count)
    }

    pub fn count(&self, code: u8) -> usize {
        self.labels.iter().filter(|&&l| l == code).count()
    }
}

/// `(m, H, W)` one-hot encoding of a mask, `m = class_count`.
pub fn one_hot(mask: &LabelMask, dtype: DType, device: &Device) -> Result<Tensor> {
    let m = mask.class_count as usize;
    let hw = mask.height * mask.width;
    let mut data = vec![0f32; m * hw];
    for (i, &l) in mask.labels.iter().enumerate() {
        data[l as usize * hw + i] = 1.0;
    }
    Ok(Tensor::from_vec(data, (m, mask.height, mask.width), device)?.to_dtype(dtype)?)
}

/// Decodes a `(m, H, W)` score map into labels: per-pixel argmax when
/// `m > 1`, a 0.5 threshold on the single probability channel when `m == 1`.
/// Ties resolve to the lowest class index.
pub fn decode_labels(scores: &Tensor) -> Result<LabelMask> {
    let (m, h, w) = scores.dims3()?;
    let values: Vec<f64> = scores.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let hw = h * w;
    let labels: Vec<u8> = if m == 1 {
        values.iter().map(|&p| u8::from(p >= 0.5)).collect()
    } else {
        (0..hw)
            .map(|i| {
                let mut best = 0;
                for c in 1..m {
                    if values[c * hw + i] > values[best * hw + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    };
    LabelMask::new(labels, h, w, if m == 1 { 2 } else { m as u8 })
}

/// Slice identity `<subject>_<NNN>`.
///
/// The subject prefix is everything before the final underscore; its digit
/// count is not enforced.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceId {
    pub subject_id: String,
    pub slice_index: u32,
}

impl SliceId {
    pub fn new(subject_id: impl Into<String>, slice_index: u32) -> Self {
        Self {
            subject_id: subject_id.into(),
            slice_index,
        }
    }
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{:03}", self.subject_id, self.slice_index)
    }
}

impl FromStr for SliceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed slice id {s:?}"));
        let (subject, index) = s.rsplit_once('_').ok_or_else(bad)?;
        if subject.is_empty() || index.len() != 3 || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        Ok(SliceId::new(subject, index.parse().map_err(|_| bad())?))
    }
}

/// Acquisition geometry of one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub subject_id: String,
    pub slice_count: usize,
    pub original_size: usize,
    pub resized_size: usize,
    pub spacing_mm: (f64, f64),
}

impl Default for VolumeMeta {
    fn default() -> Self {
        Self {
            subject_id: "9000000".into(),
            slice_count: 160,
            original_size: 384,
            resized_size: 150,
            spacing_mm: (0.36, 0.36),
        }
    }
}

impl VolumeMeta {
    pub fn validate(&self) -> Result<()> {
        if self.slice_count == 0 {
            return Err(Error::Validation("slice_count must be >= 1".into()));
        }
        if self.resized_size == 0 || self.resized_size > self.original_size {
            return Err(Error::Validation(format!(
                "resized_size {} must be in 1..={}",
                self.resized_size, self.original_size
            )));
        }
        if !(self.spacing_mm.0 > 0.0 && self.spacing_mm.1 > 0.0) {
            return Err(Error::Validation("spacing must be positive".into()));
        }
        Ok(())
    }
}

/// One slice of a volume with its identity and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub id: SliceId,
    pub image: ImageSlice,
    pub mask: LabelMask,
}

/// An ordered stack of slices belonging to one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub meta: VolumeMeta,
    pub slices: Vec<SlicePair>,
}

impl Volume {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn masks(&self) -> impl Iterator<Item = &LabelMask> {
        self.slices.iter().map(|s| &s.mask)
    }

    /// Resizes every slice to `target x target`.
    pub fn resized(&self, target: usize) -> Result<Volume> {
        let slices = self
            .slices
            .iter()
            .map(|s| {
                let (image, mask) = resize_pair(&s.image, &s.mask, target)?;
                Ok(SlicePair {
                    id: s.id.clone(),
                    image,
                    mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spacing_mm = slices
            .first()
            .map(|s| s.image.spacing_mm())
            .unwrap_or(self.meta.spacing_mm);
        Ok(Volume {
            meta: VolumeMeta {
                resized_size: target.min(self.meta.original_size),
                spacing_mm,
                ..self.meta.clone()
            },
            slices,
        })
    }
}

/// Drops the first and last `k` slices.
pub fn strip_edge_slices(volume: &Volume, k: usize) -> Result<Volume> {
    let n = volume.slices.len();
    if 2 * k >= n {
        return Err(Error::Argument(format!(
            "cannot strip {k} slices from each end of a {n}-slice volume"
        )));
    }
    Ok(Volume {
        meta: volume.meta.clone(),
        slices: volume.slices[k..n - k].to_vec(),
    })
}

//! On-disk slice layout: `<subject>_<NNN>.png` (8- or 16-bit grayscale
//! intensities) next to `<subject>_<NNN>_mask.png` (8-bit label codes).

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader};

use super::{ImageSlice, LabelMask, SliceId, SlicePair, Volume, VolumeMeta, MULTICLASS_COUNT};
use crate::error::{Error, Result};

/// Optional sidecar carrying [`VolumeMeta`] as JSON.
pub const META_FILE: &str = "volume.json";

pub fn image_file_name(id: &SliceId) -> String {
    format!("{id}.png")
}

pub fn mask_file_name(id: &SliceId) -> String {
    format!("{id}_mask.png")
}

fn open_png(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(reader.decode()?)
}

/// Raw grayscale intensities (8- or 16-bit) as `f32`, with dimensions.
fn read_intensity_png(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = open_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(f32::from).collect(),
        other => other.into_luma16().into_raw().into_iter().map(f32::from).collect(),
    };
    Ok((raw, h, w))
}

/// Reads an 8-bit label image and validates it against `class_count`.
pub fn read_label_png(path: &Path, class_count: u8) -> Result<LabelMask> {
    let img = open_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        DynamicImage::ImageLuma16(g) => g
            .into_raw()
            .into_iter()
            .map(|v| u8::try_from(v).unwrap_or(u8::MAX))
            .collect(),
        _ => {
            return Err(Error::Validation(format!(
                "{}: label images must be single-channel",
                path.display()
            )))
        }
    };
    LabelMask::new(labels, h, w, class_count)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_label_png(path: &Path, mask: &LabelMask) -> Result<()> {
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("buffer length matches mask dimensions");
    img.save(path)?;
    Ok(())
}

fn write_intensity_png(path: &Path, img: &ImageSlice) -> Result<()> {
    let bytes = img.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let out = GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches image dimensions");
    out.save(path)?;
    Ok(())
}

/// Slice ids of all intensity images (not masks) in `dir`, sorted.
fn scan_slice_ids(dir: &Path) -> Result<Vec<SliceId>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        let name = entry.file_name();
        let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".png")) else {
            continue;
        };
        if stem.ends_with("_mask") {
            continue;
        }
        if let Ok(id) = stem.parse::<SliceId>() {
            ids.push(id);
        }
    }
    ids.sort();
    Ok(ids)
}

impl VolumeMeta {
    /// Infers volume geometry from a directory: the `volume.json` sidecar if
    /// present, otherwise the file names and the first image's size.
    pub fn discover(dir: &Path) -> Result<VolumeMeta> {
        let sidecar = dir.join(META_FILE);
        if sidecar.exists() {
            let text = fs::read_to_string(&sidecar)
                .map_err(|e| Error::io(format!("reading {}", sidecar.display()), e))?;
            let meta: VolumeMeta = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("{}: {e}", sidecar.display())))?;
            meta.validate()?;
            return Ok(meta);
        }
        let ids = scan_slice_ids(dir)?;
        let first = ids.first().ok_or_else(|| Error::NoSlices(dir.to_path_buf()))?;
        if let Some(other) = ids.iter().find(|id| id.subject_id != first.subject_id) {
            return Err(Error::Validation(format!(
                "{} mixes subjects {} and {}",
                dir.display(),
                first.subject_id,
                other.subject_id
            )));
        }
        let (_, h, _) = read_intensity_png(&dir.join(image_file_name(first)))?;
        let defaults = VolumeMeta::default();
        Ok(VolumeMeta {
            subject_id: first.subject_id.clone(),
            slice_count: ids.iter().map(|id| id.slice_index as usize).max().unwrap_or(0) + 1,
            original_size: h,
            resized_size: defaults.resized_size.min(h),
            spacing_mm: defaults.spacing_mm,
        })
    }
}

/// Loads slices `0..meta.slice_count` of one subject from `dir`.
///
/// Intensities are min-max normalized per slice; masks must use the
/// 5-class coding.
pub fn load_volume(dir: &Path, meta: &VolumeMeta) -> Result<Volume> {
    meta.validate()?;
    if scan_slice_ids(dir)?.is_empty() {
        return Err(Error::NoSlices(dir.to_path_buf()));
    }
    let mut slices = Vec::with_capacity(meta.slice_count);
    for index in 0..meta.slice_count {
        let id = SliceId::new(meta.subject_id.clone(), index as u32);
        let image_path = dir.join(image_file_name(&id));
        let mask_path = dir.join(mask_file_name(&id));
        for path in [&image_path, &mask_path] {
            if !path.exists() {
                return Err(Error::MissingSlice {
                    id,
                    path: PathBuf::from(path),
                });
            }
        }
        let (raw, h, w) = read_intensity_png(&image_path)?;
        let image = ImageSlice::from_raw(&raw, h, w, meta.spacing_mm)?;
        let mask = read_label_png(&mask_path, MULTICLASS_COUNT)?;
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::Validation(format!("{id}: image is {h}x{w} but mask is {}x{}", mask.height(), mask.width())));
        }
        slices.push(SlicePair { id, image, mask });
    }
    Ok(Volume {
        meta: meta.clone(),
        slices,
    })
}

/// Writes a volume as PNG pairs plus the `volume.json` sidecar.
pub fn write_volume(dir: &Path, volume: &Volume) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for s in &volume.slices {
        write_intensity_png(&dir.join(image_file_name(&s.id)), &s.image)?;
        write_label_png(&dir.join(mask_file_name(&s.id)), &s.mask)?;
    }
    let meta = serde_json::to_string_pretty(&volume.meta).expect("meta serializes");
    fs::write(dir.join(META_FILE), meta).map_err(|e| Error::io("writing volume.json", e))?;
    Ok(())
}

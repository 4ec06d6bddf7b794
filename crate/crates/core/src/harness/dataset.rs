//! On-disk dataset layout: `<root>/{train,val,test}/<subject>/` volumes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_volume, make_phantom, strip_edge_slices, write_volume, SlicePair, Volume, VolumeMeta};
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Subject directories of `root/split`, sorted by name; empty if the split is absent.
pub fn subject_dirs(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_subject(dir: &Path) -> Result<Volume> {
    load_volume(dir, &VolumeMeta::discover(dir)?)
}

pub fn load_split(root: &Path, split: &str) -> Result<Vec<Volume>> {
    load_split_capped(root, split, usize::MAX)
}

/// The first `limit` subjects of a split, by directory name.
pub fn load_split_capped(root: &Path, split: &str, limit: usize) -> Result<Vec<Volume>> {
    subject_dirs(root, split)?.iter().take(limit).map(|d| load_subject(d)).collect()
}

/// Edge-stripped, resized slices of every volume, in volume order.
pub fn training_slices(volumes: &[Volume], input_size: usize, strip: usize) -> Result<Vec<SlicePair>> {
    let mut out = Vec::new();
    for v in volumes {
        let kept = strip_edge_slices(v, strip)?;
        out.extend(kept.resized(input_size)?.slices);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub slice_count: usize,
    pub size: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 3,
            val: 1,
            test: 3,
            slice_count: 160,
            size: 384,
        }
    }
}

/// Geometry of the `index`-th phantom subject. The field of view matches a
/// 384-pixel, 0.36 mm acquisition at every size.
pub fn phantom_meta(index: usize, slice_count: usize, size: usize) -> VolumeMeta {
    let spacing = 0.36 * 384.0 / size as f64;
    VolumeMeta {
        subject_id: format!("{}", 9_000_001 + index),
        slice_count,
        original_size: size,
        resized_size: size.min(150),
        spacing_mm: (spacing, spacing),
    }
}

/// Writes a synthetic dataset under `out` and returns the subject directories.
pub fn generate_phantom_dataset(out: &Path, spec: &PhantomSpec) -> Result<Vec<PathBuf>> {
    if spec.slice_count == 0 || spec.size == 0 {
        return Err(Error::Argument("phantom slice count and size must be >= 1".into()));
    }
    let mut dirs = Vec::new();
    let mut index = 0;
    for (split, count) in SPLITS.iter().zip([spec.train, spec.val, spec.test]) {
        for _ in 0..count {
            let meta = phantom_meta(index, spec.slice_count, spec.size);
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
            let dir = out.join(split).join(&meta.subject_id);
            write_volume(&dir, &make_phantom(seed, &meta))?;
            dirs.push(dir);
            index += 1;
        }
    }
    Ok(dirs)
}

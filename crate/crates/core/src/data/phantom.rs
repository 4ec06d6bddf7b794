//! Deterministic synthetic knee volumes.
//!
//! Each slice is a stylised sagittal cross-section: an elliptical femoral
//! bone with a curved cartilage band under it, and a tibial bone with a
//! cartilage band on top. Structures grow from nothing at the volume edges
//! to full size at mid-volume, so edge slices are empty and central slices
//! carry every tissue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ImageSlice, LabelMask, SliceId, SlicePair, Volume, VolumeMeta, MULTICLASS_COUNT};
use crate::roi::Tissue;

const BACKGROUND_LEVEL: f32 = 0.15;
const NOISE_SIGMA: f32 = 0.04;
/// Half-width of the tissue-bearing slab as a fraction of the volume.
const SLAB_HALF_WIDTH: f64 = 0.36;

fn tissue_level(label: u8) -> f32 {
    match Tissue::from_code(label) {
        Some(Tissue::FemoralBone) => 0.45,
        Some(Tissue::FemoralCartilage) => 0.80,
        Some(Tissue::TibialBone) => 0.40,
        Some(Tissue::TibialCartilage) => 0.75,
        None => BACKGROUND_LEVEL,
    }
}

/// Subject-level shape parameters drawn once per volume.
struct Anatomy {
    center_u: f64,
    femur_v: f64,
    tibia_v: f64,
    scale_u: f64,
    scale_v: f64,
}

impl Anatomy {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            center_u: 0.5 + rng.random_range(-0.03..0.03),
            femur_v: 0.30 + rng.random_range(-0.015..0.015),
            tibia_v: 0.80 + rng.random_range(-0.015..0.015),
            scale_u: rng.random_range(0.92..1.08),
            scale_v: rng.random_range(0.92..1.08),
        }
    }

    /// Label at normalized position `(u, v)` for a slice whose structures
    /// are scaled by `s` in `[0, 1]`.
    fn label_at(&self, u: f64, v: f64, s: f64, shift: f64) -> u8 {
        if s <= 0.0 {
            return 0;
        }
        let cu = self.center_u + shift;
        let ellipse = |cv: f64, rx: f64, ry: f64| ((u - cu) / rx).powi(2) + ((v - cv) / ry).powi(2);

        let (f_rx, f_ry) = (0.28 * s * self.scale_u, 0.22 * s * self.scale_v);
        if ellipse(self.femur_v, f_rx, f_ry) <= 1.0 {
            return Tissue::FemoralBone.code();
        }
        let fc = 0.03;
        if v > self.femur_v
            && (u - cu).abs() < 0.85 * f_rx
            && ellipse(self.femur_v, f_rx + fc, f_ry + fc) <= 1.0
        {
            return Tissue::FemoralCartilage.code();
        }

        let (t_rx, t_ry) = (0.30 * s * self.scale_u, 0.17 * s * self.scale_v);
        if ellipse(self.tibia_v, t_rx, t_ry) <= 1.0 {
            return Tissue::TibialBone.code();
        }
        let tc = 0.025;
        if v < self.tibia_v
            && (u - cu).abs() < 0.85 * t_rx
            && ellipse(self.tibia_v, t_rx + tc, t_ry + tc) <= 1.0
        {
            return Tissue::TibialCartilage.code();
        }
        0
    }
}

/// Generates a synthetic volume of `meta.slice_count` slices at
/// `meta.original_size` resolution. Pure function of `(seed, meta)`.
pub fn make_phantom(seed: u64, meta: &VolumeMeta) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anatomy = Anatomy::draw(&mut rng);
    let noise = Normal::new(0.0f32, NOISE_SIGMA).expect("positive sigma");
    let n = meta.original_size.max(1);
    let count = meta.slice_count.max(1);

    let slices = (0..count)
        .map(|index| {
            let t = if count > 1 {
                index as f64 / (count - 1) as f64
            } else {
                0.5
            };
            let extent = (1.0 - ((t - 0.5) / SLAB_HALF_WIDTH).powi(2)).max(0.0);
            let scale = extent.sqrt();
            let shift = 0.02 * (2.0 * std::f64::consts::PI * t).sin();

            let mut labels = Vec::with_capacity(n * n);
            let mut raw = Vec::with_capacity(n * n);
            for r in 0..n {
                let v = (r as f64 + 0.5) / n as f64;
                for c in 0..n {
                    let u = (c as f64 + 0.5) / n as f64;
                    let label = anatomy.label_at(u, v, scale, shift);
                    labels.push(label);
                    raw.push((tissue_level(label) + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            SlicePair {
                id: SliceId::new(meta.subject_id.clone(), index as u32),
                image: ImageSlice::from_raw(&raw, n, n, meta.spacing_mm).expect("valid phantom image"),
                mask: LabelMask::new(labels, n, n, MULTICLASS_COUNT).expect("valid phantom mask"),
            }
        })
        .collect();

    Volume {
        meta: VolumeMeta {
            slice_count: count,
            ..meta.clone()
        },
        slices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::resize_pair;
    use crate::roi::tissue_pixel_counts;

    fn small_meta() -> VolumeMeta {
        VolumeMeta {
            slice_count: 40,
            original_size: 96,
            resized_size: 96,
            ..VolumeMeta::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_phantom(7, &small_meta());
        let b = make_phantom(7, &small_meta());
        assert_eq!(a, b);
        let c = make_phantom(8, &small_meta());
        assert_ne!(a, c);
    }

    #[test]
    fn first_slice_is_background() {
        let v = make_phantom(3, &small_meta());
        assert!(v.slices[0].mask.labels().iter().all(|&l| l == 0));
        assert!(v.slices.last().unwrap().mask.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn mid_volume_slice_has_every_tissue_at_150() {
        let meta = VolumeMeta::default();
        let mut meta_one = meta.clone();
        // only the middle slice is needed; generate a 3-slice volume whose
        // middle slice sits at t = 0.5 exactly like slice 80 of 160 (approximately)
        meta_one.slice_count = 3;
        let v = make_phantom(11, &meta_one);
        let mid = &v.slices[1];
        let (_, mask) = resize_pair(&mid.image, &mid.mask, 150).unwrap();
        let c = tissue_pixel_counts(&mask);
        assert!(c.fb >= 300 && c.tb >= 300 && c.fc >= 100 && c.tc >= 100, "{c:?}");
    }
}

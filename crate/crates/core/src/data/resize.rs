use super::{ImageSlice, LabelMask};
use crate::error::{Error, Result};

/// Source coordinate of destination pixel `dst` under half-pixel-center mapping.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Bilinear resampling of a row-major `h x w` buffer.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let taps = |dst: usize, len: usize, out: usize| {
        let x = source_coord(dst, len, out).clamp(0.0, (len - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(len - 1);
        (x0, x1, x - x0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|c| taps(c, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = taps(r, h, out_h);
        for &(c0, c1, fc) in &cols {
            let p = |rr: usize, cc: usize| src[rr * w + cc] as f64;
            let top = p(r0, c0) * (1.0 - fc) + p(r0, c1) * fc;
            let bottom = p(r1, c0) * (1.0 - fc) + p(r1, c1) * fc;
            out.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    out
}

/// Nearest-neighbour resampling; never introduces values absent from `src`.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let pick = |dst: usize, len: usize, out: usize| {
        (((dst as f64 + 0.5) * len as f64 / out as f64).floor() as usize).min(len - 1)
    };
    let cols: Vec<usize> = (0..out_w).map(|c| pick(c, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let rr = pick(r, h, out_h);
        out.extend(cols.iter().map(|&cc| src[rr * w + cc]));
    }
    out
}

/// Resizes an image/mask pair to `target x target`: bilinear for the image,
/// nearest-neighbour for the mask. Spacing is rescaled so that distances
/// measured on the resized grid stay in physical millimetres.
pub fn resize_pair(img: &ImageSlice, mask: &LabelMask, target: usize) -> Result<(ImageSlice, LabelMask)> {
    if target == 0 {
        return Err(Error::Argument("resize target must be >= 1".into()));
    }
    if (img.height, img.width) != (mask.height, mask.width) {
        return Err(Error::Validation(format!(
            "image is {}x{} but mask is {}x{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    if img.height == target && img.width == target {
        return Ok((img.clone(), mask.clone()));
    }
    let (h, w) = (img.height, img.width);
    let pixels = resize_bilinear(&img.pixels, h, w, target, target)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let spacing = (
        img.spacing_mm.0 * h as f64 / target as f64,
        img.spacing_mm.1 * w as f64 / target as f64,
    );
    let labels = resize_nearest(&mask.labels, h, w, target, target);
    Ok((
        ImageSlice::new(pixels, target, target, spacing)?,
        LabelMask::new(labels, target, target, mask.class_count)?,
    ))
}

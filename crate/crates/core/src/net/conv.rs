//! Convolution as im2col + matrix multiply.
//!
//! The column unfold and its adjoint are custom ops; the products (and
//! their gradients) go through candle's gemm-backed matmul.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    /// Appends a constant-one column to every patch so a bias can ride the matmul.
    ones: bool,
}

impl Geometry {
    fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.k) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.k) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Length of one patch row, including the ones column.
    fn row_len(&self) -> usize {
        self.rows() + usize::from(self.ones)
    }

    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Valid kernel-column range `kx` for output column `ox`, with the first input column.
    fn x_span(&self, ox: usize) -> (usize, usize, usize) {
        let left = ox * self.stride;
        let lo = self.padding.saturating_sub(left);
        let hi = (self.w + self.padding).saturating_sub(left).min(self.k);
        (lo, hi.max(lo), left + lo - self.padding)
    }

    /// Calls `f(patch_offset, image_offset, len)` for every contiguous run
    /// shared by the patch matrix `(N, OH*OW, C*k*k)` and the image.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow, rows) = (self.out_h(), self.out_w(), self.row_len());
        for n in 0..self.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (kx_lo, kx_hi, ix) = self.x_span(ox);
                    if kx_lo == kx_hi {
                        continue;
                    }
                    let patch = ((n * oh + oy) * ow + ox) * rows;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for c in 0..self.c {
                            let dst = patch + (c * self.k + ky) * self.k + kx_lo;
                            let src = ((n * self.c + c) * self.h + iy as usize) * self.w + ix;
                            f(dst, src, kx_hi - kx_lo);
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

fn unfold<T: WithDType>(g: &Geometry, src: &[T]) -> Vec<T> {
    let row_len = g.row_len();
    let mut dst = vec![T::zero(); g.n * g.cols() * row_len];
    g.for_each_run(|d, s, len| dst[d..d + len].copy_from_slice(&src[s..s + len]));
    if g.ones {
        for row in dst.chunks_exact_mut(row_len) {
            row[row_len - 1] = T::one();
        }
    }
    dst
}

/// `(N, C, H, W) -> (N*OH*OW, C*k*k [+1])`, one flattened patch per output pixel.
struct Im2Col(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = Shape::from((g.n * g.cols(), g.row_len()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(unfold(&g, contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(unfold(&g, contiguous(v, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

/// Adjoint of [`Im2Col`]: scatters columns back, summing overlaps.
struct Col2Im(Geometry);

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = Shape::from((g.n, g.c, g.h, g.w));
        let out = match storage {
            CpuStorage::F32(v) => {
                let src = contiguous(v, layout)?;
                let mut dst = vec![0f32; shape.elem_count()];
                g.for_each_run(|p, i, len| {
                    for (o, v) in dst[i..i + len].iter_mut().zip(&src[p..p + len]) {
                        *o += *v;
                    }
                });
                CpuStorage::F32(dst)
            }
            CpuStorage::F64(v) => {
                let src = contiguous(v, layout)?;
                let mut dst = vec![0f64; shape.elem_count()];
                g.for_each_run(|p, i, len| {
                    for (o, v) in dst[i..i + len].iter_mut().zip(&src[p..p + len]) {
                        *o += *v;
                    }
                });
                CpuStorage::F64(dst)
            }
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, shape))
    }
}

/// Cross-correlation of `x (N, C, H, W)` with `weight (O, C, k, k)` plus an
/// optional per-channel `bias (O)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, _, k, _) = weight.dims4()?;
    let g = Geometry {
        n,
        c,
        h,
        w,
        k,
        stride,
        padding,
        ones: bias.is_some(),
    };
    let mut kernel = weight.reshape((o, g.rows()))?;
    if let Some(b) = bias {
        kernel = Tensor::cat(&[&kernel, &b.reshape((o, 1))?], 1)?;
    }
    let patches = x.contiguous()?.apply_op1(Im2Col(g))?;
    let out = patches.matmul(&kernel.t()?)?;
    Ok(out
        .reshape((n, g.cols(), o))?
        .transpose(1, 2)?
        .reshape((n, o, g.out_h(), g.out_w()))?)
}

/// Stride-2, 2x2 transposed convolution of `x (N, C, H, W)` with
/// `weight (C, O, 2, 2)`: each input pixel expands into its own 2x2 block.
pub fn upconv2x2(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let o = weight.dim(1)?;
    let wt = weight.reshape((c, o * 4))?.t()?;
    let blocks = wt.broadcast_matmul(&x.reshape((n, c, h * w))?)?;
    Ok(blocks
        .reshape((n, o, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, o, 2 * h, 2 * w))?)
}

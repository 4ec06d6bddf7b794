//! Batch normalization with a fused forward/backward kernel.

use candle_core::{CpuStorage, CustomOp3, DType, Layout, Shape, Tensor, Var, WithDType};

use super::params::{ParamKind, ParamStore};
use crate::error::Result;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-channel affine normalization `gamma * (x - mean) * inv_std + beta`
/// of a contiguous `(N, C, H, W)` tensor. With `batch_stats` the mean and
/// variance are treated as functions of `x` in the backward pass.
#[derive(Debug, Clone)]
struct Normalize {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// `(N, C, spatial)` view of a rank-4 layout.
fn dims(l: &Layout) -> candle_core::Result<(usize, usize, usize)> {
    let (n, c, h, w) = l.shape().dims4()?;
    Ok((n, c, h * w))
}

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&T::cpu_storage_as_slice(s)?[a..b]),
        None => candle_core::bail!("batch norm expects contiguous inputs"),
    }
}

impl Normalize {
    fn forward<T: WithDType>(&self, x: &[T], gamma: &[T], beta: &[T], (n, c, s): (usize, usize, usize)) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        for i in 0..n {
            for ch in 0..c {
                let scale = gamma[ch].to_f64() * self.inv_std[ch];
                let shift = beta[ch].to_f64() - self.mean[ch] * scale;
                let base = (i * c + ch) * s;
                out.extend(x[base..base + s].iter().map(|v| T::from_f64(v.to_f64() * scale + shift)));
            }
        }
        out
    }

    /// `[dx..., dgamma..., dbeta...]` for upstream gradient `g`.
    fn backward<T: WithDType>(&self, x: &[T], gamma: &[T], g: &[T], (n, c, s): (usize, usize, usize)) -> Vec<T> {
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                let (m, r) = (self.mean[ch], self.inv_std[ch]);
                for (xv, gv) in x[base..base + s].iter().zip(&g[base..base + s]) {
                    let gv = gv.to_f64();
                    dbeta[ch] += gv;
                    dgamma[ch] += gv * (xv.to_f64() - m) * r;
                }
            }
        }
        let count = (n * s) as f64;
        let mut out = Vec::with_capacity(x.len() + 2 * c);
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                let (m, r) = (self.mean[ch], self.inv_std[ch]);
                let scale = gamma[ch].to_f64() * r;
                let (mean_g, mean_gx) = if self.batch_stats {
                    (dbeta[ch] / count, dgamma[ch] / count)
                } else {
                    (0.0, 0.0)
                };
                out.extend(x[base..base + s].iter().zip(&g[base..base + s]).map(|(xv, gv)| {
                    let xhat = (xv.to_f64() - m) * r;
                    T::from_f64(scale * (gv.to_f64() - mean_g - xhat * mean_gx))
                }));
            }
        }
        out.extend(dgamma.into_iter().chain(dbeta).map(T::from_f64));
        out
    }
}

impl CustomOp3 for Normalize {
    fn name(&self) -> &'static str {
        "batch-norm"
    }

    fn cpu_fwd(
        &self,
        x: &CpuStorage,
        lx: &Layout,
        gamma: &CpuStorage,
        lg: &Layout,
        beta: &CpuStorage,
        lb: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims(lx)?;
        let out = match x {
            CpuStorage::F32(_) => {
                CpuStorage::F32(self.forward::<f32>(slice(x, lx)?, slice(gamma, lg)?, slice(beta, lb)?, d))
            }
            CpuStorage::F64(_) => {
                CpuStorage::F64(self.forward::<f64>(slice(x, lx)?, slice(gamma, lg)?, slice(beta, lb)?, d))
            }
            _ => candle_core::bail!("batch norm supports f32 and f64 only"),
        };
        Ok((out, lx.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let c = gamma.elem_count();
        let packed = x.apply_op3_no_bwd(gamma, &grad.contiguous()?, &NormalizeGrad(self.clone()))?;
        let nx = x.elem_count();
        Ok((
            Some(packed.narrow(0, 0, nx)?.reshape(x.shape())?),
            Some(packed.narrow(0, nx, c)?),
            Some(packed.narrow(0, nx + c, c)?),
        ))
    }
}

struct NormalizeGrad(Normalize);

impl CustomOp3 for NormalizeGrad {
    fn name(&self) -> &'static str {
        "batch-norm-grad"
    }

    fn cpu_fwd(
        &self,
        x: &CpuStorage,
        lx: &Layout,
        gamma: &CpuStorage,
        lg: &Layout,
        g: &CpuStorage,
        lgr: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims(lx)?;
        let out = match x {
            CpuStorage::F32(_) => {
                CpuStorage::F32(self.0.backward::<f32>(slice(x, lx)?, slice(gamma, lg)?, slice(g, lgr)?, d))
            }
            CpuStorage::F64(_) => {
                CpuStorage::F64(self.0.backward::<f64>(slice(x, lx)?, slice(gamma, lg)?, slice(g, lgr)?, d))
            }
            _ => candle_core::bail!("batch norm supports f32 and f64 only"),
        };
        let len = lx.shape().elem_count() + 2 * d.1;
        Ok((out, Shape::from(len)))
    }
}

/// Per-channel mean and biased variance over (N, H, W).
fn channel_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = x.dims4()?;
    let s = h * w;
    let data = x.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let count = (n * s) as f64;
    let mut mean = vec![0.0; c];
    for (i, chunk) in data.chunks_exact(s).enumerate() {
        mean[i % c] += chunk.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for (i, chunk) in data.chunks_exact(s).enumerate() {
        let m = mean[i % c];
        var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    Ok((mean, var))
}

fn to_vec(v: &Var) -> Result<Vec<f64>> {
    Ok(v.as_tensor().to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Batch normalization over (N, H, W) with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.constant(format!("{name}.gamma"), &[channels], 1.0, ParamKind::Trainable)?;
        let beta = store.constant(format!("{name}.beta"), &[channels], 0.0, ParamKind::Trainable)?;
        let mean_name = format!("{name}.running_mean");
        let var_name = format!("{name}.running_var");
        store.constant(mean_name.clone(), &[channels], 0.0, ParamKind::Buffer)?;
        store.constant(var_name.clone(), &[channels], 1.0, ParamKind::Buffer)?;
        Ok(Self {
            gamma,
            beta,
            running_mean: store.var(&mean_name).expect("just inserted").clone(),
            running_var: store.var(&var_name).expect("just inserted").clone(),
        })
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    /// Training mode normalizes with batch statistics and updates the
    /// running averages (unbiased variance); inference uses the running averages.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let (mean, var) = channel_moments(x)?;
            let (n, _, h, w) = x.dims4()?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let blend = |old: Vec<f64>, new: &[f64], scale: f64| -> Vec<f64> {
                old.iter()
                    .zip(new)
                    .map(|(o, v)| o * (1.0 - BN_MOMENTUM) + v * scale * BN_MOMENTUM)
                    .collect()
            };
            let rm = blend(to_vec(&self.running_mean)?, &mean, 1.0);
            let rv = blend(to_vec(&self.running_var)?, &var, unbiased);
            let dtype = self.running_mean.dtype();
            let dev = x.device();
            self.running_mean.set(&Tensor::new(rm, dev)?.to_dtype(dtype)?)?;
            self.running_var.set(&Tensor::new(rv, dev)?.to_dtype(dtype)?)?;
            (mean, var)
        } else {
            (to_vec(&self.running_mean)?, to_vec(&self.running_var)?)
        };
        let op = Normalize {
            mean,
            inv_std: var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            batch_stats: train,
        };
        Ok(x.contiguous()?.apply_op3(&self.gamma, &self.beta, op)?)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    /// The same normalization written with broadcast tensor ops.
    fn reference(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
        let mean = x.mean_keepdim((0, 2, 3)).unwrap();
        let centered = x.broadcast_sub(&mean).unwrap();
        let var = centered.sqr().unwrap().mean_keepdim((0, 2, 3)).unwrap();
        centered
            .broadcast_div(&(var + BN_EPS).unwrap().sqrt().unwrap())
            .unwrap()
            .broadcast_mul(&gamma.reshape((1, (), 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&beta.reshape((1, (), 1, 1)).unwrap())
            .unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn train_mode_matches_broadcast_reference() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(0, DType::F64, &dev);
        let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
        let x = Var::randn(0f64, 2.0, (2, 3, 4, 5), &dev).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (2, 3, 4, 5), &dev).unwrap();
        store.var("bn.gamma").unwrap().set(&Tensor::new(&[0.5f64, -1.0, 2.0], &dev).unwrap()).unwrap();
        store.var("bn.beta").unwrap().set(&Tensor::new(&[0.1f64, 0.2, -0.3], &dev).unwrap()).unwrap();

        let ours = bn.forward(&x, true).unwrap();
        let theirs = reference(&x, &bn.gamma, &bn.beta);
        assert!(max_diff(&ours, &theirs) < 1e-12);

        let g1 = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (theirs * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for t in [x.as_tensor(), &bn.gamma, &bn.beta] {
            assert!(max_diff(g1.get(t).unwrap(), g2.get(t).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn train_normalizes_and_tracks() {
        let mut store = ParamStore::new(0, DType::F64, &Device::Cpu);
        let bn = BatchNorm::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu).unwrap().reshape((2, 2, 2, 2)).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let per_channel_mean = y.mean_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(per_channel_mean.iter().all(|m| m.abs() < 1e-12));
        let rm = to_vec(store.var("bn.running_mean").unwrap()).unwrap();
        // channel 0 holds {0,1,2,3,8,9,10,11}: mean 5.5
        assert!((rm[0] - 0.55).abs() < 1e-12);
        // biased variance 17.25, unbiased 17.25 * 8/7
        let rv = to_vec(store.var("bn.running_var").unwrap()).unwrap();
        assert!((rv[0] - (0.9 + 0.1 * 17.25 * 8.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn inference_uses_running_stats() {
        let mut store = ParamStore::new(0, DType::F64, &Device::Cpu);
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::new(&[3.0f64, -1.0], &Device::Cpu).unwrap().reshape((1, 1, 1, 2)).unwrap();
        let y = bn.forward(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y[0] - 3.0 * s).abs() < 1e-12 && (y[1] + s).abs() < 1e-12);
    }
}

//! Weighted cross-entropy + dice pixel loss, the shape-reconstruction
//! feature loss, and their weighted sum.
//!
//! Probability and target maps are `(N, m, H, W)`; rank-3 `(m, H, W)`
//! inputs are treated as a batch of one.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{conv2d, ParamStore};

/// Smoothing term in the log and the dice ratio.
pub const LOSS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Per-class weights of the pixel loss.
    pub alpha: Vec<f64>,
    /// Per-tap weights of the feature loss, shallowest tap first.
    pub lambda: Vec<f64>,
    /// Weight of the pixel loss.
    pub gamma: f64,
    /// Weight of the feature loss.
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: vec![0.01, 0.1, 0.27, 0.12, 0.5],
            lambda: vec![0.1, 0.2, 0.3, 0.4],
            gamma: 0.7,
            eta: 0.3,
        }
    }
}

impl LossWeights {
    /// Single-channel foreground mode.
    pub fn binary() -> Self {
        Self {
            alpha: vec![1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.alpha.len() != class_count {
            return Err(Error::Config(format!(
                "alpha has {} entries, expected {class_count}",
                self.alpha.len()
            )));
        }
        if self.lambda.len() != SR_TAPS {
            return Err(Error::Config(format!(
                "lambda has {} entries, expected {SR_TAPS}",
                self.lambda.len()
            )));
        }
        let all = self.alpha.iter().chain(&self.lambda).chain([&self.gamma, &self.eta]);
        if all.clone().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn as_batch(t: &Tensor) -> Result<Tensor> {
    match t.rank() {
        3 => Ok(t.unsqueeze(0)?),
        4 => Ok(t.clone()),
        r => Err(Error::Validation(format!("expected a rank 3 or 4 map, got rank {r}"))),
    }
}

fn check_pair(k: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
    if k.dims() != y.dims() {
        return Err(Error::Validation(format!(
            "prediction shape {:?} differs from target shape {:?}",
            k.dims(),
            y.dims()
        )));
    }
    Ok((as_batch(k)?, as_batch(y)?))
}

fn weight_row(w: &[f64], like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(w, like.device())?.to_dtype(like.dtype())?.unsqueeze(0)?)
}

/// Per-class weighted cross-entropy (mean over pixels) plus dice loss,
/// summed over classes and averaged over the batch.
pub fn weighted_pixel_loss(k: &Tensor, y: &Tensor, alpha: &[f64]) -> Result<Tensor> {
    let (k, y) = check_pair(k, y)?;
    let (_, m, h, w) = k.dims4()?;
    if alpha.len() != m {
        return Err(Error::Validation(format!("alpha has {} entries for {m} classes", alpha.len())));
    }
    let min = k.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if min < 0.0 {
        return Err(Error::Validation(format!("negative probability {min}")));
    }

    let pixels = (h * w) as f64;
    let ce = ((y.clone() * (k.clone() + LOSS_EPS)?.log()?)?.sum((2, 3))? / -pixels)?;
    let inter = (k.clone() * y.clone())?.sum((2, 3))?;
    let denom = ((k.sum((2, 3))? + y.sum((2, 3))?)? + LOSS_EPS)?;
    let dice = ((((inter * 2.0)? + LOSS_EPS)? / denom)?.affine(-1.0, 1.0))?;
    let per_class = (ce + dice)?;
    let weighted = per_class.broadcast_mul(&weight_row(alpha, &per_class)?)?.sum(1)?;
    Ok(weighted.mean(0)?)
}

/// Number of feature taps of [`SrNetwork`].
pub const SR_TAPS: usize = 4;

/// (out channels, kernel, stride, padding) per block.
const SR_BLOCKS: [(usize, usize, usize, usize); SR_TAPS] = [(8, 16, 2, 8), (16, 16, 2, 8), (32, 16, 2, 8), (32, 5, 1, 2)];

/// Frozen, randomly initialized feature extractor for the shape loss.
#[derive(Debug, Clone)]
pub struct SrNetwork {
    in_channels: usize,
    blocks: Vec<(Tensor, Tensor, usize, usize)>,
}

impl SrNetwork {
    pub fn new(in_channels: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut store = ParamStore::new(seed, dtype, device);
        let mut blocks = Vec::with_capacity(SR_TAPS);
        let mut c_in = in_channels;
        for (i, &(c_out, kernel, stride, padding)) in SR_BLOCKS.iter().enumerate() {
            let fan_in = (c_in * kernel * kernel) as f64;
            let weight = store.uniform(format!("sr{i}.weight"), &[c_out, c_in, kernel, kernel], (6.0 / fan_in).sqrt())?;
            let bias = store.uniform(format!("sr{i}.bias"), &[c_out], 1.0 / fan_in.sqrt())?;
            // detached copies are plain constants: gradients flow through, never into, them
            blocks.push((weight.detach(), bias.detach(), stride, padding));
            c_in = c_out;
        }
        Ok(Self { in_channels, blocks })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Outputs of the four conv + ReLU blocks, shallowest first.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = as_batch(x)?;
        if h.dim(1)? != self.in_channels {
            return Err(Error::Validation(format!(
                "feature network expects {} channels, got {}",
                self.in_channels,
                h.dim(1)?
            )));
        }
        let mut taps = Vec::with_capacity(SR_TAPS);
        for (weight, bias, stride, padding) in &self.blocks {
            h = conv2d(&h, weight, Some(bias), *stride, *padding)?.relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }
}

/// `sum_i lambda_i * mean |tap_i(K) - tap_i(Y)|`.
pub fn sr_loss(k: &Tensor, y: &Tensor, lambda: &[f64], net: &SrNetwork) -> Result<Tensor> {
    let (k, y) = check_pair(k, y)?;
    if lambda.len() != SR_TAPS {
        return Err(Error::Validation(format!("lambda has {} entries, expected {SR_TAPS}", lambda.len())));
    }
    let fk = net.features(&k)?;
    let fy = net.features(&y.detach())?;
    let mut total = Tensor::zeros((), k.dtype(), k.device())?;
    for ((a, b), &l) in fk.iter().zip(&fy).zip(lambda) {
        total = (total + ((a - b)?.abs()?.mean_all()? * l)?)?;
    }
    Ok(total)
}

/// `gamma * pixel loss + eta * shape loss`.
pub fn combined_loss(k: &Tensor, y: &Tensor, weights: &LossWeights, net: &SrNetwork) -> Result<Tensor> {
    let pixel = weighted_pixel_loss(k, y, &weights.alpha)?;
    if weights.eta == 0.0 {
        return Ok((pixel * weights.gamma)?);
    }
    let shape = sr_loss(k, y, &weights.lambda, net)?;
    Ok(((pixel * weights.gamma)? + (shape * weights.eta)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn single_pixel_two_classes() {
        let k = Tensor::new(&[[[0.5f64]], [[0.5]]], &Device::Cpu).unwrap();
        let y = Tensor::new(&[[[0.0f64]], [[1.0]]], &Device::Cpu).unwrap();
        let got = scalar(&weighted_pixel_loss(&k, &y, &[1.0, 1.0]).unwrap());
        let e = LOSS_EPS;
        let ce = -(0.5 + e).ln();
        let dice1 = 1.0 - (1.0 + e) / (1.5 + e);
        let dice0 = 1.0 - e / (0.5 + e);
        assert!((got - (ce + dice1 + dice0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = Tensor::new(&[[[-0.1f64]], [[1.1]]], &Device::Cpu).unwrap();
        let y = Tensor::new(&[[[0.0f64]], [[1.0]]], &Device::Cpu).unwrap();
        assert!(matches!(weighted_pixel_loss(&k, &y, &[1.0, 1.0]), Err(Error::Validation(_))));
        let z = Tensor::zeros((2, 2, 1), DType::F64, &Device::Cpu).unwrap();
        assert!(weighted_pixel_loss(&z, &y, &[1.0, 1.0]).is_err());
        assert!(weighted_pixel_loss(&y, &y, &[1.0]).is_err());
    }

    #[test]
    fn sr_tap_sizes_shrink() {
        let net = SrNetwork::new(5, 1, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((5, 150, 150), DType::F32, &Device::Cpu).unwrap();
        let sizes: Vec<usize> = net.features(&x).unwrap().iter().map(|t| t.dim(3).unwrap()).collect();
        assert_eq!(sizes, vec![76, 39, 20, 20]);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate(5).is_ok());
        assert!(LossWeights::default().validate(1).is_err());
        assert!(LossWeights::binary().validate(1).is_ok());
        let neg = LossWeights {
            gamma: -1.0,
            ..LossWeights::default()
        };
        assert!(neg.validate(5).is_err());
    }
}

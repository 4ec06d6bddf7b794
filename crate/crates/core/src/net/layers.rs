//! Minimal layers over candle tensors in NCHW layout.

use candle_core::{Tensor, D};

use super::conv::{conv2d, upconv2x2};
use super::norm::BatchNorm;
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
}

impl Conv2d {
    /// `kernel x kernel` convolution with fan-in scaled uniform init.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = store.uniform(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], (6.0 / fan_in).sqrt())?;
        let bias = store.uniform(format!("{name}.bias"), &[c_out], 1.0 / fan_in.sqrt())?;
        Ok(Self {
            weight,
            bias,
            padding,
            stride,
        })
    }

    /// Same-padded, stride 1.
    pub fn same(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::new(store, name, c_in, c_out, kernel, 1, kernel / 2)
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        kernel * kernel * c_in * c_out + c_out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

/// 2x2, stride-2 transposed convolution.
#[derive(Debug, Clone)]
pub struct UpConv2x2 {
    weight: Tensor,
    bias: Tensor,
}

impl UpConv2x2 {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let fan_in = (c_in * 4) as f64;
        let weight = store.uniform(format!("{name}.weight"), &[c_in, c_out, 2, 2], (6.0 / fan_in).sqrt())?;
        let bias = store.uniform(format!("{name}.bias"), &[c_out], 1.0 / fan_in.sqrt())?;
        Ok(Self { weight, bias })
    }

    pub fn param_count(c_in: usize, c_out: usize) -> usize {
        4 * c_in * c_out + c_out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = upconv2x2(x, &self.weight)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Convolution, batch normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv: Conv2d,
    norm: BatchNorm,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::same(store, &format!("{name}.conv"), c_in, c_out, kernel)?,
            norm: BatchNorm::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        Conv2d::param_count(c_in, c_out, kernel) + BatchNorm::param_count(c_out)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// Fully connected layer on `(N, features)` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[c_out, c_in], bound)?,
            bias: store.uniform(format!("{name}.bias"), &[c_out], bound)?,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize) -> usize {
        c_in * c_out + c_out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias.unsqueeze(0)?)?)
    }
}

/// Zero-pads the bottom/right edge so height and width are even.
pub fn pad_to_even(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut y = x.clone();
    if h % 2 == 1 {
        y = y.pad_with_zeros(D::Minus2, 0, 1)?;
    }
    if w % 2 == 1 {
        y = y.pad_with_zeros(D::Minus1, 0, 1)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    #[test]
    fn conv_shapes_and_counts() {
        let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
        let conv = Conv2d::same(&mut store, "c", 3, 8, 5).unwrap();
        let x = Tensor::zeros((2, 3, 11, 9), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 8, 11, 9]);
        assert_eq!(store.num_trainable(), Conv2d::param_count(3, 8, 5));

        let up = UpConv2x2::new(&mut store, "u", 8, 4).unwrap();
        let y = up.forward(&Tensor::zeros((1, 8, 5, 6), DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_eq!(y.dims(), &[1, 4, 10, 12]);
    }

    #[test]
    fn pad_to_even_only_pads_odd_axes() {
        let x = Tensor::ones((1, 1, 3, 4), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(pad_to_even(&x).unwrap().dims(), &[1, 1, 4, 4]);
    }
}

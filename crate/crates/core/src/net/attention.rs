//! Channel and spatial attention gates for skip connections.

use candle_core::Tensor;
use candle_nn::ops::sigmoid;

use super::layers::{Conv2d, Dense};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Per-channel spatial mean: `(N, C, H, W) -> (N, C)`.
pub fn gap(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean((2, 3))?)
}

/// Per-channel spatial max: `(N, C, H, W) -> (N, C)`.
fn global_max(x: &Tensor) -> Result<Tensor> {
    Ok(x.max(3)?.max(2)?)
}

#[derive(Debug, Clone)]
pub struct ChannelAttention {
    hidden: Dense,
    out: Dense,
}

impl ChannelAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = Self::hidden_width(channels, reduction);
        Ok(Self {
            hidden: Dense::new(store, &format!("{name}.fc1"), channels, hidden)?,
            out: Dense::new(store, &format!("{name}.fc2"), hidden, channels)?,
        })
    }

    fn hidden_width(channels: usize, reduction: usize) -> usize {
        (channels / reduction.max(1)).max(1)
    }

    pub fn param_count(channels: usize, reduction: usize) -> usize {
        let hidden = Self::hidden_width(channels, reduction);
        Dense::param_count(channels, hidden) + Dense::param_count(hidden, channels)
    }

    fn mlp(&self, v: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(v)?.relu()?)
    }

    /// Channel weights in (0, 1), shape `(N, C)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let summed = (self.mlp(&gap(x)?)? + self.mlp(&global_max(x)?)?)?;
        Ok(sigmoid(&summed)?)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialAttention {
    conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(store: &mut ParamStore, name: &str, kernel: usize) -> Result<Self> {
        if kernel < 3 || kernel % 2 == 0 {
            return Err(Error::Argument(format!(
                "spatial attention kernel must be odd and >= 3, got {kernel}"
            )));
        }
        Ok(Self {
            conv: Conv2d::same(store, &format!("{name}.conv"), 2, 1, kernel)?,
        })
    }

    pub fn param_count(kernel: usize) -> usize {
        Conv2d::param_count(2, 1, kernel)
    }

    /// Spatial weights in (0, 1), shape `(N, 1, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = Tensor::cat(&[x.mean_keepdim(1)?, x.max_keepdim(1)?], 1)?;
        Ok(sigmoid(&self.conv.forward(&pooled)?)?)
    }
}

/// Gates `x` by a `(N, 1, H, W)` map, broadcast over channels.
pub fn apply_spatial_gate(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(gate)?)
}

/// Gates `x` by an `(N, C)` vector, broadcast over space.
pub fn apply_channel_gate(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&gate.unsqueeze(2)?.unsqueeze(3)?)?)
}

/// Spatial attention followed by channel attention.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub spatial: SpatialAttention,
    pub channel: ChannelAttention,
}

impl Cbam {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            spatial: SpatialAttention::new(store, &format!("{name}.spatial"), kernel)?,
            channel: ChannelAttention::new(store, &format!("{name}.channel"), channels, reduction)?,
        })
    }

    pub fn param_count(channels: usize, reduction: usize, kernel: usize) -> usize {
        SpatialAttention::param_count(kernel) + ChannelAttention::param_count(channels, reduction)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f1 = apply_spatial_gate(x, &self.spatial.forward(x)?)?;
        apply_channel_gate(&f1, &self.channel.forward(&f1)?)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    #[test]
    fn gap_means_each_channel() {
        let x = Tensor::new(&[[[[1f32, 3.], [5., 7.]], [[2., 2.], [2., 2.]]]], &Device::Cpu).unwrap();
        assert_eq!(gap(&x).unwrap().to_vec2::<f32>().unwrap(), vec![vec![4.0, 2.0]]);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
        assert!(matches!(SpatialAttention::new(&mut store, "s", 6), Err(Error::Argument(_))));
        assert!(SpatialAttention::new(&mut store, "t", 1).is_err());
    }

    #[test]
    fn cbam_param_count_matches_store() {
        let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
        Cbam::new(&mut store, "c", 24, 16, 7).unwrap();
        assert_eq!(store.num_trainable(), Cbam::param_count(24, 16, 7));
        // 24/16 -> hidden 1; spatial 2*49+1
        assert_eq!(Cbam::param_count(24, 16, 7), (24 + 1) + (24 + 24) + 99);
    }
}

//! The segmentation network: MRFF encoder, CBAM-gated skips, hybrid
//! pooling and a transposed-convolution decoder.

mod attention;
mod checkpoint;
mod conv;
mod layers;
mod mrff;
mod norm;
mod params;

pub use attention::{apply_channel_gate, apply_spatial_gate, gap, Cbam, ChannelAttention, SpatialAttention};
pub use conv::{conv2d, upconv2x2};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{pad_to_even, Conv2d, ConvBlock, Dense, UpConv2x2};
pub use norm::BatchNorm;
pub use mrff::{hybrid_pool, Mrff, MrffParts, MrffVariant};
pub use params::{ParamKind, ParamStore};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::ImageSlice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels `m`; 1 means a single sigmoid channel.
    pub class_count: usize,
    pub input_size: usize,
    /// One width per encoder level; the network depth is `widths.len()`.
    pub widths: Vec<usize>,
    pub mrff_variant: MrffVariant,
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            class_count: 5,
            input_size: 150,
            widths: vec![64, 128, 256, 512, 1024],
            mrff_variant: MrffVariant::Mrff,
            cbam_reduction: 16,
            cbam_kernel: 7,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reduced widths (8..128) for CPU-scale experiments.
    pub fn tiny() -> Self {
        Self {
            input_size: 64,
            widths: vec![8, 16, 32, 64, 128],
            ..Self::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Config("class_count must be >= 1".into()));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be >= 1".into()));
        }
        if self.widths.is_empty() || self.widths[0] == 0 {
            return Err(Error::Config("widths must be non-empty and positive".into()));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("widths must be strictly increasing: {:?}", self.widths)));
        }
        if self.cbam_reduction == 0 {
            return Err(Error::Config("cbam_reduction must be >= 1".into()));
        }
        if self.cbam_kernel < 3 || self.cbam_kernel % 2 == 0 {
            return Err(Error::Config(format!("cbam_kernel must be odd and >= 3, got {}", self.cbam_kernel)));
        }
        Ok(())
    }
}

/// Trainable parameter count of `ModelConfig::default()`.
pub const DEFAULT_PARAMETER_COUNT: usize = 114_744_909;

/// Exact number of trainable scalars of the network described by `config`.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let w = &config.widths;
    let mut total = 0;
    let mut c_in = 1;
    for &c in w {
        total += Mrff::param_count(c_in, c, config.mrff_variant);
        c_in = c;
    }
    for l in 0..w.len().saturating_sub(1) {
        total += Cbam::param_count(w[l], config.cbam_reduction, config.cbam_kernel);
        total += UpConv2x2::param_count(w[l + 1], w[l]);
        total += ConvBlock::param_count(2 * w[l], w[l], 3) + ConvBlock::param_count(w[l], w[l], 3);
    }
    total + Conv2d::param_count(w[0], config.class_count, 1)
}

#[derive(Debug, Clone)]
struct UpStage {
    up: UpConv2x2,
    attention: Cbam,
    conv1: ConvBlock,
    conv2: ConvBlock,
}

impl UpStage {
    fn forward(&self, deep: &Tensor, skip: &Tensor, train: bool) -> Result<Tensor> {
        let (_, _, h, w) = skip.dims4()?;
        let up = self.up.forward(deep)?.narrow(2, 0, h)?.narrow(3, 0, w)?;
        let merged = Tensor::cat(&[&self.attention.forward(skip)?, &up], 1)?;
        self.conv2.forward(&self.conv1.forward(&merged, train)?, train)
    }
}

#[derive(Debug)]
pub struct MtraUnet {
    config: ModelConfig,
    store: ParamStore,
    encoder: Vec<Mrff>,
    decoder: Vec<UpStage>,
    head: Conv2d,
}

impl MtraUnet {
    pub fn new(config: ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, dtype, device);
        let w = config.widths.clone();

        let mut encoder = Vec::with_capacity(w.len());
        let mut c_in = 1;
        for (l, &c) in w.iter().enumerate() {
            encoder.push(Mrff::new(&mut store, &format!("enc{l}"), c_in, c, config.mrff_variant)?);
            c_in = c;
        }
        let mut decoder = Vec::with_capacity(w.len().saturating_sub(1));
        for l in 0..w.len() - 1 {
            let name = format!("dec{l}");
            decoder.push(UpStage {
                up: UpConv2x2::new(&mut store, &format!("{name}.up"), w[l + 1], w[l])?,
                attention: Cbam::new(
                    &mut store,
                    &format!("{name}.cbam"),
                    w[l],
                    config.cbam_reduction,
                    config.cbam_kernel,
                )?,
                conv1: ConvBlock::new(&mut store, &format!("{name}.conv1"), 2 * w[l], w[l], 3)?,
                conv2: ConvBlock::new(&mut store, &format!("{name}.conv2"), w[l], w[l], 3)?,
            });
        }
        let head = Conv2d::same(&mut store, "head", w[0], config.class_count, 1)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Logits `(N, m, H, W)` for a batch `(N, 1, H, W)`.
    ///
    /// With `train` set, batch normalization uses batch statistics and
    /// updates its running averages.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.config.input_size;
        if c != 1 || h != s || w != s {
            return Err(Error::Argument(format!(
                "expected input (N, 1, {s}, {s}), got {:?}",
                x.dims()
            )));
        }
        let mut skips = Vec::with_capacity(self.decoder.len());
        let mut feat = x.clone();
        for (l, block) in self.encoder.iter().enumerate() {
            feat = block.forward(&feat, train)?;
            if l + 1 < self.encoder.len() {
                skips.push(feat.clone());
                feat = hybrid_pool(&pad_to_even(&feat)?)?;
            }
        }
        for (stage, skip) in self.decoder.iter().zip(&skips).rev() {
            feat = stage.forward(&feat, skip, train)?;
        }
        self.head.forward(&feat)
    }

    /// Inference-mode logits `(m, H, W)` for one slice.
    pub fn forward_slice(&self, img: &ImageSlice) -> Result<Tensor> {
        let x = img.to_tensor(self.dtype(), self.device())?.unsqueeze(0)?;
        Ok(self.forward(&x, false)?.squeeze(0)?)
    }
}

/// Class probabilities along `dim`: softmax for several channels, sigmoid for one.
pub fn probabilities(logits: &Tensor, dim: usize) -> Result<Tensor> {
    if logits.dim(dim)? == 1 {
        Ok(candle_nn::ops::sigmoid(logits)?)
    } else {
        Ok(candle_nn::ops::softmax(logits, dim)?)
    }
}

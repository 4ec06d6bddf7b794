//! Multi-resolution feature fusion encoder block and hybrid pooling.

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use candle_nn::ops::sigmoid;
use serde::{Deserialize, Serialize};

use super::attention::{apply_channel_gate, gap};
use super::layers::{ConvBlock, Dense};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MrffVariant {
    /// `Z = B * D(A) + E`.
    #[default]
    Mrff,
    /// No gate: `Z = B + E`.
    Mrff1,
    /// Gate computed from the fused map: `Z = B * D(B) + E`.
    Mrff2,
}

impl fmt::Display for MrffVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MrffVariant::Mrff => "mrff",
            MrffVariant::Mrff1 => "mrff1",
            MrffVariant::Mrff2 => "mrff2",
        })
    }
}

impl FromStr for MrffVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrff" => Ok(MrffVariant::Mrff),
            "mrff1" => Ok(MrffVariant::Mrff1),
            "mrff2" => Ok(MrffVariant::Mrff2),
            _ => Err(Error::Config(format!("unknown mrff variant {s:?} (expected mrff, mrff1, mrff2)"))),
        }
    }
}

const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone)]
pub struct Mrff {
    variant: MrffVariant,
    branches: Vec<ConvBlock>,
    fuse: ConvBlock,
    gate: Option<Dense>,
    residual: ConvBlock,
}

/// Intermediate maps of one MRFF evaluation.
#[derive(Debug, Clone)]
pub struct MrffParts {
    /// Fused multi-kernel features.
    pub b: Tensor,
    /// Channel gate in (0, 1), `(N, c_out)`; absent for the ungated variant.
    pub d: Option<Tensor>,
    /// Residual conv path.
    pub e: Tensor,
}

impl Mrff {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, variant: MrffVariant) -> Result<Self> {
        let branches = BRANCH_KERNELS
            .iter()
            .map(|&k| ConvBlock::new(store, &format!("{name}.branch{k}"), c_in, c_out, k))
            .collect::<Result<Vec<_>>>()?;
        let fuse = ConvBlock::new(store, &format!("{name}.fuse"), 3 * c_out, c_out, 3)?;
        let gate = match variant {
            MrffVariant::Mrff => Some(Dense::new(store, &format!("{name}.gate"), c_in, c_out)?),
            MrffVariant::Mrff1 => None,
            MrffVariant::Mrff2 => Some(Dense::new(store, &format!("{name}.gate"), c_out, c_out)?),
        };
        let residual = ConvBlock::new(store, &format!("{name}.residual"), c_in, c_out, 3)?;
        Ok(Self {
            variant,
            branches,
            fuse,
            gate,
            residual,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize, variant: MrffVariant) -> usize {
        let branches: usize = BRANCH_KERNELS.iter().map(|&k| ConvBlock::param_count(c_in, c_out, k)).sum();
        let gate = match variant {
            MrffVariant::Mrff => Dense::param_count(c_in, c_out),
            MrffVariant::Mrff1 => 0,
            MrffVariant::Mrff2 => Dense::param_count(c_out, c_out),
        };
        branches + ConvBlock::param_count(3 * c_out, c_out, 3) + gate + ConvBlock::param_count(c_in, c_out, 3)
    }

    pub fn variant(&self) -> MrffVariant {
        self.variant
    }

    pub fn parts(&self, a: &Tensor, train: bool) -> Result<MrffParts> {
        let taps = self
            .branches
            .iter()
            .map(|b| b.forward(a, train))
            .collect::<Result<Vec<_>>>()?;
        let b = self.fuse.forward(&Tensor::cat(&taps, 1)?, train)?;
        let d = match (&self.gate, self.variant) {
            (None, _) => None,
            (Some(g), MrffVariant::Mrff2) => Some(sigmoid(&g.forward(&gap(&b)?)?)?),
            (Some(g), _) => Some(sigmoid(&g.forward(&gap(a)?)?)?),
        };
        let e = self.residual.forward(a, train)?;
        Ok(MrffParts { b, d, e })
    }

    pub fn forward(&self, a: &Tensor, train: bool) -> Result<Tensor> {
        let MrffParts { b, d, e } = self.parts(a, train)?;
        let gated = match d {
            Some(d) => apply_channel_gate(&b, &d)?,
            None => b,
        };
        Ok((gated + e)?)
    }
}

/// Mean of 2x2 stride-2 max pooling and average pooling.
pub fn hybrid_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 == 1 || w % 2 == 1 {
        return Err(Error::Argument(format!("hybrid_pool needs even height and width, got {h}x{w}")));
    }
    // each 2x2 window on a trailing axis of 4; candle's pooling backward
    // does not route gradients correctly
    let windows = x
        .reshape((n, c, h / 2, 2, w / 2, 2))?
        .permute((0, 1, 2, 4, 3, 5))?
        .contiguous()?
        .reshape((n, c, h / 2, w / 2, 4))?;
    Ok(((windows.max(4)? + windows.mean(4)?)? * 0.5)?)
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    #[test]
    fn hybrid_pool_block() {
        let x = Tensor::new(&[[[[1f32, 2.], [3., 4.]]]], &Device::Cpu).unwrap();
        let y = hybrid_pool(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![3.25]);
        let odd = Tensor::zeros((1, 1, 3, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(hybrid_pool(&odd), Err(Error::Argument(_))));
    }

    #[test]
    fn param_count_matches_store_for_each_variant() {
        for v in [MrffVariant::Mrff, MrffVariant::Mrff1, MrffVariant::Mrff2] {
            let mut store = ParamStore::new(0, DType::F32, &Device::Cpu);
            Mrff::new(&mut store, "m", 3, 5, v).unwrap();
            assert_eq!(store.num_trainable(), Mrff::param_count(3, 5, v), "{v}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [MrffVariant::Mrff, MrffVariant::Mrff1, MrffVariant::Mrff2] {
            assert_eq!(v.to_string().parse::<MrffVariant>().unwrap(), v);
        }
        assert!("mrff3".parse::<MrffVariant>().is_err());
    }
}

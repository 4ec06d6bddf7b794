use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Whether a stored tensor is optimized or carried as state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and other non-optimized state.
    Buffer,
}

/// Named parameters with seeded initialization.
///
/// Initialization draws from one ChaCha stream in construction order, so
/// the same seed and architecture always produce the same values.
#[derive(Debug)]
pub struct ParamStore {
    entries: BTreeMap<String, (Var, ParamKind)>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, data: Vec<f64>, shape: &[usize], kind: ParamKind) -> Result<Tensor> {
        if self.entries.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.entries.insert(name, (var, kind));
        Ok(handle)
    }

    /// Trainable tensor drawn from `U(-bound, bound)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, data, shape, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64, kind: ParamKind) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape, kind)
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|(v, _)| v)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .values()
            .filter(|(_, k)| *k == ParamKind::Trainable)
            .map(|(v, _)| v.clone())
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|(_, k)| *k == ParamKind::Trainable)
            .map(|(v, _)| v.elem_count())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var, ParamKind)> {
        self.entries.iter().map(|(n, (v, k))| (n.as_str(), v, *k))
    }

    /// Sets every trainable tensor to zero (buffers untouched).
    pub fn zero_trainable(&self) -> Result<()> {
        for (var, kind) in self.entries.values() {
            if *kind == ParamKind::Trainable {
                var.set(&var.zeros_like()?)?;
            }
        }
        Ok(())
    }

    /// Detached copies of every stored tensor.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(n, (v, _))| Ok((n.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites stored tensors by name; every name must exist with a matching shape.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, value) in values {
            let var = self
                .var(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if var.dims() != value.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match model shape {:?}",
                    value.dims(),
                    var.dims()
                )));
            }
            var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }
}

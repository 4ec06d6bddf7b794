use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use crate::data::SlicePair;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, SrNetwork};
use crate::net::{load_checkpoint, probabilities, save_checkpoint, MtraUnet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean combined loss over the epoch's training batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without validation data).
    pub model: MtraUnet,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Input `(B, 1, H, W)` and target `(B, m, H, W)` tensors for a batch.
pub fn batch_tensors(slices: &[&SlicePair], mode: Mode, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Argument("empty batch".into()))?;
    let (h, w) = (first.image.height(), first.image.width());
    let mut pixels = Vec::with_capacity(slices.len() * h * w);
    let mut targets = Vec::with_capacity(slices.len());
    for s in slices {
        pixels.extend_from_slice(s.image.pixels());
        targets.push(mode.target(&s.mask, dtype, device)?);
    }
    let x = Tensor::from_vec(pixels, (slices.len(), 1, h, w), device)?.to_dtype(dtype)?;
    Ok((x, Tensor::stack(&targets, 0)?))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Mean inference-mode loss over `slices`, weighted by batch size.
pub fn evaluate_loss(model: &MtraUnet, sr: &SrNetwork, cfg: &RunConfig, slices: &[SlicePair]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in slices.chunks(cfg.batch_size) {
        let refs: Vec<&SlicePair> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs, cfg.mode, model.dtype(), model.device())?;
        let k = probabilities(&model.forward(&x, false)?, 1)?;
        total += scalar(&combined_loss(&k, &y, &cfg.weights, sr)?)? * chunk.len() as f64;
    }
    Ok(total / slices.len() as f64)
}

/// Optimizes a freshly initialized network on `train` with Adam.
///
/// Batches are reshuffled every epoch from a ChaCha stream seeded by the
/// run seed. When `val` is non-empty the parameters of the epoch with the
/// lowest validation loss are kept.
pub fn train(cfg: &RunConfig, train: &[SlicePair], val: &[SlicePair]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("no training slices".into()));
    }
    let size = cfg.model.input_size;
    if let Some(s) = train.iter().chain(val).find(|s| s.image.height() != size || s.image.width() != size) {
        return Err(Error::Validation(format!(
            "slice {} is {}x{}, model input is {size}x{size}",
            s.id,
            s.image.height(),
            s.image.width()
        )));
    }

    let device = Device::Cpu;
    let model = MtraUnet::new(cfg.model.clone(), DType::F32, &device)?;
    let sr = SrNetwork::new(cfg.mode.class_count(), cfg.sr_seed, DType::F32, &device)?;
    let mut opt = AdamW::new(
        model.params().trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, _)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&SlicePair> = idx.iter().map(|&i| &train[i]).collect();
            let (x, y) = batch_tensors(&batch, cfg.mode, model.dtype(), &device)?;
            let k = probabilities(&model.forward(&x, true)?, 1)?;
            let loss = combined_loss(&k, &y, &cfg.weights, &sr)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            opt.backward_step(&loss)?;
            total += value * batch.len() as f64;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, &sr, cfg, val)?)
        };
        let log = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.6}{} ({:.1}s)",
            cfg.epochs,
            log.train_loss,
            val_loss.map_or(String::new(), |v| format!(", val loss {v:.6}")),
            log.seconds
        );
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params().snapshot()?));
            }
        }
        history.push(log);
    }

    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.params().restore(&snapshot)?;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Saves `model` with the run configuration that produced it.
pub fn save_trained(path: &Path, model: &MtraUnet, cfg: &RunConfig) -> Result<()> {
    let run = serde_json::to_value(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    save_checkpoint(path, model, &serde_json::json!({ "run_config": run }))
}

/// Loads a checkpoint written by [`save_trained`].
pub fn load_trained(path: &Path) -> Result<(MtraUnet, RunConfig)> {
    let (model, meta) = load_checkpoint(path, &Device::Cpu)?;
    let run = meta
        .get("run_config")
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no run configuration in metadata", path.display())))?;
    let cfg: RunConfig = serde_json::from_value(run).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if cfg.model != *model.config() {
        return Err(Error::Checkpoint(format!(
            "{}: stored run configuration disagrees with the network",
            path.display()
        )));
    }
    Ok((model, cfg))
}

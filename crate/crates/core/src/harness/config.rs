//! Run configuration: presets plus flat `key=value` files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{decode_labels, one_hot, LabelMask, MULTICLASS_COUNT};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::net::{ModelConfig, MrffVariant};
use crate::roi::{ThresholdConfig, Tissue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Multiclass,
    BinaryFc,
    BinaryTc,
}

impl Mode {
    /// Network output channels.
    pub fn class_count(self) -> usize {
        match self {
            Mode::Multiclass => MULTICLASS_COUNT as usize,
            Mode::BinaryFc | Mode::BinaryTc => 1,
        }
    }

    /// The single segmented tissue of a binary mode.
    pub fn target_tissue(self) -> Option<Tissue> {
        match self {
            Mode::Multiclass => None,
            Mode::BinaryFc => Some(Tissue::FemoralCartilage),
            Mode::BinaryTc => Some(Tissue::TibialCartilage),
        }
    }

    /// Tissues scored during evaluation.
    pub fn tissues(self) -> Vec<Tissue> {
        match self.target_tissue() {
            Some(t) => vec![t],
            None => Tissue::ALL.to_vec(),
        }
    }

    pub fn default_thresholds(self) -> ThresholdConfig {
        match self {
            Mode::Multiclass => ThresholdConfig::multiclass(),
            Mode::BinaryFc => ThresholdConfig::binary_fc(),
            Mode::BinaryTc => ThresholdConfig::binary_tc(),
        }
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Mode::Multiclass => LossWeights::default(),
            _ => LossWeights::binary(),
        }
    }

    /// Training target `(m, H, W)` for a 5-class ground-truth mask.
    pub fn target(self, mask: &LabelMask, dtype: DType, device: &Device) -> Result<Tensor> {
        match self.target_tissue() {
            None => one_hot(mask, dtype, device),
            Some(t) => {
                let fg: Vec<f32> = mask.indicator(t.code()).iter().map(|&b| b as u8 as f32).collect();
                Ok(Tensor::from_vec(fg, (1, mask.height(), mask.width()), device)?.to_dtype(dtype)?)
            }
        }
    }

    /// Decodes network scores `(m, H, W)` into a 5-class label mask.
    pub fn decode(self, scores: &Tensor) -> Result<LabelMask> {
        let decoded = decode_labels(scores)?;
        match self.target_tissue() {
            None => Ok(decoded),
            Some(t) => decoded.recode_foreground(t.code(), MULTICLASS_COUNT),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Multiclass => "multiclass",
            Mode::BinaryFc => "binary-fc",
            Mode::BinaryTc => "binary-tc",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Mode::Multiclass),
            "binary-fc" => Ok(Mode::BinaryFc),
            "binary-tc" => Ok(Mode::BinaryTc),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected multiclass, binary-fc, binary-tc)"
            ))),
        }
    }
}

/// Number of subjects per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Default,
    Tiny,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected default or tiny)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub thresholds: ThresholdConfig,
    pub model: ModelConfig,
    /// Slices dropped from each end of every training/validation volume.
    pub strip_edges: usize,
    pub split: SplitSizes,
    /// Seed of the frozen feature network of the shape loss.
    pub sr_seed: u64,
}

impl RunConfig {
    pub fn preset(preset: Preset, mode: Mode) -> Self {
        let mut model = match preset {
            Preset::Default => ModelConfig::default(),
            Preset::Tiny => ModelConfig::tiny(),
        };
        model.class_count = mode.class_count();
        let (epochs, batch_size, strip_edges, split) = match preset {
            Preset::Default => (
                100,
                if mode == Mode::Multiclass { 150 } else { 64 },
                20,
                SplitSizes {
                    train: 218,
                    val: 55,
                    test: 108,
                },
            ),
            Preset::Tiny => (
                3,
                8,
                4,
                SplitSizes {
                    train: 2,
                    val: 1,
                    test: 1,
                },
            ),
        };
        Self {
            mode,
            epochs,
            batch_size,
            learning_rate: 1e-3,
            weights: mode.default_weights(),
            thresholds: mode.default_thresholds(),
            model,
            strip_edges,
            split,
            sr_seed: 1,
        }
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    /// Resolves `source` (a preset name or a config file path) and applies
    /// `overrides` after the file's own entries.
    ///
    /// A file may name its base with `preset=default|tiny` (default when
    /// absent). The mode is applied first so mode-dependent defaults
    /// (class count, alpha, thresholds) never clobber explicit keys.
    pub fn resolve(source: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match source.parse::<Preset>() {
            Ok(p) => vec![("preset".to_string(), format!("{p:?}").to_lowercase())],
            Err(_) => parse_pairs(&read_config(Path::new(source))?)?,
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let preset = last("preset").map(str::parse).transpose()?.unwrap_or(Preset::Default);
        let mode = last("mode").map(str::parse).transpose()?.unwrap_or_default();
        let mut cfg = Self::preset(preset, mode);
        for (key, value) in pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::Config(format!("{key}={value}: {e}"));
        match key {
            "preset" | "mode" => {}
            "epochs" => self.epochs = num(value).map_err(bad)?,
            "batch_size" => self.batch_size = num(value).map_err(bad)?,
            "learning_rate" => self.learning_rate = num(value).map_err(bad)?,
            "alpha" => self.weights.alpha = list(value).map_err(bad)?,
            "lambda" => self.weights.lambda = list(value).map_err(bad)?,
            "gamma" => self.weights.gamma = num(value).map_err(bad)?,
            "eta" => self.weights.eta = num(value).map_err(bad)?,
            "seed" => self.model.seed = num(value).map_err(bad)?,
            "sr_seed" => self.sr_seed = num(value).map_err(bad)?,
            "widths" => self.model.widths = list(value).map_err(bad)?,
            "input_size" => self.model.input_size = num(value).map_err(bad)?,
            "mrff" => self.model.mrff_variant = value.parse::<MrffVariant>()?,
            "cbam_reduction" => self.model.cbam_reduction = num(value).map_err(bad)?,
            "cbam_kernel" => self.model.cbam_kernel = num(value).map_err(bad)?,
            "strip_edges" => self.strip_edges = num(value).map_err(bad)?,
            "split.train" => self.split.train = num(value).map_err(bad)?,
            "split.val" => self.split.val = num(value).map_err(bad)?,
            "split.test" => self.split.test = num(value).map_err(bad)?,
            _ => match key.strip_prefix("roi.") {
                Some(t) => {
                    let tissue: Tissue = t.parse().map_err(|_| bad(format!("unknown tissue {t:?}")))?;
                    let threshold = match value {
                        "none" | "off" => None,
                        v => Some(num(v).map_err(bad)?),
                    };
                    self.thresholds.set(tissue, threshold);
                }
                None => return Err(Error::Config(format!("unknown config key {key:?}"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.model.class_count != self.mode.class_count() {
            return Err(Error::Config(format!(
                "mode {} needs {} output channels",
                self.mode,
                self.mode.class_count()
            )));
        }
        self.model.validate()?;
        self.weights.validate(self.model.class_count)
    }

    /// Flat `key=value` rendering accepted by [`RunConfig::resolve`].
    pub fn to_pairs_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut lines = vec![
            format!("mode={}", self.mode),
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("learning_rate={}", self.learning_rate),
            format!("alpha={}", join(&self.weights.alpha)),
            format!("lambda={}", join(&self.weights.lambda)),
            format!("gamma={}", self.weights.gamma),
            format!("eta={}", self.weights.eta),
        ];
        for t in [Tissue::FemoralBone, Tissue::TibialBone, Tissue::FemoralCartilage, Tissue::TibialCartilage] {
            let v = self.thresholds.get(t).map_or("none".to_string(), |v| v.to_string());
            lines.push(format!("roi.{}={v}", t.abbrev().to_lowercase()));
        }
        let widths: Vec<String> = self.model.widths.iter().map(usize::to_string).collect();
        lines.extend([
            format!("widths={}", widths.join(",")),
            format!("seed={}", self.model.seed),
            format!("input_size={}", self.model.input_size),
            format!("mrff={}", self.model.mrff_variant),
            format!("cbam_reduction={}", self.model.cbam_reduction),
            format!("cbam_kernel={}", self.model.cbam_kernel),
            format!("strip_edges={}", self.strip_edges),
            format!("split.train={}", self.split.train),
            format!("split.val={}", self.split.val),
            format!("split.test={}", self.split.test),
            format!("sr_seed={}", self.sr_seed),
        ]);
        lines.join("\n") + "\n"
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| e.to_string())
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',').map(num).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_pairs(text).unwrap()
    }

    #[test]
    fn presets() {
        let d = RunConfig::resolve("default", &[]).unwrap();
        assert_eq!((d.epochs, d.batch_size, d.learning_rate), (100, 150, 1e-3));
        assert_eq!(d.model.widths, vec![64, 128, 256, 512, 1024]);
        let t = RunConfig::resolve("tiny", &[]).unwrap();
        assert_eq!(t.model.widths, vec![8, 16, 32, 64, 128]);
    }

    #[test]
    fn mode_defaults_then_explicit_keys() {
        let cfg = RunConfig::from_pairs(&pairs("alpha=2\nmode=binary-fc\n")).unwrap();
        assert_eq!(cfg.model.class_count, 1);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.weights.alpha, vec![2.0]);
        assert_eq!(cfg.thresholds, ThresholdConfig::binary_fc());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_pairs(&pairs("epochs=0")).is_err());
        assert!(RunConfig::from_pairs(&pairs("bogus=1")).is_err());
        assert!(RunConfig::from_pairs(&pairs("alpha=1,2")).is_err());
        assert!(RunConfig::from_pairs(&pairs("learning_rate=-1")).is_err());
        assert!(parse_pairs("novalue").is_err());
    }

    #[test]
    fn rendering_round_trips() {
        let cfg = RunConfig::from_pairs(&pairs("preset=tiny\nroi.fb=none\ngamma=0.5\neta=0.5\nmrff=mrff2")).unwrap();
        let again = RunConfig::from_pairs(&pairs(&cfg.to_pairs_text())).unwrap();
        assert_eq!(cfg, again);
    }
}

//! Pixel/shape loss balance sweep on a fixed training set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::evaluate::slice_dsc_by_tissue;
use super::report::NA;
use super::train::train;
use crate::data::SlicePair;
use crate::error::{Error, Result};
use crate::roi::Tissue;

/// The (gamma, eta) pairs of the standard sweep.
pub const SWEEP_WEIGHTS: [(f64, f64); 3] = [(0.1, 0.9), (0.5, 0.5), (0.9, 0.1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub eta: f64,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training-set DSC per tissue present.
    pub dsc: Vec<(Tissue, f64)>,
}

impl SweepRow {
    pub fn average_dsc(&self) -> Option<f64> {
        (!self.dsc.is_empty()).then(|| self.dsc.iter().map(|(_, d)| d).sum::<f64>() / self.dsc.len() as f64)
    }
}

/// Trains one model per `(gamma, eta)` pair on `slices` and scores it on the same slices.
pub fn run_sweep(base: &RunConfig, slices: &[SlicePair], pairs: &[(f64, f64)]) -> Result<Vec<SweepRow>> {
    pairs
        .iter()
        .map(|&(gamma, eta)| {
            let mut cfg = base.clone();
            cfg.weights.gamma = gamma;
            cfg.weights.eta = eta;
            log::info!("sweep: gamma={gamma} eta={eta}");
            let out = train(&cfg, slices, &[])?;
            Ok(SweepRow {
                gamma,
                eta,
                epochs: cfg.epochs,
                initial_loss: out.history.first().map_or(f64::NAN, |h| h.train_loss),
                final_loss: out.history.last().map_or(f64::NAN, |h| h.train_loss),
                dsc: slice_dsc_by_tissue(&out.model, cfg.mode, slices)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let fail = |e: csv::Error| Error::io(format!("writing {}", path.display()), std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    let mut header = vec!["gamma", "eta", "epochs", "initial_loss", "final_loss"];
    header.extend(Tissue::ALL.iter().map(|t| match t {
        Tissue::FemoralCartilage => "dsc_fc",
        Tissue::TibialCartilage => "dsc_tc",
        Tissue::FemoralBone => "dsc_fb",
        Tissue::TibialBone => "dsc_tb",
    }));
    header.push("average_dsc");
    w.write_record(&header).map_err(fail)?;
    for r in rows {
        let mut rec = vec![
            r.gamma.to_string(),
            r.eta.to_string(),
            r.epochs.to_string(),
            r.initial_loss.to_string(),
            r.final_loss.to_string(),
        ];
        for t in Tissue::ALL {
            let v = r.dsc.iter().find(|(x, _)| *x == t).map(|(_, d)| d.to_string());
            rec.push(v.unwrap_or_else(|| NA.to_string()));
        }
        rec.push(r.average_dsc().map_or(NA.to_string(), |v| v.to_string()));
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

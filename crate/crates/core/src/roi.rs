//! Critical-slice selection by minimum ground-truth pixel counts.
//!
//! A slice is critical when every participating tissue reaches its
//! threshold. Selection only ever looks at ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabelMask;
use crate::error::Error;

/// The four segmented tissues with their label codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tissue {
    FemoralBone,
    FemoralCartilage,
    TibialBone,
    TibialCartilage,
}

impl Tissue {
    /// Report order: cartilages first, then bones.
    pub const ALL: [Tissue; 4] = [
        Tissue::FemoralCartilage,
        Tissue::TibialCartilage,
        Tissue::FemoralBone,
        Tissue::TibialBone,
    ];

    pub fn code(self) -> u8 {
        match self {
            Tissue::FemoralBone => 1,
            Tissue::FemoralCartilage => 2,
            Tissue::TibialBone => 3,
            Tissue::TibialCartilage => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Tissue> {
        match code {
            1 => Some(Tissue::FemoralBone),
            2 => Some(Tissue::FemoralCartilage),
            3 => Some(Tissue::TibialBone),
            4 => Some(Tissue::TibialCartilage),
            _ => None,
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Tissue::FemoralBone => "FB",
            Tissue::FemoralCartilage => "FC",
            Tissue::TibialBone => "TB",
            Tissue::TibialCartilage => "TC",
        }
    }
}

impl fmt::Display for Tissue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for Tissue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "FB" => Ok(Tissue::FemoralBone),
            "FC" => Ok(Tissue::FemoralCartilage),
            "TB" => Ok(Tissue::TibialBone),
            "TC" => Ok(Tissue::TibialCartilage),
            _ => Err(Error::Validation(format!("unknown tissue {s:?}"))),
        }
    }
}

/// Per-tissue pixel counts of one ground-truth mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TissueCounts {
    pub fb: usize,
    pub fc: usize,
    pub tb: usize,
    pub tc: usize,
}

impl TissueCounts {
    pub fn get(&self, tissue: Tissue) -> usize {
        match tissue {
            Tissue::FemoralBone => self.fb,
            Tissue::FemoralCartilage => self.fc,
            Tissue::TibialBone => self.tb,
            Tissue::TibialCartilage => self.tc,
        }
    }
}

/// Minimum pixel counts. `None` means the tissue does not participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub fb: Option<usize>,
    pub fc: Option<usize>,
    pub tb: Option<usize>,
    pub tc: Option<usize>,
}

impl ThresholdConfig {
    pub fn multiclass() -> Self {
        Self {
            fb: Some(300),
            tb: Some(300),
            fc: Some(100),
            tc: Some(100),
        }
    }

    /// Binary femoral-cartilage mode: only FC participates.
    pub fn binary_fc() -> Self {
        Self {
            fb: None,
            tb: None,
            fc: Some(280),
            tc: None,
        }
    }

    /// Binary tibial-cartilage mode: only TC participates.
    pub fn binary_tc() -> Self {
        Self {
            fb: None,
            tb: None,
            fc: None,
            tc: Some(100),
        }
    }

    pub fn get(&self, tissue: Tissue) -> Option<usize> {
        match tissue {
            Tissue::FemoralBone => self.fb,
            Tissue::FemoralCartilage => self.fc,
            Tissue::TibialBone => self.tb,
            Tissue::TibialCartilage => self.tc,
        }
    }

    pub fn set(&mut self, tissue: Tissue, value: Option<usize>) {
        match tissue {
            Tissue::FemoralBone => self.fb = value,
            Tissue::FemoralCartilage => self.fc = value,
            Tissue::TibialBone => self.tb = value,
            Tissue::TibialCartilage => self.tc = value,
        }
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::multiclass()
    }
}

/// Exact per-label counts of a 5-class mask.
pub fn tissue_pixel_counts(mask: &LabelMask) -> TissueCounts {
    let mut hist = [0usize; 256];
    for &l in mask.labels() {
        hist[l as usize] += 1;
    }
    TissueCounts {
        fb: hist[Tissue::FemoralBone.code() as usize],
        fc: hist[Tissue::FemoralCartilage.code() as usize],
        tb: hist[Tissue::TibialBone.code() as usize],
        tc: hist[Tissue::TibialCartilage.code() as usize],
    }
}

/// All-of rule: every participating tissue must reach its threshold.
pub fn is_critical_slice(counts: &TissueCounts, thr: &ThresholdConfig) -> bool {
    Tissue::ALL
        .iter()
        .all(|&t| thr.get(t).is_none_or(|min| counts.get(t) >= min))
}

/// Ascending indices (positions within `masks`) of critical slices.
pub fn select_critical_slices<'a, I>(masks: I, thr: &ThresholdConfig) -> Vec<usize>
where
    I: IntoIterator<Item = &'a LabelMask>,
{
    masks
        .into_iter()
        .enumerate()
        .filter(|(_, m)| is_critical_slice(&tissue_pixel_counts(m), thr))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(fb: usize, tb: usize, fc: usize, tc: usize) -> TissueCounts {
        TissueCounts { fb, fc, tb, tc }
    }

    #[test]
    fn counts_of_simple_masks() {
        assert_eq!(tissue_pixel_counts(&LabelMask::zeros(150, 150, 5)), TissueCounts::default());
        let full = LabelMask::new(vec![1; 150 * 150], 150, 150, 5).unwrap();
        assert_eq!(tissue_pixel_counts(&full).fb, 22500);

        let mut labels = vec![0u8; 100];
        for code in 1..=4u8 {
            for k in 0..10 {
                labels[(code as usize - 1) * 10 + k] = code;
            }
        }
        let mask = LabelMask::new(labels, 10, 10, 5).unwrap();
        assert_eq!(tissue_pixel_counts(&mask), counts(10, 10, 10, 10));
    }

    #[test]
    fn threshold_examples() {
        let thr = ThresholdConfig::multiclass();
        assert!(is_critical_slice(&counts(300, 300, 100, 100), &thr));
        assert!(!is_critical_slice(&counts(0, 0, 0, 0), &thr));
        assert!(!is_critical_slice(&counts(299, 300, 100, 100), &thr));
    }

    #[test]
    fn binary_mode_only_checks_its_tissue() {
        let thr = ThresholdConfig::binary_fc();
        assert!(is_critical_slice(&counts(0, 0, 280, 0), &thr));
        assert!(!is_critical_slice(&counts(9999, 9999, 279, 9999), &thr));
        let thr = ThresholdConfig::binary_tc();
        assert!(is_critical_slice(&counts(0, 0, 0, 100), &thr));
    }

    #[test]
    fn zero_thresholds_select_everything() {
        let masks = vec![LabelMask::zeros(4, 4, 5); 6];
        let thr = ThresholdConfig {
            fb: Some(0),
            fc: Some(0),
            tb: Some(0),
            tc: Some(0),
        };
        assert_eq!(select_critical_slices(&masks, &thr), (0..6).collect::<Vec<_>>());
        assert!(select_critical_slices(&masks, &ThresholdConfig::multiclass()).is_empty());
    }

    #[test]
    fn tissue_codes_round_trip() {
        for t in Tissue::ALL {
            assert_eq!(Tissue::from_code(t.code()), Some(t));
            assert_eq!(t.abbrev().parse::<Tissue>().unwrap(), t);
        }
        assert_eq!(Tissue::from_code(0), None);
    }
}

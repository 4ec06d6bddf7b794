//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use kneeseg::data::{make_phantom, SlicePair, VolumeMeta};

/// Brute-force DSC in percent; both empty counts as perfect agreement.
pub fn naive_dsc(k: &[bool], y: &[bool]) -> f64 {
    let inter = k.iter().zip(y).filter(|(a, b)| **a && **b).count();
    let total = k.iter().filter(|v| **v).count() + y.iter().filter(|v| **v).count();
    if total == 0 {
        100.0
    } else {
        100.0 * 2.0 * inter as f64 / total as f64
    }
}

pub fn naive_jaccard(k: &[bool], y: &[bool]) -> f64 {
    let inter = k.iter().zip(y).filter(|(a, b)| **a && **b).count();
    let union = k.iter().zip(y).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn naive_voe(k: &[bool], y: &[bool]) -> f64 {
    let d = naive_dsc(k, y);
    100.0 * (1.0 - d / (200.0 - d))
}

pub fn naive_pa(k: &[u8], y: &[u8]) -> f64 {
    100.0 * k.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / k.len() as f64
}

/// Symmetric Hausdorff distance by enumerating every pair of foreground pixels.
pub fn naive_hausdorff(k: &[bool], y: &[bool], w: usize, spacing: (f64, f64)) -> Option<f64> {
    let points = |m: &[bool]| -> Vec<(f64, f64)> {
        m.iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| ((i / w) as f64 * spacing.0, (i % w) as f64 * spacing.1))
            .collect()
    };
    let (pk, py) = (points(k), points(y));
    match (pk.is_empty(), py.is_empty()) {
        (true, true) => return Some(0.0),
        (true, false) | (false, true) => return None,
        _ => {}
    }
    let directed = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.iter()
            .map(|p| {
                b.iter()
                    .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Some(directed(&pk, &py).max(directed(&py, &pk)))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
    cov / (sample_var(x) * sample_var(y)).sqrt()
}

/// ICC(A,1): two-way random effects, absolute agreement, single rater,
/// from the mean squares of the subjects x raters table.
pub fn oracle_icc_a1(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let k = 2.0;
    let grand = (x.iter().sum::<f64>() + y.iter().sum::<f64>()) / (n * k);
    let row_means: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a + b) / 2.0).collect();
    let col_means = [mean(x), mean(y)];
    let ss_rows: f64 = row_means.iter().map(|r| k * (r - grand).powi(2)).sum();
    let ss_cols: f64 = col_means.iter().map(|c| n * (c - grand).powi(2)).sum();
    let ss_total: f64 = x.iter().chain(y).map(|v| (v - grand).powi(2)).sum();
    let ss_err = ss_total - ss_rows - ss_cols;
    let msr = ss_rows / (n - 1.0);
    let msc = ss_cols / (k - 1.0);
    let mse = ss_err / ((n - 1.0) * (k - 1.0));
    (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n)
}

/// 1-based ranks with ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|u| *u < v).count() as f64;
            let equal = x.iter().filter(|u| *u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Kendall's W for two raters without tie correction.
pub fn oracle_kendall_w(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (rx, ry) = (ranks(x), ranks(y));
    let totals: Vec<f64> = rx.iter().zip(&ry).map(|(a, b)| a + b).collect();
    let m = mean(&totals);
    let s: f64 = totals.iter().map(|t| (t - m).powi(2)).sum();
    12.0 * s / (4.0 * (n.powi(3) - n))
}

pub fn oracle_welch_t(a: &[f64], b: &[f64]) -> f64 {
    (mean(a) - mean(b)) / (sample_var(a) / a.len() as f64 + sample_var(b) / b.len() as f64).sqrt()
}

pub fn oracle_anova_f(a: &[f64], b: &[f64]) -> f64 {
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let grand = mean(&all);
    let between = a.len() as f64 * (mean(a) - grand).powi(2) + b.len() as f64 * (mean(b) - grand).powi(2);
    let within = sample_var(a) * (a.len() - 1) as f64 + sample_var(b) * (b.len() - 1) as f64;
    between / (within / (all.len() - 2) as f64)
}

/// Paired sample for the association checks.
pub const MANUAL: [f64; 7] = [12.1, 15.4, 9.8, 22.0, 18.3, 11.7, 14.2];
pub const AUTO: [f64; 7] = [11.5, 16.0, 10.4, 20.9, 19.1, 12.5, 13.6];
/// Pearson r of (MANUAL, AUTO) as reported by scipy.stats.pearsonr.
pub const SCIPY_PEARSON: f64 = 0.9825463711133382;

/// Two groups for the significance checks.
pub const GROUP_A: [f64; 8] = [4.1, 5.3, 3.8, 6.2, 5.0, 4.4, 5.9, 4.7];
pub const GROUP_B: [f64; 9] = [6.0, 7.2, 5.5, 6.8, 7.9, 6.4, 5.8, 7.1, 6.6];
/// scipy.stats.ttest_ind(A, B, equal_var=False).pvalue
pub const SCIPY_WELCH_P: f64 = 0.0007741929456850429;
/// scipy.stats.f_oneway(A, B)
pub const SCIPY_ANOVA_F: f64 = 18.351928447455727;
pub const SCIPY_ANOVA_P: f64 = 0.0006525880910788614;

/// Ten mid-volume slices of a 40-slice phantom at `size x size`.
pub fn overfit_slices(size: usize) -> Vec<SlicePair> {
    let meta = VolumeMeta {
        slice_count: 40,
        ..VolumeMeta::default()
    };
    let volume = make_phantom(11, &meta).resized(size).expect("resize");
    volume.slices[15..25].to_vec()
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

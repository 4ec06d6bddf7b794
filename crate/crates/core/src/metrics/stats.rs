//! Agreement statistics between manual and automatic measurements.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-way random-effects, absolute-agreement, single-measure ICC of two
/// raters scoring the same subjects.
pub fn icc_absolute_agreement(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let k = 2.0;
    let grand = (x.iter().sum::<f64>() + y.iter().sum::<f64>()) / (n * k);
    let ss_rows: f64 = x.iter().zip(y).map(|(a, b)| ((a + b) / k - grand).powi(2)).sum::<f64>() * k;
    let ss_cols = ((mean(x) - grand).powi(2) + (mean(y) - grand).powi(2)) * n;
    let ss_total: f64 = x.iter().chain(y).map(|v| (v - grand).powi(2)).sum();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);

    let ms_rows = ss_rows / (n - 1.0);
    let ms_cols = ss_cols / (k - 1.0);
    let ms_err = ss_err / ((n - 1.0) * (k - 1.0));
    let denom = ms_rows + (k - 1.0) * ms_err + k * (ms_cols - ms_err) / n;
    if denom <= 0.0 {
        return None;
    }
    Some((ms_rows - ms_err) / denom)
}

/// Average (fractional) ranks starting at 1, and the tie term `sum(t^3 - t)`.
fn ranks(x: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (out, ties)
}

/// Kendall's coefficient of concordance for two raters, tie-corrected.
pub fn kendall_w(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let m = 2.0;
    let (rx, tx) = ranks(x);
    let (ry, ty) = ranks(y);
    let totals: Vec<f64> = rx.iter().zip(&ry).map(|(a, b)| a + b).collect();
    let mean_total = mean(&totals);
    let s: f64 = totals.iter().map(|r| (r - mean_total).powi(2)).sum();
    let denom = m * m * (n.powi(3) - n) - m * (tx + ty);
    if denom <= 0.0 {
        return None;
    }
    Some((12.0 * s / denom).clamp(0.0, 1.0))
}

/// Association and concordance between paired manual/automatic values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub r: Option<f64>,
    pub icc: Option<f64>,
    pub w: Option<f64>,
}

pub fn association_measures(manual: &[f64], auto: &[f64]) -> Result<Association> {
    if manual.len() != auto.len() {
        return Err(Error::Validation(format!(
            "paired samples differ in length: {} vs {}",
            manual.len(),
            auto.len()
        )));
    }
    if manual.len() < 3 {
        return Err(Error::Validation("association measures need at least 3 pairs".into()));
    }
    Ok(Association {
        r: pearson(manual, auto),
        icc: icc_absolute_agreement(manual, auto),
        w: kendall_w(manual, auto),
    })
}

/// Welch's unequal-variance t statistic, degrees of freedom and two-sided p.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    if va + vb == 0.0 {
        return if diff == 0.0 {
            (0.0, na + nb - 2.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, na + nb - 2.0, 0.0)
        };
    }
    let t = diff / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (t, df, (2.0 * dist.sf(t.abs())).min(1.0))
}

/// Pooled-variance (Student) t statistic.
pub fn pooled_t_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    (mean(a) - mean(b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
}

/// One-way ANOVA: F statistic and its upper-tail p-value.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<(f64, f64)> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Validation("ANOVA needs >= 2 groups of >= 2 values".into()));
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let ss_between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let df_between = (groups.len() - 1) as f64;
    let df_within = (total - groups.len()) as f64;
    if ss_within == 0.0 {
        return Ok(if ss_between == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) });
    }
    let f = (ss_between / df_between) / (ss_within / df_within);
    let dist = FisherSnedecor::new(df_between, df_within).expect("positive degrees of freedom");
    Ok((f, dist.sf(f)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Two-sided Welch t-test p-value.
    pub t_p: f64,
    pub anova_f: f64,
    pub anova_p: f64,
}

pub fn significance_tests(group_a: &[f64], group_b: &[f64]) -> Result<Significance> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::Validation("each group needs at least 2 values".into()));
    }
    let (_, _, t_p) = welch_t_test(group_a, group_b);
    let (anova_f, anova_p) = one_way_anova(&[group_a, group_b])?;
    Ok(Significance { t_p, anova_f, anova_p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let x = [12.0, 15.5, 9.0, 22.0, 18.25, 11.0];
        let a = association_measures(&x, &x).unwrap();
        assert_eq!(a.r, Some(1.0));
        assert!((a.icc.unwrap() - 1.0).abs() < 1e-12);
        assert!((a.w.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_anticorrelation() {
        let x = [-2.5, -1.0, 0.0, 1.0, 2.5];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(association_measures(&x, &y).unwrap().r, Some(-1.0));
    }

    #[test]
    fn zero_variance_has_no_correlation() {
        let a = association_measures(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.r, None);
        assert!(association_measures(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(association_measures(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_groups() {
        let g = [3.0, 4.0, 5.5, 6.0];
        let s = significance_tests(&g, &g).unwrap();
        assert_eq!(s.t_p, 1.0);
        assert_eq!(s.anova_f, 0.0);
        let c = [2.0, 2.0, 2.0];
        let s = significance_tests(&c, &c).unwrap();
        assert_eq!((s.t_p, s.anova_p), (1.0, 1.0));
    }

    #[test]
    fn ranks_average_ties() {
        let (r, t) = ranks(&[10.0, 20.0, 10.0, 30.0]);
        assert_eq!(r, vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(t, 6.0);
    }
}

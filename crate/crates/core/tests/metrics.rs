mod common;

use common::*;
use kneeseg::metrics::{dsc, hausdorff, jaccard, pixel_accuracy, voe};
use proptest::collection::vec;
use proptest::prelude::*;

fn grid(s: &str) -> Vec<bool> {
    s.chars().filter(|c| !c.is_whitespace()).map(|c| c == '#').collect()
}

#[test]
fn dsc_of_shifted_squares() {
    // two 2x2 squares overlapping in one column
    let k = grid("##.. ##.. .... ....");
    let y = grid(".##. .##. .... ....");
    assert_eq!(dsc(&k, &y).unwrap(), 50.0);
    assert_eq!(jaccard(&k, &y).unwrap(), 1.0 / 3.0);
    assert!((voe(50.0).unwrap() - 100.0 * 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(hausdorff(&k, &y, 4, 4, (1.0, 1.0)).unwrap(), Some(1.0));
}

#[test]
fn hausdorff_uses_row_and_column_spacing() {
    let k = grid("#... .... .... ....");
    let y = grid(".... .... .... ...#");
    let d = hausdorff(&k, &y, 4, 4, (0.5, 2.0)).unwrap().unwrap();
    assert!((d - (1.5f64.powi(2) + 6.0f64.powi(2)).sqrt()).abs() < 1e-12);
}

#[test]
fn one_sided_empty_masks_have_no_distance() {
    let k = grid("#... .... .... ....");
    let y = vec![false; 16];
    assert_eq!(hausdorff(&k, &y, 4, 4, (1.0, 1.0)).unwrap(), None);
    assert_eq!(hausdorff(&y, &y, 4, 4, (1.0, 1.0)).unwrap(), Some(0.0));
    assert_eq!(dsc(&k, &y).unwrap(), 0.0);
    assert_eq!(voe(0.0).unwrap(), 100.0);
}

#[test]
fn pixel_accuracy_counts_every_class() {
    assert_eq!(pixel_accuracy(&[0, 1, 2, 3], &[0, 1, 3, 3]).unwrap(), 75.0);
    assert!(pixel_accuracy(&[], &[]).is_err());
    assert!(dsc(&[true], &[true, false]).is_err());
}

fn mask_pair(len: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (vec(any::<bool>(), len), vec(any::<bool>(), len))
}

proptest! {
    #[test]
    fn dsc_matches_oracle_and_is_symmetric((k, y) in mask_pair(36)) {
        let d = dsc(&k, &y).unwrap();
        prop_assert_eq!(d, dsc(&y, &k).unwrap());
        prop_assert!((d - naive_dsc(&k, &y)).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&d));
    }

    #[test]
    fn voe_is_one_minus_jaccard((k, y) in mask_pair(64)) {
        let v = voe(dsc(&k, &y).unwrap()).unwrap();
        prop_assert!((v - 100.0 * (1.0 - naive_jaccard(&k, &y))).abs() < 1e-9);
        prop_assert!((v - naive_voe(&k, &y)).abs() < 1e-9);
    }

    #[test]
    fn hausdorff_matches_pairwise_oracle(
        (k, y) in mask_pair(48),
        sr in 0.1f64..3.0,
        sc in 0.1f64..3.0,
    ) {
        let got = hausdorff(&k, &y, 6, 8, (sr, sc)).unwrap();
        prop_assert_eq!(got, hausdorff(&y, &k, 6, 8, (sr, sc)).unwrap());
        match (got, naive_hausdorff(&k, &y, 8, (sr, sc))) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn pixel_accuracy_matches_oracle(k in vec(0u8..5, 30), y in vec(0u8..5, 30)) {
        prop_assert!((pixel_accuracy(&k, &y).unwrap() - naive_pa(&k, &y)).abs() < 1e-12);
    }
}

mod common;

use candle_core::{DType, Device, Tensor, Var};
use common::*;
use kneeseg::losses::{combined_loss, sr_loss, weighted_pixel_loss, LossWeights, SrNetwork, SR_TAPS};
use kneeseg::net::ParamStore;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const M: usize = 3;
const S: usize = 8;

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn weights() -> LossWeights {
    LossWeights {
        alpha: vec![0.2, 0.5, 0.3],
        ..LossWeights::default()
    }
}

fn probs(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..M * S * S).map(|_| rng.random_range(0.05..0.95)).collect()
}

/// One-hot target with a class per pixel drawn at random.
fn target(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; M * S * S];
    for p in 0..S * S {
        y[rng.random_range(0..M) * S * S + p] = 1.0;
    }
    y
}

fn map(v: &[f64]) -> Tensor {
    Tensor::from_slice(v, (M, S, S), &Device::Cpu).unwrap()
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
    let (k0, y) = (probs(1), map(&target(2)));
    let w = weights();
    let var = Var::from_tensor(&map(&k0)).unwrap();
    let loss = combined_loss(var.as_tensor(), &y, &w, &net).unwrap();
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads.get(&var).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let numeric = numeric_gradient(&k0, 1e-6, |k| scalar(&combined_loss(&map(k), &y, &w, &net).unwrap()));
    let err = max_relative_error(&analytic, &numeric, 1e-6);
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn losses_vanish_at_the_target() {
    let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
    let y = map(&target(5));
    let w = weights();
    assert!(scalar(&weighted_pixel_loss(&y, &y, &w.alpha).unwrap()).abs() < 1e-4);
    assert_eq!(scalar(&sr_loss(&y, &y, &w.lambda, &net).unwrap()), 0.0);
    assert!(scalar(&combined_loss(&y, &y, &w, &net).unwrap()).abs() < 1e-4);
}

#[test]
fn losses_are_linear_in_their_weights() {
    let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
    let (k, y) = (map(&probs(7)), map(&target(8)));
    let w = weights();
    for c in [2.0, 0.37] {
        let alpha: Vec<f64> = w.alpha.iter().map(|a| a * c).collect();
        let lambda: Vec<f64> = w.lambda.iter().map(|l| l * c).collect();
        let base = scalar(&weighted_pixel_loss(&k, &y, &w.alpha).unwrap());
        let scaled = scalar(&weighted_pixel_loss(&k, &y, &alpha).unwrap());
        assert!((scaled - c * base).abs() <= 1e-12 * base.abs().max(1.0));
        let base = scalar(&sr_loss(&k, &y, &w.lambda, &net).unwrap());
        let scaled = scalar(&sr_loss(&k, &y, &lambda, &net).unwrap());
        assert!((scaled - c * base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn combined_loss_decomposes() {
    let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
    let (k, y) = (map(&probs(9)), map(&target(10)));
    let w = weights();
    let pixel = scalar(&weighted_pixel_loss(&k, &y, &w.alpha).unwrap());
    let shape = scalar(&sr_loss(&k, &y, &w.lambda, &net).unwrap());
    let total = scalar(&combined_loss(&k, &y, &w, &net).unwrap());
    assert!((total - (0.7 * pixel + 0.3 * shape)).abs() < 1e-12);
    let pixel_only = LossWeights { eta: 0.0, ..w };
    let total = scalar(&combined_loss(&k, &y, &pixel_only, &net).unwrap());
    assert!((total - 0.7 * pixel).abs() < 1e-12);
}

#[test]
fn shape_loss_is_symmetric() {
    let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
    let (a, b) = (map(&probs(11)), map(&probs(12)));
    let lambda = LossWeights::default().lambda;
    let ab = scalar(&sr_loss(&a, &b, &lambda, &net).unwrap());
    let ba = scalar(&sr_loss(&b, &a, &lambda, &net).unwrap());
    assert!((ab - ba).abs() < 1e-12);
}

/// Rebuilds the feature network from the same seeded store and runs it
/// through candle's own convolution.
fn reference_sr_loss(k: &Tensor, y: &Tensor, lambda: &[f64], seed: u64) -> f64 {
    let blocks = [(8usize, 16usize, 2usize, 8usize), (16, 16, 2, 8), (32, 16, 2, 8), (32, 5, 1, 2)];
    let mut store = ParamStore::new(seed, DType::F64, &Device::Cpu);
    let (mut hk, mut hy) = (k.unsqueeze(0).unwrap(), y.unsqueeze(0).unwrap());
    let mut c_in = M;
    let mut total = 0.0;
    for (i, &(c_out, kernel, stride, padding)) in blocks.iter().enumerate() {
        let fan_in = (c_in * kernel * kernel) as f64;
        let w = store
            .uniform(format!("sr{i}.weight"), &[c_out, c_in, kernel, kernel], (6.0 / fan_in).sqrt())
            .unwrap();
        let b = store.uniform(format!("sr{i}.bias"), &[c_out], 1.0 / fan_in.sqrt()).unwrap();
        let b = b.reshape((1, c_out, 1, 1)).unwrap();
        let step = |h: &Tensor| h.conv2d(&w, padding, stride, 1, 1).unwrap().broadcast_add(&b).unwrap().relu().unwrap();
        hk = step(&hk);
        hy = step(&hy);
        let diff: Vec<f64> = (&hk - &hy).unwrap().abs().unwrap().flatten_all().unwrap().to_vec1().unwrap();
        total += lambda[i] * diff.iter().sum::<f64>() / diff.len() as f64;
        c_in = c_out;
    }
    total
}

#[test]
fn shape_loss_matches_reference_convolution() {
    let net = SrNetwork::new(M, 4, DType::F64, &Device::Cpu).unwrap();
    let (k, y) = (map(&probs(13)), map(&target(14)));
    let lambda = LossWeights::default().lambda;
    assert_eq!(lambda.len(), SR_TAPS);
    let got = scalar(&sr_loss(&k, &y, &lambda, &net).unwrap());
    let want = reference_sr_loss(&k, &y, &lambda, 4);
    assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_non_negative(ks in 0u64..1000, ys in 0u64..1000) {
        let net = SrNetwork::new(M, 3, DType::F64, &Device::Cpu).unwrap();
        let (k, y) = (map(&probs(ks)), map(&target(ys)));
        let w = weights();
        prop_assert!(scalar(&weighted_pixel_loss(&k, &y, &w.alpha).unwrap()) >= 0.0);
        prop_assert!(scalar(&sr_loss(&k, &y, &w.lambda, &net).unwrap()) >= 0.0);
    }
}

//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod reference;

use farnet::autograd::{Tape, Var};
use farnet::nn::{Bound, ParamStore};
use farnet::spectral::{dft2, polar};
use farnet::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Largest `|a - b| / max(1, max |b|)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Circular distance between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

pub fn amplitude(x: &Tensor<f64>) -> Tensor<f64> {
    polar(&dft2(x).unwrap()).amplitude
}

pub fn phase(x: &Tensor<f64>) -> Tensor<f64> {
    polar(&dft2(x).unwrap()).phase
}

/// Worst relative error between tape gradients of `f` with respect to its
/// inputs and central differences with step `eps`.
pub fn input_gradient_error(
    inputs: &[Tensor<f64>],
    f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    eps: f64,
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward(out);
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    let eval = |inputs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        f(&tape, &vars).unwrap().item()
    };
    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - eps;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric, 1e-6));
        }
    }
    worst
}

/// Worst relative error between tape gradients of `f` with respect to the
/// trainable parameters of `store` and central differences, checking up to
/// `per_tensor` randomly chosen elements of every trainable tensor.
pub fn param_gradient_error(
    store: &mut ParamStore<f64>,
    f: impl for<'t> Fn(&Bound<'t, f64>) -> Result<Var<'t, f64>>,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> f64 {
    let analytic = {
        let tape = Tape::new();
        let bound = store.bind(&tape, true);
        let out = f(&bound).unwrap();
        let grads = tape.backward(out);
        store.gradients(&bound, &grads)
    };
    let eval = |store: &ParamStore<f64>| {
        let tape = Tape::new();
        let bound = store.bind(&tape, true);
        f(&bound).unwrap().item()
    };
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for t in 0..store.entries().len() {
        if !store.entries()[t].trainable {
            continue;
        }
        let n = store.entries()[t].value.len();
        for _ in 0..per_tensor.min(n) {
            let i = rng.random_range(0..n);
            let orig = store.entries()[t].value.data()[i];
            store.entries_mut()[t].value.data_mut()[i] = orig + eps;
            let up = eval(store);
            store.entries_mut()[t].value.data_mut()[i] = orig - eps;
            let down = eval(store);
            store.entries_mut()[t].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[t].as_ref().map_or(0.0, |g| g.data()[i]);
            let mut e = rel_err(a, numeric, 1e-6);
            if e > 1e-4 {
                // An activation kink inside the window; retry with a narrower one.
                let small = eps * 1e-2;
                store.entries_mut()[t].value.data_mut()[i] = orig + small;
                let up = eval(store);
                store.entries_mut()[t].value.data_mut()[i] = orig - small;
                let down = eval(store);
                store.entries_mut()[t].value.data_mut()[i] = orig;
                e = e.min(rel_err(a, (up - down) / (2.0 * small), 1e-6));
            }
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

/// Non-zero biases so the oracle also exercises them.
pub fn jitter_biases(store: &mut ParamStore<f64>, seed: u64) {
    let mut g = rng(seed);
    for e in store.entries_mut() {
        if e.name.ends_with(".bias") {
            e.value = random_tensor(e.value.shape(), &mut g).scale(0.1);
        }
    }
}

//! Parameter storage and the learnable layers built on top of it.
//!
//! Layers hold [`ParamId`] handles into a [`ParamStore`]. A forward pass first
//! binds the whole store onto a [`Tape`], which yields a [`Bound`] view whose
//! variables the layers consume.

use std::cell::RefCell;

use rand::Rng;

use crate::autograd::{self, BatchStats, Conv2dGeometry, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (running statistics) are stored but never optimized.
    pub trainable: bool,
}

/// Named, ordered collection of parameter and buffer tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Records every entry on `tape`. Trainable entries become differentiable
    /// leaves when `differentiable` is set; everything else is constant.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, differentiable: bool) -> Bound<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if differentiable && e.trainable {
                    tape.leaf(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound {
            tape,
            vars,
            buffers: self.entries.iter().map(|e| (!e.trainable).then(|| e.value.clone())).collect(),
            pending: RefCell::new(Vec::new()),
        }
    }

    /// Writes buffer updates collected during a training-mode pass.
    pub fn commit(&mut self, bound: &Bound<'_, T>) {
        for (id, value) in bound.pending.borrow_mut().drain(..) {
            self.entries[id.0].value = value;
        }
    }

    /// Gradient of every trainable entry, in store order (zeros where unused).
    pub fn gradients(&self, bound: &Bound<'_, T>, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|(e, &v)| e.trainable.then(|| grads.get_or_zeros(v)))
            .collect()
    }

    /// Replaces every value with the matching entry of `other` (same layout required).
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Shape("parameter stores differ in length".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// A [`ParamStore`] recorded on a tape for one forward pass.
pub struct Bound<'t, T> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    buffers: Vec<Option<Tensor<T>>>,
    pending: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.buffers[id.0].as_ref().expect("not a buffer")
    }

    fn stage(&self, id: ParamId, value: Tensor<T>) {
        self.pending.borrow_mut().push((id, value));
    }
}

/// Forward-pass mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Running estimates, no updates.
    Eval,
}

/// Uniform fan-in scaled initialization: `U(-sqrt(3/fan_in), sqrt(3/fan_in))`,
/// which gives unit-variance weights times `1/fan_in`.
pub fn fan_in_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// 2-D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub geometry: Conv2dGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[out_channels, in_channels, kernel.0, kernel.1], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geometry: Conv2dGeometry::same(kernel).with_stride(stride),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        autograd::conv2d(x, p.var(self.weight), self.bias.map(|b| p.var(b)), self.geometry)
    }

    /// Zeroes weight and bias.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).fill(T::zero());
        if let Some(b) = self.bias {
            store.get_mut(b).fill(T::zero());
        }
    }
}

/// Per-channel batch normalization with running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let (g, b) = (p.var(self.gamma), p.var(self.beta));
        match mode {
            Mode::Train => {
                let (y, BatchStats { mean, var_unbiased }) = autograd::batch_norm_train(x, g, b, T::of(self.eps))?;
                let m = T::of(self.momentum);
                let blend = |old: &Tensor<T>, new: &Tensor<T>| old.zip_map(new, |o, n| o * (T::one() - m) + n * m);
                p.stage(self.running_mean, blend(p.buffer(self.running_mean), &mean));
                p.stage(self.running_var, blend(p.buffer(self.running_var), &var_unbiased));
                Ok(y)
            }
            Mode::Eval => autograd::batch_norm_eval(
                x,
                g,
                b,
                p.buffer(self.running_mean),
                p.buffer(self.running_var),
                T::of(self.eps),
            ),
        }
    }
}

/// Affine map `[B, D] -> [B, N]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), fan_in_uniform(&[out_features, in_features], in_features, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        autograd::linear(x, p.var(self.weight), p.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_statistics_are_committed_in_train_mode_only() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = Tensor::from_fn(&[2, 2, 4, 1], |i| i as f64);
        for mode in [Mode::Eval, Mode::Train] {
            let tape = Tape::new();
            let bound = store.bind(&tape, false);
            bn.forward(&bound, tape.constant(x.clone()), mode).unwrap();
            store.commit(&bound);
            let rm = store.get(bn.running_mean).data().to_vec();
            match mode {
                Mode::Eval => assert_eq!(rm, vec![0.0, 0.0]),
                Mode::Train => {
                    // channel 0 holds 0..4 and 8..12 -> mean 5.5
                    assert!((rm[0] - 0.55).abs() < 1e-12);
                    assert!((rm[1] - 0.95).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_follow_store_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "fc", 3, 2, &mut rng);
        let tape = Tape::new();
        let bound = store.bind(&tape, true);
        let x = tape.constant(Tensor::ones(&[1, 3]));
        let y = lin.forward(&bound, x).unwrap();
        let loss = autograd::cross_entropy(y, &[1]).unwrap();
        let grads = store.gradients(&bound, &tape.backward(loss));
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].as_ref().unwrap().shape(), &[2, 3]);
        assert_eq!(grads[1].as_ref().unwrap().shape(), &[2]);
    }

    #[test]
    fn initialization_is_seeded() {
        let a: Tensor<f32> = fan_in_uniform(&[4, 4], 4, &mut ChaCha8Rng::seed_from_u64(7));
        let b: Tensor<f32> = fan_in_uniform(&[4, 4], 4, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert!(a.max_abs() <= (3.0f32 / 4.0).sqrt());
    }
}

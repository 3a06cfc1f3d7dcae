//! Fourier-based augmentation reconstruction network.
//!
//! The amplitude sub-network is an encoder/decoder of five amplitude FSIMs
//! trained to reproduce the amplitude spectrum of a ground-truth domain. Its
//! output amplitude is recombined with the input phase and fed to a phase
//! sub-network of four phase FSIMs; the first two fuse the signal-space
//! residual `x_out1 - x_in` through `1x1` maps.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::fsim::{Fsim, FsimConfig, FsimVariant, Resample};
use crate::nn::{Bound, Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::spectral::{self, PolarSpectrum};
use crate::tensor::Tensor;

/// Weights of the amplitude and phase reconstruction losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugLossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for AugLossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.2,
        }
    }
}

/// How phase differences enter the phase loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseWrapMode {
    /// Raw difference of phases in `(-pi, pi]`.
    #[default]
    Literal,
    /// Circular difference wrapped into `(-pi, pi]`.
    Wrapped,
}

/// Intermediate tensors of one augmentation pass.
pub struct AugOutputs<'t, T> {
    pub x_out1: Var<'t, T>,
    pub x_fused: Var<'t, T>,
    pub residual: Var<'t, T>,
    pub x_out2: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct AugmentationModel<T> {
    pub store: ParamStore<T>,
    pub in_channels: usize,
    pub width: usize,
    pub amp_subnet: Vec<Fsim>,
    pub phase_subnet: Vec<Fsim>,
    /// `(width + C_in) -> width` maps after the first two phase FSIMs.
    pub residual_fusion: Vec<Conv2d>,
    calls: Cell<usize>,
}

impl<T: Scalar> AugmentationModel<T> {
    /// Builds the model with base width `width` (bottleneck `2 * width`).
    pub fn new(in_channels: usize, width: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || width == 0 {
            return Err(Error::InvalidArgument("augmentation model needs positive widths".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, w) = (in_channels, width);
        let amp_plan = [
            (Resample::Down2, c, w),
            (Resample::Down2, w, 2 * w),
            (Resample::None, 2 * w, 2 * w),
            (Resample::Up2, 2 * w, w),
            (Resample::Up2, w, c),
        ];
        let amp_subnet = amp_plan
            .iter()
            .enumerate()
            .map(|(i, &(r, ci, co))| {
                Fsim::new(&mut store, &format!("amp.{i}"), FsimConfig::new(FsimVariant::Amplitude, r, ci, co), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let phase_plan = [(c, w), (w, w), (w, w), (w, c)];
        let phase_subnet = phase_plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| {
                Fsim::new(
                    &mut store,
                    &format!("phase.{i}"),
                    FsimConfig::new(FsimVariant::Phase, Resample::None, ci, co),
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let residual_fusion = (0..2)
            .map(|i| Conv2d::new(&mut store, &format!("fusion.{i}"), w + c, w, (1, 1), (1, 1), true, &mut rng))
            .collect();
        Ok(Self {
            store,
            in_channels,
            width,
            amp_subnet,
            phase_subnet,
            residual_fusion,
            calls: Cell::new(0),
        })
    }

    /// Number of sub-network passes run so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        self.calls.set(self.calls.get() + 1);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "augmentation expects [B, {}, H, W], got {shape:?}",
                self.in_channels
            )));
        }
        if shape[2] % 4 != 0 {
            return Err(Error::Shape(format!(
                "augmentation needs H divisible by 4, got {}",
                shape[2]
            )));
        }
        Ok(())
    }

    /// Encoder/decoder amplitude reconstruction: `x_in -> x_out1`.
    pub fn amp_forward<'t>(&self, p: &Bound<'t, T>, x_in: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check(&x_in.shape())?;
        self.amp_subnet.iter().try_fold(x_in, |h, f| f.forward(p, h))
    }

    /// Phase reconstruction with residual fusion: `(x_fused, residual) -> x_out2`.
    pub fn phase_forward<'t>(&self, p: &Bound<'t, T>, x_fused: Var<'t, T>, residual: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check(&x_fused.shape())?;
        if residual.shape() != x_fused.shape() {
            return Err(Error::Shape(format!(
                "residual {:?} vs input {:?}",
                residual.shape(),
                x_fused.shape()
            )));
        }
        let mut h = x_fused;
        for (i, fsim) in self.phase_subnet.iter().enumerate() {
            h = fsim.forward(p, h)?;
            if let Some(fusion) = self.residual_fusion.get(i) {
                let joined = autograd::concat_channels(&[h, residual])?;
                h = autograd::add(h, fusion.forward(p, joined)?);
            }
        }
        Ok(h)
    }

    /// Full augmentation pipeline.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x_in: Var<'t, T>) -> Result<AugOutputs<'t, T>> {
        let x_out1 = self.amp_forward(p, x_in)?;
        let x_fused = phase_input_var(x_in, x_out1)?;
        let residual = autograd::sub(x_out1, x_in);
        let x_out2 = self.phase_forward(p, x_fused, residual)?;
        Ok(AugOutputs {
            x_out1,
            x_fused,
            residual,
            x_out2,
        })
    }

    /// Zeroes the residual-fusion maps.
    pub fn zero_fusion(&mut self) {
        for f in self.residual_fusion.clone() {
            f.zero(&mut self.store);
        }
    }
}

/// `F^-1(A(F x_out1), P(F x_in))` on the tape.
pub fn phase_input_var<'t, T: Scalar>(x_in: Var<'t, T>, x_out1: Var<'t, T>) -> Result<Var<'t, T>> {
    if x_in.shape() != x_out1.shape() {
        return Err(Error::Shape(format!(
            "phase input of {:?} and {:?}",
            x_in.shape(),
            x_out1.shape()
        )));
    }
    let (amp, _) = autograd::dft_polar(x_out1)?;
    let (_, phase) = autograd::dft_polar(x_in)?;
    autograd::polar_inverse_real(amp, phase)
}

/// Signal with the amplitude spectrum of `x_out1` and the phase of `x_in`.
pub fn phase_input<T: Scalar>(x_in: &Tensor<T>, x_out1: &Tensor<T>) -> Result<Tensor<T>> {
    if x_in.shape() != x_out1.shape() {
        return Err(Error::Shape(format!(
            "phase input of {:?} and {:?}",
            x_in.shape(),
            x_out1.shape()
        )));
    }
    let amplitude = spectral::polar(&spectral::dft2(x_out1)?).amplitude;
    let phase = spectral::polar(&spectral::dft2(x_in)?).phase;
    spectral::recompose(&PolarSpectrum { amplitude, phase })
}

/// Mean absolute difference of amplitude spectra, on the tape.
pub fn loss_amp_var<'t, T: Scalar>(x_out1: Var<'t, T>, x_gt: Var<'t, T>) -> Result<Var<'t, T>> {
    if x_out1.shape() != x_gt.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x_out1.shape(), x_gt.shape())));
    }
    let a = autograd::dft_amplitude(x_out1)?;
    let b = autograd::dft_amplitude(x_gt)?;
    autograd::mean_abs_diff(a, b, false)
}

/// Mean absolute difference of phase spectra, on the tape.
pub fn loss_pha_var<'t, T: Scalar>(x_out2: Var<'t, T>, x_gt: Var<'t, T>, mode: PhaseWrapMode) -> Result<Var<'t, T>> {
    if x_out2.shape() != x_gt.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x_out2.shape(), x_gt.shape())));
    }
    let a = autograd::dft_phase(x_out2)?;
    let b = autograd::dft_phase(x_gt)?;
    autograd::mean_abs_diff(a, b, mode == PhaseWrapMode::Wrapped)
}

fn eval_scalar<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl for<'t> Fn(Var<'t, T>, Var<'t, T>) -> Result<Var<'t, T>>,
) -> Result<T> {
    let tape = Tape::new();
    let v = f(tape.constant(a.clone()), tape.constant(b.clone()))?;
    Ok(v.item())
}

/// Amplitude reconstruction loss.
pub fn loss_amp<T: Scalar>(x_out1: &Tensor<T>, x_gt: &Tensor<T>) -> Result<T> {
    eval_scalar(x_out1, x_gt, loss_amp_var)
}

/// Phase reconstruction loss.
pub fn loss_pha<T: Scalar>(x_out2: &Tensor<T>, x_gt: &Tensor<T>, mode: PhaseWrapMode) -> Result<T> {
    eval_scalar(x_out2, x_gt, |a, b| loss_pha_var(a, b, mode))
}

/// `lambda1 * l_amp + lambda2 * l_pha`.
pub fn loss_aug<T: Scalar>(l_amp: T, l_pha: T, weights: AugLossWeights) -> T {
    T::of(weights.lambda1) * l_amp + T::of(weights.lambda2) * l_pha
}

/// Inference pass of the amplitude sub-network.
pub fn amp_subnet_forward<T: Scalar>(x_in: &Tensor<T>, model: &AugmentationModel<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let p = model.store.bind(&tape, false);
    Ok(model.amp_forward(&p, tape.constant(x_in.clone()))?.value().as_ref().clone())
}

/// Inference pass of the phase sub-network.
pub fn phase_subnet_forward<T: Scalar>(x_fused: &Tensor<T>, residual: &Tensor<T>, model: &AugmentationModel<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let p = model.store.bind(&tape, false);
    let y = model.phase_forward(&p, tape.constant(x_fused.clone()), tape.constant(residual.clone()))?;
    Ok(y.value().as_ref().clone())
}

/// Inference pass of the whole pipeline, returning `x_out2`.
pub fn augment<T: Scalar>(x_in: &Tensor<T>, model: &AugmentationModel<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let p = model.store.bind(&tape, false);
    Ok(model.forward(&p, tape.constant(x_in.clone()))?.x_out2.value().as_ref().clone())
}

//! Frequency-Spatial Interaction Module.
//!
//! Two parallel flows over the same features:
//!
//! * the frequency flow maps its input through a `1x1` entry map to `f0`,
//!   transforms it, runs one polar component (amplitude or phase, per
//!   [`FsimVariant`]) through a stack of `1x1` maps, bypasses the other, and
//!   transforms back; a learned amplitude is rectified with `abs`;
//! * the spatial flow runs a block of `3x3` maps.
//!
//! After each stage the flows exchange information through `3x3` maps:
//! `ff' = ff + conv(fs)` and `fs' = fs + conv(ff)`. The final output is the
//! exit `1x1` map applied to the sum of both flows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which polar component the frequency branch learns on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsimVariant {
    Amplitude,
    Phase,
}

/// Resolution change applied along H.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    None,
    /// Stride-2 spatial entry, average-pooled frequency entry.
    Down2,
    /// Nearest-neighbour doubling before both flows.
    Up2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FsimConfig {
    pub variant: FsimVariant,
    pub resample: Resample,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Frequency-process + interaction stages.
    pub stages: usize,
    /// Leaky rectifier slope used after internal maps.
    pub slope: f64,
}

impl FsimConfig {
    pub fn new(variant: FsimVariant, resample: Resample, in_channels: usize, out_channels: usize) -> Self {
        Self {
            variant,
            resample,
            in_channels,
            out_channels,
            stages: 2,
            slope: 0.1,
        }
    }
}

/// One frequency-process + interaction stage.
#[derive(Clone, Debug)]
pub struct FsimStage {
    /// `1x1` maps applied to the selected polar component.
    pub freq: [Conv2d; 2],
    /// `3x3` conv block of the spatial flow.
    pub spatial: [Conv2d; 2],
    /// `3x3` map carrying spatial features into the frequency flow.
    pub spatial_to_freq: Conv2d,
    /// `3x3` map carrying frequency features into the spatial flow.
    pub freq_to_spatial: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Fsim {
    pub config: FsimConfig,
    pub entry: Conv2d,
    pub stages: Vec<FsimStage>,
    pub exit: Conv2d,
}

impl Fsim {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: FsimConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.in_channels == 0 || config.out_channels == 0 || config.stages == 0 {
            return Err(Error::InvalidArgument(format!(
                "FSIM needs positive channels and stages, got {config:?}"
            )));
        }
        let (ci, co) = (config.in_channels, config.out_channels);
        let entry = Conv2d::new(store, &format!("{name}.entry"), ci, co, (1, 1), (1, 1), true, rng);
        let stages = (0..config.stages)
            .map(|s| {
                let prefix = format!("{name}.stage{s}");
                let (first_in, stride) = if s == 0 {
                    (ci, if config.resample == Resample::Down2 { (2, 1) } else { (1, 1) })
                } else {
                    (co, (1, 1))
                };
                FsimStage {
                    freq: [
                        Conv2d::new(store, &format!("{prefix}.freq0"), co, co, (1, 1), (1, 1), true, rng),
                        Conv2d::new(store, &format!("{prefix}.freq1"), co, co, (1, 1), (1, 1), true, rng),
                    ],
                    spatial: [
                        Conv2d::new(store, &format!("{prefix}.spatial0"), first_in, co, (3, 3), stride, true, rng),
                        Conv2d::new(store, &format!("{prefix}.spatial1"), co, co, (3, 3), (1, 1), true, rng),
                    ],
                    spatial_to_freq: Conv2d::new(store, &format!("{prefix}.s2f"), co, co, (3, 3), (1, 1), true, rng),
                    freq_to_spatial: Conv2d::new(store, &format!("{prefix}.f2s"), co, co, (3, 3), (1, 1), true, rng),
                }
            })
            .collect();
        let exit = Conv2d::new(store, &format!("{name}.exit"), co, co, (1, 1), (1, 1), true, rng);
        Ok(Self {
            config,
            entry,
            stages,
            exit,
        })
    }

    /// Output height for an input of height `h`.
    pub fn output_height(&self, h: usize) -> usize {
        match self.config.resample {
            Resample::None => h,
            Resample::Down2 => h / 2,
            Resample::Up2 => 2 * h,
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "FSIM expects [B, {}, H, W], got {shape:?}",
                self.config.in_channels
            )));
        }
        if self.config.resample == Resample::Down2 && shape[2] % 2 != 0 {
            return Err(Error::Shape(format!(
                "down-sampling FSIM needs even H, got {}",
                shape[2]
            )));
        }
        Ok(())
    }

    /// Frequency branch: transform, learn on one polar component, transform back.
    pub fn frequency_branch<'t, T: Scalar>(&self, p: &Bound<'t, T>, stage: &FsimStage, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let (amp, phase) = autograd::dft_polar(f)?;
        let learn = |c: Var<'t, T>| -> Result<Var<'t, T>> {
            let h = stage.freq[0].forward(p, c)?;
            let h = autograd::leaky_relu(h, T::of(self.config.slope));
            stage.freq[1].forward(p, h)
        };
        match self.config.variant {
            FsimVariant::Amplitude => autograd::polar_inverse_real(autograd::abs(learn(amp)?), phase),
            FsimVariant::Phase => autograd::polar_inverse_real(amp, learn(phase)?),
        }
    }

    /// Spatial conv block.
    pub fn spatial_branch<'t, T: Scalar>(&self, p: &Bound<'t, T>, stage: &FsimStage, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let slope = T::of(self.config.slope);
        let h = autograd::leaky_relu(stage.spatial[0].forward(p, f)?, slope);
        Ok(autograd::leaky_relu(stage.spatial[1].forward(p, h)?, slope))
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(&x.shape())?;
        let x = match self.config.resample {
            Resample::Up2 => autograd::upsample_h2(x),
            _ => x,
        };
        let freq_in = match self.config.resample {
            Resample::Down2 => autograd::avg_pool_h2(x)?,
            _ => x,
        };
        let mut ff = self.entry.forward(p, freq_in)?;
        let mut fs = x;
        for stage in &self.stages {
            let f = self.frequency_branch(p, stage, ff)?;
            let s = self.spatial_branch(p, stage, fs)?;
            ff = autograd::add(f, stage.spatial_to_freq.forward(p, s)?);
            fs = autograd::add(s, stage.freq_to_spatial.forward(p, f)?);
        }
        self.exit.forward(p, autograd::add(ff, fs))
    }

    /// Zeroes every cross-interaction map, decoupling the two flows.
    pub fn zero_interaction<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for s in &self.stages {
            s.spatial_to_freq.zero(store);
            s.freq_to_spatial.zero(store);
        }
    }
}

/// A standalone FSIM together with its parameter values.
#[derive(Clone, Debug)]
pub struct FsimParams<T> {
    pub store: ParamStore<T>,
    pub module: Fsim,
}

/// Deterministic fan-in uniform initialization with zero biases.
pub fn fsim_init<T: Scalar>(
    variant: FsimVariant,
    resample: Resample,
    in_channels: usize,
    out_channels: usize,
    seed: u64,
) -> Result<FsimParams<T>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let module = Fsim::new(
        &mut store,
        "fsim",
        FsimConfig::new(variant, resample, in_channels, out_channels),
        &mut rng,
    )?;
    Ok(FsimParams { store, module })
}

/// Inference-only forward pass of a standalone FSIM.
pub fn fsim_forward<T: Scalar>(f1: &Tensor<T>, params: &FsimParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = params.store.bind(&tape, false);
    let y = params.module.forward(&bound, tape.constant(f1.clone()))?;
    Ok(y.value().as_ref().clone())
}

//! Fourier-based augmentation reconstruction for multi-source domain
//! generalization of vibration-signal fault diagnosis.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command-line tool.

pub mod augnet;
pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod fsim;
pub mod metric;
pub mod nn;
pub mod recognizer;
pub mod report;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Sample32 = dataset::LabeledSample<f32>;
pub type Sample64 = dataset::LabeledSample<f64>;
pub type FarNet32 = trainer::FarNet<f32>;
pub type FarNet64 = trainer::FarNet<f64>;
pub type AugmentationModel32 = augnet::AugmentationModel<f32>;
pub type AugmentationModel64 = augnet::AugmentationModel<f64>;
pub type RecognizerModel32 = recognizer::RecognizerModel<f32>;
pub type RecognizerModel64 = recognizer::RecognizerModel<f64>;
pub type FsimParams32 = fsim::FsimParams<f32>;
pub type FsimParams64 = fsim::FsimParams<f64>;

//! Residual convolutional recognizer: embeddings, logits, softmax, cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, ops::log_softmax_rows, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Bound, Conv2d, Linear, Mode, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Backbone widths and head size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    /// Channel width of each residual stage; the last one is the embedding width.
    pub widths: Vec<usize>,
    /// Basic blocks per stage.
    pub blocks_per_stage: usize,
}

impl RecognizerConfig {
    pub fn new(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            n_classes,
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
        }
    }

    /// Full-width variant matching the usual 18-layer network.
    pub fn full_width(in_channels: usize, n_classes: usize) -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
            ..Self::new(in_channels, n_classes)
        }
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = (stride, 1);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(store, &format!("{name}.down"), cin, cout, (1, 1), s, false, rng),
                BatchNorm2d::new(store, &format!("{name}.down_bn"), cout),
            )
        });
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, (3, 3), s, false, rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, (3, 3), (1, 1), false, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
            shortcut,
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let h = relu(self.bn1.forward(p, self.conv1.forward(p, x)?, mode)?);
        let h = self.bn2.forward(p, self.conv2.forward(p, h)?, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(p, conv.forward(p, x)?, mode)?,
            None => x,
        };
        Ok(relu(autograd::add(h, skip)))
    }
}

fn relu<T: Scalar>(x: Var<'_, T>) -> Var<'_, T> {
    autograd::leaky_relu(x, T::zero())
}

#[derive(Clone, Debug)]
pub struct RecognizerModel<T> {
    pub store: ParamStore<T>,
    pub config: RecognizerConfig,
    pub stem: Conv2d,
    pub stem_bn: BatchNorm2d,
    pub stages: Vec<Vec<BasicBlock>>,
    pub head: Linear,
}

impl<T: Scalar> RecognizerModel<T> {
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        if config.in_channels == 0 || config.n_classes == 0 || config.widths.is_empty() || config.blocks_per_stage == 0 {
            return Err(Error::InvalidArgument(format!("invalid recognizer config {config:?}")));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = config.widths[0];
        let stem = Conv2d::new(&mut store, "stem", config.in_channels, w0, (3, 3), (2, 1), false, &mut rng);
        let stem_bn = BatchNorm2d::new(&mut store, "stem_bn", w0);
        let mut stages = Vec::new();
        let mut cin = w0;
        for (si, &w) in config.widths.iter().enumerate() {
            let blocks = (0..config.blocks_per_stage)
                .map(|bi| {
                    let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                    let b = BasicBlock::new(&mut store, &format!("stage{si}.{bi}"), cin, w, stride, &mut rng);
                    cin = w;
                    b
                })
                .collect();
            stages.push(blocks);
        }
        let head = Linear::new(&mut store, "head", cin, config.n_classes, &mut rng);
        Ok(Self {
            store,
            config,
            stem,
            stem_bn,
            stages,
            head,
        })
    }

    /// Pooled backbone features `[B, D]`.
    pub fn embed_var<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "recognizer expects [B, {}, H, W], got {s:?}",
                self.config.in_channels
            )));
        }
        let mut h = relu(self.stem_bn.forward(p, self.stem.forward(p, x)?, mode)?);
        for block in self.stages.iter().flatten() {
            h = block.forward(p, h, mode)?;
        }
        Ok(autograd::global_avg_pool(h))
    }

    /// Class logits from embeddings.
    pub fn logits_var<'t>(&self, p: &Bound<'t, T>, embeddings: Var<'t, T>) -> Result<Var<'t, T>> {
        self.head.forward(p, embeddings)
    }

    /// Inference-mode embeddings.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = autograd::Tape::new();
        let p = self.store.bind(&tape, false);
        let e = self.embed_var(&p, tape.constant(x.clone()), Mode::Eval)?;
        Ok(e.value().as_ref().clone())
    }

    /// Inference-mode `(embeddings, logits)`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = autograd::Tape::new();
        let p = self.store.bind(&tape, false);
        let e = self.embed_var(&p, tape.constant(x.clone()), Mode::Eval)?;
        let l = self.logits_var(&p, e)?;
        Ok((e.value().as_ref().clone(), l.value().as_ref().clone()))
    }
}

/// Row-wise softmax with max subtraction.
pub fn predict_proba<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!("logits must be [B, N], got {:?}", logits.shape())));
    }
    if !logits.all_finite() {
        return Err(Error::InvalidArgument("non-finite logits".into()));
    }
    Ok(log_softmax_rows(logits).map(|v| v.exp()))
}

/// Mean negative log-probability of the labelled class.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let tape = autograd::Tape::new();
    Ok(autograd::cross_entropy(tape.constant(logits.clone()), labels)?.item())
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows<T: Scalar>(m: &Tensor<T>) -> Vec<usize> {
    let (b, n) = m.dims2();
    (0..b)
        .map(|i| {
            let row = &m.data()[i * n..(i + 1) * n];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let l = Tensor::<f64>::zeros(&[1, 4]);
        let p = predict_proba(&l).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((cross_entropy(&l, &[2]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits() {
        let p = predict_proba(&Tensor::from_vec(&[1, 2], vec![1000.0f64, 0.0]).unwrap()).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-12);
        let l = Tensor::from_vec(&[1, 3], vec![0.0f64, 30.0, 0.0]).unwrap();
        assert!(cross_entropy(&l, &[1]).unwrap() < 1e-12);
    }

    #[test]
    fn out_of_range_label() {
        assert!(cross_entropy(&Tensor::<f64>::zeros(&[2, 3]), &[0, 3]).is_err());
    }

    #[test]
    fn embedding_shape_and_zero_input() {
        let m = RecognizerModel::<f32>::new(RecognizerConfig::new(1, 4), 0).unwrap();
        let e = m.embed(&Tensor::zeros(&[3, 1, 64, 1])).unwrap();
        assert_eq!(e.shape(), &[3, 128]);
        assert_eq!(e.max_abs(), 0.0);
        let e = m.embed(&Tensor::zeros(&[2, 1, 72, 1])).unwrap();
        assert_eq!(e.shape(), &[2, 128]);
    }
}

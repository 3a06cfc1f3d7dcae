//! Joint training of the augmentation and recognition networks, evaluation,
//! and the ablation harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augnet::{self, AugLossWeights, AugmentationModel, PhaseWrapMode};
use crate::autograd::{self, Tape, Var};
use crate::dataset::{LabeledSample, PkSampler};
use crate::error::{Error, IoContext, Result};
use crate::metric::{self, ManifoldParams};
use crate::nn::{Mode, ParamStore};
use crate::recognizer::{argmax_rows, RecognizerConfig, RecognizerModel};
use crate::report;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the ground-truth domain of each step is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtDomainMode {
    /// Cycle through the source domains, one per step.
    #[default]
    Rotate,
    /// Always the given domain.
    Fixed(u32),
}

/// Ablation variant of the pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Recognizer with cross-entropy only.
    M1,
    /// Adds the augmentation module.
    M2,
    /// Adds a Euclidean triplet loss (`k = 1`).
    M3,
    /// Full pipeline with the manifold triplet loss.
    #[default]
    M4,
}

impl Variant {
    pub fn uses_augmentation(self) -> bool {
        self != Variant::M1
    }

    pub fn uses_triplet(self) -> bool {
        matches!(self, Variant::M3 | Variant::M4)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
            Variant::M4 => "M4",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Classes per batch.
    pub batch_p: usize,
    /// Instances per class.
    pub batch_k: usize,
    pub momentum: f64,
    pub lr_aug: f64,
    pub lr_rec: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Manifold scale factor.
    pub k: f64,
    pub seed: u64,
    pub gt_domain_mode: GtDomainMode,
    pub phase_wrap_mode: PhaseWrapMode,
    pub runs: usize,
    pub variant: Variant,
    /// Base width of the augmentation network.
    pub aug_width: usize,
    /// Stage widths of the recognizer backbone.
    pub rec_widths: Vec<usize>,
    /// Samples per inference batch during evaluation.
    pub eval_batch: usize,
    /// Seeds trained concurrently; 0 uses every available core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_p: 4,
            batch_k: 32,
            momentum: 0.9,
            lr_aug: 0.001,
            lr_rec: 0.01,
            lambda1: 0.1,
            lambda2: 0.2,
            alpha: 0.01,
            gamma: 0.3,
            k: 3.0,
            seed: 0,
            gt_domain_mode: GtDomainMode::Rotate,
            phase_wrap_mode: PhaseWrapMode::Literal,
            runs: 5,
            variant: Variant::M4,
            aug_width: 16,
            rec_widths: vec![16, 32, 64, 128],
            eval_batch: 64,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_p == 0 || self.batch_k == 0 || self.runs == 0 || self.aug_width == 0 || self.eval_batch == 0 {
            return bad("batch sizes, runs and widths must be positive".into());
        }
        if self.rec_widths.is_empty() || self.rec_widths.contains(&0) {
            return bad("recognizer widths must be positive".into());
        }
        for (name, v) in [("lr_aug", self.lr_aug), ("lr_rec", self.lr_rec)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        self.manifold().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn aug_weights(&self) -> AugLossWeights {
        AugLossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    /// Triplet parameters after applying the variant (`M3` forces `k = 1`).
    pub fn manifold(&self) -> ManifoldParams {
        ManifoldParams {
            k: if self.variant == Variant::M3 { 1.0 } else { self.k },
            gamma: self.gamma,
        }
    }

    /// Resolved worker thread count.
    pub fn worker_count(&self) -> usize {
        match self.workers {
            0 => thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }

    /// Seed of run `run` of a multi-run task.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

/// `l_aug + l_clf + alpha * l_triplet`.
pub fn total_loss<T: Scalar>(l_aug: T, l_clf: T, l_triplet: T, alpha: T) -> T {
    l_aug + l_clf + alpha * l_triplet
}

/// Stochastic gradient descent with heavy-ball momentum over one parameter store:
/// `v <- mu v + g`, `p <- p - lr v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: Vec<Option<Tensor<T>>>) {
        if self.velocity.len() != grads.len() {
            self.velocity = vec![None; grads.len()];
        }
        for ((entry, g), v) in store.entries_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            let next = match v.take() {
                Some(old) => old.zip_map(&g, |o, gv| self.momentum * o + gv),
                None => g,
            };
            entry.value = entry.value.zip_map(&next, |p, vv| p - self.lr * vv);
            *v = Some(next);
        }
    }
}

/// Both networks of the pipeline.
#[derive(Clone, Debug)]
pub struct FarNet<T> {
    pub aug: AugmentationModel<T>,
    pub rec: RecognizerModel<T>,
}

impl<T: Scalar> FarNet<T> {
    pub fn new(in_channels: usize, n_classes: usize, config: &TrainConfig, seed: u64) -> Result<Self> {
        let rec_config = RecognizerConfig {
            widths: config.rec_widths.clone(),
            ..RecognizerConfig::new(in_channels, n_classes)
        };
        Ok(Self {
            aug: AugmentationModel::new(in_channels, config.aug_width, seed.wrapping_mul(2).wrapping_add(1))?,
            rec: RecognizerModel::new(rec_config, seed.wrapping_mul(2))?,
        })
    }
}

/// Loss components and accuracy of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub gt_domain: u32,
    pub augmented: usize,
    pub recognition_batch: usize,
    pub l_amp: f64,
    pub l_pha: f64,
    pub l_aug: f64,
    pub l_clf: f64,
    pub l_triplet: f64,
    pub l_total: f64,
    /// Correct predictions among the original (unaugmented) samples.
    pub correct: usize,
    pub originals: usize,
}

/// Mean losses and training accuracy of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_amp: f64,
    pub l_pha: f64,
    pub l_aug: f64,
    pub l_clf: f64,
    pub l_triplet: f64,
    pub l_total: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
    pub target_accuracy: Option<f64>,
}

/// Training pool with per-(domain, class) indices for ground-truth pairing.
pub struct TrainPool<'a, T> {
    pub samples: &'a [LabeledSample<T>],
    pub domains: Vec<u32>,
    pub n_classes: usize,
    cells: BTreeMap<(u32, usize), Vec<usize>>,
}

impl<'a, T: Scalar> TrainPool<'a, T> {
    pub fn new(samples: &'a [LabeledSample<T>], n_classes: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
        let shape = first.signal.shape().to_vec();
        let mut cells: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.signal.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("sample {i} has shape {:?}, expected {shape:?}", s.signal.shape())));
            }
            if s.class_id >= n_classes {
                return Err(Error::ClassMismatch(format!("sample {i} has class {} >= {n_classes}", s.class_id)));
            }
            cells.entry((s.domain_id, s.class_id)).or_default().push(i);
        }
        let mut domains: Vec<u32> = cells.keys().map(|&(d, _)| d).collect();
        domains.dedup();
        if domains.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "training needs at least two source domains, got {domains:?}"
            )));
        }
        let class_set = |d: u32| cells.keys().filter(|&&(dd, _)| dd == d).map(|&(_, c)| c).collect::<Vec<_>>();
        let reference = class_set(domains[0]);
        for &d in &domains[1..] {
            if class_set(d) != reference {
                return Err(Error::ClassMismatch(format!(
                    "domain {d} has classes {:?}, domain {} has {reference:?}",
                    class_set(d),
                    domains[0]
                )));
            }
        }
        Ok(Self {
            samples,
            domains,
            n_classes,
            cells,
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.samples[0].signal.shape()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_id).collect()
    }

    /// Designated ground-truth domain of step `step`.
    pub fn gt_domain(&self, mode: GtDomainMode, step: usize) -> Result<u32> {
        match mode {
            GtDomainMode::Rotate => Ok(self.domains[step % self.domains.len()]),
            GtDomainMode::Fixed(d) if self.domains.contains(&d) => Ok(d),
            GtDomainMode::Fixed(d) => Err(Error::InvalidArgument(format!("ground-truth domain {d} is not a source domain"))),
        }
    }

    /// Uniformly drawn same-class sample of domain `g`.
    pub fn pair(&self, g: u32, class: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
        let cell = self
            .cells
            .get(&(g, class))
            .filter(|c| !c.is_empty())
            .ok_or(Error::MissingPairing { domain: g, class })?;
        Ok(cell[rng.random_range(0..cell.len())])
    }
}

fn stack_signals<T: Scalar>(samples: &[LabeledSample<T>], idx: &[usize]) -> Result<Tensor<T>> {
    let parts: Vec<&Tensor<T>> = idx.iter().map(|&i| &samples[i].signal).collect();
    Tensor::stack(&parts)
}

/// Optimizer state of both parameter groups.
#[derive(Clone, Debug)]
pub struct Optimizers<T> {
    pub aug: SgdMomentum<T>,
    pub rec: SgdMomentum<T>,
}

impl<T: Scalar> Optimizers<T> {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            aug: SgdMomentum::new(T::of(config.lr_aug), T::of(config.momentum)),
            rec: SgdMomentum::new(T::of(config.lr_rec), T::of(config.momentum)),
        }
    }
}

/// One optimization step on `batch` (indices into the pool).
pub fn train_step<T: Scalar>(
    models: &mut FarNet<T>,
    opt: &mut Optimizers<T>,
    pool: &TrainPool<'_, T>,
    batch: &[usize],
    step: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepLog> {
    let samples = pool.samples;
    let gt = pool.gt_domain(config.gt_domain_mode, step)?;
    let mut to_augment = Vec::new();
    let mut targets = Vec::new();
    if config.variant.uses_augmentation() {
        for &i in batch {
            if samples[i].domain_id != gt {
                to_augment.push(i);
                targets.push(pool.pair(gt, samples[i].class_id, rng)?);
            }
        }
    }
    let originals = stack_signals(samples, batch)?;
    let mut labels: Vec<usize> = batch.iter().map(|&i| samples[i].class_id).collect();
    labels.extend(to_augment.iter().map(|&i| samples[i].class_id));

    let tape = Tape::new();
    let aug_p = models.aug.store.bind(&tape, config.variant.uses_augmentation());
    let rec_p = models.rec.store.bind(&tape, true);
    let x_orig = tape.constant(originals);
    let zero = tape.constant(Tensor::scalar(T::zero()));
    let (union, l_amp, l_pha) = if to_augment.is_empty() {
        (x_orig, zero, zero)
    } else {
        let x_in = tape.constant(stack_signals(samples, &to_augment)?);
        let x_gt = tape.constant(stack_signals(samples, &targets)?);
        let out = models.aug.forward(&aug_p, x_in)?;
        let l_amp = augnet::loss_amp_var(out.x_out1, x_gt)?;
        let l_pha = augnet::loss_pha_var(out.x_out2, x_gt, config.phase_wrap_mode)?;
        (autograd::concat_batch(&[x_orig, out.x_out2])?, l_amp, l_pha)
    };
    let w = config.aug_weights();
    let l_aug = autograd::sum_scalars(&tape, &[(l_amp, T::of(w.lambda1)), (l_pha, T::of(w.lambda2))]);
    let emb = models.rec.embed_var(&rec_p, union, Mode::Train)?;
    let logits = models.rec.logits_var(&rec_p, emb)?;
    let l_clf = autograd::cross_entropy(logits, &labels)?;
    let (l_trip, alpha): (Var<'_, T>, T) = if config.variant.uses_triplet() {
        (metric::manifold_triplet_var(emb, &labels, config.manifold())?, T::of(config.alpha))
    } else {
        (zero, T::zero())
    };
    let total = autograd::sum_scalars(&tape, &[(l_aug, T::one()), (l_clf, T::one()), (l_trip, alpha)]);
    let preds = argmax_rows(&logits.value());
    let correct = preds.iter().zip(&labels).take(batch.len()).filter(|(p, l)| p == l).count();

    let grads = tape.backward(total);
    if config.variant.uses_augmentation() {
        let g = models.aug.store.gradients(&aug_p, &grads);
        opt.aug.step(&mut models.aug.store, g);
    }
    let g = models.rec.store.gradients(&rec_p, &grads);
    opt.rec.step(&mut models.rec.store, g);
    models.rec.store.commit(&rec_p);

    let log = StepLog {
        gt_domain: gt,
        augmented: to_augment.len(),
        recognition_batch: labels.len(),
        l_amp: l_amp.item().to_f64_lossy(),
        l_pha: l_pha.item().to_f64_lossy(),
        l_aug: l_aug.item().to_f64_lossy(),
        l_clf: l_clf.item().to_f64_lossy(),
        l_triplet: l_trip.item().to_f64_lossy(),
        l_total: total.item().to_f64_lossy(),
        correct,
        originals: batch.len(),
    };
    if ![log.l_amp, log.l_pha, log.l_clf, log.l_triplet, log.l_total].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite loss at step {step}: {log:?}")));
    }
    Ok(log)
}

/// Steps per epoch: `ceil(N / (P K))`.
pub fn steps_per_epoch(n_samples: usize, p: usize, k: usize) -> usize {
    n_samples.div_ceil(p * k).max(1)
}

/// Trains a fresh model on the pooled source samples with seed `seed`.
pub fn train_run<T: Scalar>(
    train: &[LabeledSample<T>],
    n_classes: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(FarNet<T>, RunHistory)> {
    config.validate()?;
    let pool = TrainPool::new(train, n_classes)?;
    let in_channels = pool.sample_shape()[0];
    let mut models = FarNet::new(in_channels, n_classes, config, seed)?;
    let mut opt = Optimizers::new(config);
    let mut sampler = PkSampler::new(&pool.labels(), config.batch_p, config.batch_k, seed ^ 0x5EED_0001)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0002);
    let steps = steps_per_epoch(train.len(), config.batch_p, config.batch_k);
    let mut history = RunHistory::default();
    for epoch in 0..config.epochs {
        let mut logs = Vec::with_capacity(steps);
        for s in 0..steps {
            let batch = sampler.next_batch();
            logs.push(train_step(&mut models, &mut opt, &pool, &batch, epoch * steps + s, config, &mut rng)?);
        }
        let mean = |f: fn(&StepLog) -> f64| logs.iter().map(f).sum::<f64>() / logs.len() as f64;
        let correct: usize = logs.iter().map(|l| l.correct).sum();
        let seen: usize = logs.iter().map(|l| l.originals).sum();
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            l_amp: mean(|l| l.l_amp),
            l_pha: mean(|l| l.l_pha),
            l_aug: mean(|l| l.l_aug),
            l_clf: mean(|l| l.l_clf),
            l_triplet: mean(|l| l.l_triplet),
            l_total: mean(|l| l.l_total),
            train_accuracy: correct as f64 / seen as f64,
        });
        history.steps.extend(logs);
    }
    Ok((models, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Classifies `samples` with the recognizer alone.
pub fn evaluate<T: Scalar>(models: &FarNet<T>, samples: &[LabeledSample<T>], batch: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let n_classes = models.rec.config.n_classes;
    let mut predictions = Vec::with_capacity(samples.len());
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (_, logits) = models.rec.infer(&stack_signals(samples, chunk)?)?;
        predictions.extend(argmax_rows(&logits));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.class_id).collect();
    let confusion = report::confusion_matrix(&predictions, &labels, n_classes)?;
    Ok(report_from_confusion(confusion, predictions))
}

/// Accuracy summary of a confusion matrix.
pub fn report_from_confusion(confusion: Vec<Vec<usize>>, predictions: Vec<usize>) -> EvalReport {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    EvalReport {
        accuracy: correct as f64 / total.max(1) as f64,
        per_class_accuracy,
        confusion,
        predictions,
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Outcome of one seed of a multi-run task.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub seed: u64,
    pub models: FarNet<T>,
    pub history: RunHistory,
    pub eval: EvalReport,
    pub seconds: f64,
}

/// Trains `config.runs` seeds and evaluates each on the target samples.
///
/// Seeds run on up to `config.workers` threads. `on_run` is called on the
/// calling thread in completion order; accuracies are returned in run order.
pub fn train_and_evaluate<T: Scalar>(
    train: &[LabeledSample<T>],
    test: &[LabeledSample<T>],
    n_classes: usize,
    config: &TrainConfig,
    mut on_run: impl FnMut(usize, &RunOutcome<T>) -> Result<()>,
) -> Result<Vec<f64>> {
    config.validate()?;
    let workers = config.worker_count().min(config.runs).max(1);
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let mut acc = vec![f64::NAN; config.runs];
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, failed) = (&next, &failed);
            scope.spawn(move || loop {
                let run = next.fetch_add(1, Ordering::SeqCst);
                if run >= config.runs || failed.load(Ordering::SeqCst) {
                    break;
                }
                let outcome = single_run(train, test, n_classes, config, run);
                if outcome.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                if tx.send((run, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for (run, outcome) in rx {
            let step = outcome.and_then(|o| {
                acc[run] = o.eval.accuracy;
                on_run(run, &o)
            });
            if let Err(e) = step {
                failed.store(true, Ordering::SeqCst);
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })?;
    Ok(acc)
}

fn single_run<T: Scalar>(
    train: &[LabeledSample<T>],
    test: &[LabeledSample<T>],
    n_classes: usize,
    config: &TrainConfig,
    run: usize,
) -> Result<RunOutcome<T>> {
    let seed = config.run_seed(run);
    let start = Instant::now();
    let (models, mut history) = train_run(train, n_classes, config, seed)?;
    let eval = evaluate(&models, test, config.eval_batch)?;
    history.target_accuracy = Some(eval.accuracy);
    Ok(RunOutcome {
        seed,
        models,
        history,
        eval,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Named group of configurations compared by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    Modules,
    LambdaSweep,
    KSweep,
}

impl std::str::FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modules" | "m1-m4" | "M1-M4" => Ok(Self::Modules),
            "lambda_sweep" | "lambda-sweep" => Ok(Self::LambdaSweep),
            "k_sweep" | "k-sweep" => Ok(Self::KSweep),
            other => Err(Error::UnknownSuite(other.to_string())),
        }
    }
}

impl AblationSuite {
    /// Row labels with the configuration of each row.
    pub fn rows(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        match self {
            Self::Modules => [Variant::M1, Variant::M2, Variant::M3, Variant::M4]
                .into_iter()
                .map(|v| {
                    (
                        v.name().to_string(),
                        TrainConfig {
                            variant: v,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            Self::LambdaSweep => (1..=5)
                .map(|ratio| {
                    (
                        format!("lambda2/lambda1={ratio}"),
                        TrainConfig {
                            variant: Variant::M4,
                            lambda2: base.lambda1 * ratio as f64,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            Self::KSweep => [1.0, 1.5, 2.0, 2.5, 3.0]
                .into_iter()
                .map(|k| {
                    (
                        format!("k={k}"),
                        TrainConfig {
                            variant: Variant::M4,
                            k,
                            ..base.clone()
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Runs every row of `suite` and aggregates target accuracy over runs.
pub fn run_ablation<T: Scalar>(
    suite: AblationSuite,
    base: &TrainConfig,
    train: &[LabeledSample<T>],
    test: &[LabeledSample<T>],
    n_classes: usize,
) -> Result<Vec<AblationRow>> {
    suite
        .rows(base)
        .into_iter()
        .map(|(label, cfg)| {
            let accuracies = train_and_evaluate(train, test, n_classes, &cfg, |_, _| Ok(()))?;
            let (mean, std) = mean_std(&accuracies);
            Ok(AblationRow {
                label,
                accuracies,
                mean,
                std,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_composition() {
        assert!((total_loss(0.5f64, 1.0, 2.0, 0.01) - 1.52).abs() < 1e-15);
        assert_eq!(total_loss(0.5f64, 1.0, 2.0, 0.0), 1.5);
        assert_eq!(total_loss(0.0f64, 0.0, 0.0, 0.01), 0.0);
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[1.0, 2.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TrainConfig {
            gt_domain_mode: GtDomainMode::Fixed(1),
            phase_wrap_mode: PhaseWrapMode::Wrapped,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert!(TrainConfig::from_toml("epochs = 0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn momentum_update() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let g = || vec![Some(Tensor::from_vec(&[2], vec![0.5, 2.0]).unwrap())];
        opt.step(&mut store, g());
        opt.step(&mut store, g());
        // v1 = g, v2 = 0.9 g + g = 1.9 g; p = p0 - 0.1 (g + 1.9 g) = p0 - 0.29 g
        let w = store.get(store.find("w").unwrap());
        assert!((w.data()[0] - (1.0 - 0.29 * 0.5)).abs() < 1e-15);
        assert!((w.data()[1] - (-1.0 - 0.29 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn unknown_suite() {
        assert!(matches!("m5".parse::<AblationSuite>(), Err(Error::UnknownSuite(_))));
        assert_eq!(AblationSuite::KSweep.rows(&TrainConfig::default()).len(), 5);
    }
}

//! Sample model, on-disk dataset format, synthetic generator and PK sampling.
//!
//! A dataset directory holds `manifest.json` and one raw record file per
//! sample. Records are little-endian IEEE-754 `f32` values laid out
//! channel-major, then row-major over `H` and `W`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One signal `[C, H, W]` with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub signal: Tensor<T>,
    pub class_id: usize,
    pub domain_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    /// Path relative to the dataset directory, `/`-separated.
    pub path: String,
    pub class_id: usize,
    pub domain_id: u32,
    pub byte_length: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub class_id: usize,
    pub domain_id: u32,
    pub split: Split,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// `(C, H, W)`.
    pub sample_shape: [usize; 3],
    pub n_classes: usize,
    pub domains: Vec<DomainInfo>,
    pub records: Vec<RecordEntry>,
    /// Declared record count per `(class, domain, split)` cell.
    pub counts: Vec<CellCount>,
}

impl DatasetManifest {
    pub fn record_bytes(&self) -> u64 {
        4 * self.sample_shape.iter().product::<usize>() as u64
    }

    pub fn domain_ids(&self) -> Vec<u32> {
        self.domains.iter().map(|d| d.id).collect()
    }

    /// Indices of records matching the given domains and split.
    pub fn select(&self, domains: &[u32], split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split && domains.contains(&self.records[i].domain_id))
            .collect()
    }

    /// Structural checks that need no file access.
    pub fn check_consistency(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let [c, h, w] = self.sample_shape;
        if c == 0 || h < 8 || w == 0 {
            return Err(Error::Manifest(format!("invalid sample shape {:?}", self.sample_shape)));
        }
        let ids: BTreeSet<u32> = self.domain_ids().into_iter().collect();
        if ids.len() != self.domains.len() {
            return Err(Error::Manifest("duplicate domain id".into()));
        }
        let mut tally: BTreeMap<(usize, u32, Split), usize> = BTreeMap::new();
        for r in &self.records {
            if r.class_id >= self.n_classes {
                return Err(Error::Manifest(format!("{}: class {} >= {}", r.path, r.class_id, self.n_classes)));
            }
            if !ids.contains(&r.domain_id) {
                return Err(Error::Manifest(format!("{}: unknown domain {}", r.path, r.domain_id)));
            }
            if r.byte_length != self.record_bytes() {
                return Err(Error::Manifest(format!(
                    "{}: declared {} bytes, shape needs {}",
                    r.path,
                    r.byte_length,
                    self.record_bytes()
                )));
            }
            *tally.entry((r.class_id, r.domain_id, r.split)).or_default() += 1;
        }
        let declared: BTreeMap<_, _> = self
            .counts
            .iter()
            .map(|c| ((c.class_id, c.domain_id, c.split), c.count))
            .filter(|&(_, n)| n > 0)
            .collect();
        if declared != tally {
            return Err(Error::Manifest("record counts do not match declared cell counts".into()));
        }
        Ok(())
    }

    /// Full validation, including every record file's existence and length.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.check_consistency()?;
        for r in &self.records {
            let path = root.join(&r.path);
            let found = fs::metadata(&path).at(&path)?.len();
            if found != r.byte_length {
                return Err(Error::Corrupt {
                    path,
                    expected: r.byte_length,
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).at(&path)?;
        let m: Self = serde_json::from_str(&text)?;
        m.check_consistency()?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").at(&path)
    }
}

/// Encodes a signal as little-endian `f32` bytes.
pub fn encode_record<T: Scalar>(signal: &Tensor<T>) -> Vec<u8> {
    signal.data().iter().flat_map(|v| v.to_f32_lossy().to_le_bytes()).collect()
}

/// Decodes little-endian `f32` bytes into a `[C, H, W]` tensor.
pub fn decode_record<T: Scalar>(bytes: &[u8], shape: [usize; 3]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::Shape(format!("{} bytes for shape {shape:?}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Tensor::from_vec(&shape, data)
}

/// Loads record `index` of the dataset rooted at `root`.
pub fn load_sample<T: Scalar>(root: &Path, manifest: &DatasetManifest, index: usize) -> Result<LabeledSample<T>> {
    let r = manifest.records.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: manifest.records.len(),
    })?;
    let path = root.join(&r.path);
    let bytes = fs::read(&path).at(&path)?;
    if bytes.len() as u64 != r.byte_length || r.byte_length != manifest.record_bytes() {
        return Err(Error::Corrupt {
            path,
            expected: manifest.record_bytes(),
            found: bytes.len() as u64,
        });
    }
    let signal = decode_record(&bytes, manifest.sample_shape)?;
    if !signal.all_finite() {
        return Err(Error::Manifest(format!("{}: non-finite values", r.path)));
    }
    Ok(LabeledSample {
        signal,
        class_id: r.class_id,
        domain_id: r.domain_id,
    })
}

/// A dataset directory opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = DatasetManifest::read(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn load<T: Scalar>(&self, index: usize) -> Result<LabeledSample<T>> {
        load_sample(&self.root, &self.manifest, index)
    }

    /// Loads every record of `split` whose domain is in `domains`.
    pub fn load_split<T: Scalar>(&self, domains: &[u32], split: Split) -> Result<Vec<LabeledSample<T>>> {
        self.manifest.select(domains, split).into_iter().map(|i| self.load(i)).collect()
    }
}

/// Writes samples and their manifest into `out_dir`.
pub fn write_dataset<T: Scalar>(
    out_dir: &Path,
    sample_shape: [usize; 3],
    n_classes: usize,
    domains: Vec<DomainInfo>,
    samples: impl IntoIterator<Item = (LabeledSample<T>, Split)>,
) -> Result<DatasetManifest> {
    for split in [Split::Train, Split::Test] {
        let dir = out_dir.join("records").join(split.as_str());
        fs::create_dir_all(&dir).at(&dir)?;
    }
    let mut records = Vec::new();
    let mut tally: BTreeMap<(usize, u32, Split), usize> = BTreeMap::new();
    for (s, split) in samples {
        if s.signal.shape() != sample_shape {
            return Err(Error::Shape(format!(
                "sample {:?} in dataset of shape {sample_shape:?}",
                s.signal.shape()
            )));
        }
        if !s.signal.all_finite() {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        let n = tally.entry((s.class_id, s.domain_id, split)).or_default();
        let rel = format!("records/{}/d{}_c{}_{:05}.f32", split.as_str(), s.domain_id, s.class_id, *n);
        *n += 1;
        let bytes = encode_record(&s.signal);
        let path = out_dir.join(&rel);
        fs::write(&path, &bytes).at(&path)?;
        records.push(RecordEntry {
            path: rel,
            class_id: s.class_id,
            domain_id: s.domain_id,
            byte_length: bytes.len() as u64,
            split,
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        sample_shape,
        n_classes,
        domains,
        records,
        counts: tally
            .into_iter()
            .map(|((class_id, domain_id, split), count)| CellCount {
                class_id,
                domain_id,
                split,
                count,
            })
            .collect(),
    };
    manifest.check_consistency()?;
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Parameters of the synthetic multi-domain bearing-signal generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_domains: usize,
    pub train_per_cell: usize,
    pub test_per_cell: usize,
    /// `(C, H, W)`.
    pub shape: [usize; 3],
    pub base_fault_freq_hz: f64,
    pub class_freq_step_hz: f64,
    pub domain_speed_factors: Vec<f64>,
    pub domain_amplitude_scales: Vec<f64>,
    pub noise_sigma: f64,
    pub sample_rate_hz: f64,
    /// Carrier frequency of each impulse burst.
    pub resonance_hz: f64,
    /// Exponential decay rate of each burst, per second.
    pub decay: f64,
    /// Half-width of the uniform per-record gain around 1.
    pub gain_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_domains: 3,
            train_per_cell: 50,
            test_per_cell: 25,
            shape: [1, 2048, 1],
            base_fault_freq_hz: 20.0,
            class_freq_step_hz: 10.0,
            domain_speed_factors: vec![1.0, 1.1, 1.05],
            domain_amplitude_scales: vec![1.0, 2.0, 1.5],
            noise_sigma: 0.1,
            sample_rate_hz: 2048.0,
            resonance_hz: 600.0,
            decay: 400.0,
            gain_jitter: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_classes == 0 || self.n_domains == 0 {
            return bad("class and domain counts must be positive".into());
        }
        if self.train_per_cell + self.test_per_cell == 0 {
            return bad("per-cell counts are both zero".into());
        }
        let [c, h, w] = self.shape;
        if c == 0 || h < 8 || w == 0 {
            return bad(format!("invalid shape {:?}", self.shape));
        }
        for (name, v) in [
            ("base_fault_freq_hz", self.base_fault_freq_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("resonance_hz", self.resonance_hz),
            ("decay", self.decay),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.class_freq_step_hz.is_finite() && self.class_freq_step_hz >= 0.0) {
            return bad(format!("class_freq_step_hz must be >= 0, got {}", self.class_freq_step_hz));
        }
        if !(self.gain_jitter.is_finite() && (0.0..1.0).contains(&self.gain_jitter)) {
            return bad(format!("gain_jitter must lie in [0, 1), got {}", self.gain_jitter));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (name, list) in [
            ("domain_speed_factors", &self.domain_speed_factors),
            ("domain_amplitude_scales", &self.domain_amplitude_scales),
        ] {
            if list.len() != self.n_domains {
                return bad(format!("{name} has {} entries for {} domains", list.len(), self.n_domains));
            }
            if list.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Impulse repetition frequency of a class in a domain.
    pub fn repetition_hz(&self, class_id: usize, domain: usize) -> f64 {
        (self.base_fault_freq_hz + class_id as f64 * self.class_freq_step_hz) * self.domain_speed_factors[domain]
    }

    /// Generates one record. Every record draws from its own random stream,
    /// so the output depends only on the spec and the record coordinates.
    pub fn synthesize(&self, class_id: usize, domain: usize, split: Split, index: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let split_bit = matches!(split, Split::Test) as u64;
        let cell = ((class_id as u64 * self.n_domains as u64 + domain as u64) * 2 + split_bit) << 32;
        rng.set_stream(cell | index as u64);
        let [c, h, w] = self.shape;
        let n = h * w;
        let fs = self.sample_rate_hz;
        let period = 1.0 / self.repetition_hz(class_id, domain);
        let scale = self.domain_amplitude_scales[domain] * (1.0 + self.gain_jitter * rng.random_range(-1.0..=1.0));
        let noise = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
        let duration = n as f64 / fs;
        // Bursts whose tail is negligible are skipped.
        let tail = 12.0 / self.decay;
        let mut data = vec![0f32; c * n];
        for ch in 0..c {
            let offset = rng.random_range(0.0..period);
            let mut plane = vec![0f64; n];
            let mut start = offset - period * (tail / period).ceil();
            while start < duration {
                let gain = 1.0 + 0.1 * rng.random_range(-1.0..1.0);
                let first = ((start * fs).ceil().max(0.0)) as usize;
                let last = (((start + tail) * fs).floor() as usize).min(n.saturating_sub(1));
                for (i, v) in plane.iter_mut().enumerate().take(last + 1).skip(first) {
                    let t = i as f64 / fs - start;
                    if t >= 0.0 {
                        *v += gain * (-self.decay * t).exp() * (std::f64::consts::TAU * self.resonance_hz * t).sin();
                    }
                }
                start += period;
            }
            for (i, v) in plane.into_iter().enumerate() {
                data[ch * n + i] = (scale * v + noise.sample(&mut rng)) as f32;
            }
        }
        Tensor::from_vec(&self.shape, data).expect("synth shape")
    }
}

/// Writes the synthetic dataset described by `spec` into `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let domains = (0..spec.n_domains)
        .map(|d| DomainInfo {
            id: d as u32,
            name: format!(
                "speed{:.2}_amp{:.2}",
                spec.domain_speed_factors[d], spec.domain_amplitude_scales[d]
            ),
        })
        .collect();
    let mut cells = Vec::new();
    for split in [Split::Train, Split::Test] {
        let per = match split {
            Split::Train => spec.train_per_cell,
            Split::Test => spec.test_per_cell,
        };
        for d in 0..spec.n_domains {
            for class_id in 0..spec.n_classes {
                for i in 0..per {
                    cells.push((class_id, d, split, i));
                }
            }
        }
    }
    let samples = cells.into_iter().map(|(class_id, d, split, i)| {
        (
            LabeledSample {
                signal: spec.synthesize(class_id, d, split, i),
                class_id,
                domain_id: d as u32,
            },
            split,
        )
    });
    write_dataset(out_dir, spec.shape, spec.n_classes, domains, samples)
}

/// Splits a continuous single-channel recording into non-overlapping windows
/// of `window` samples in file order. Each window is reflection-padded at
/// the end up to `padded` samples.
pub fn window_recording(recording: &[f32], window: usize, count: usize, padded: usize) -> Result<Vec<Tensor<f32>>> {
    if window == 0 || padded < window {
        return Err(Error::InvalidArgument(format!("window {window}, padded length {padded}")));
    }
    if padded - window >= window {
        return Err(Error::InvalidArgument("padding longer than the window".into()));
    }
    if recording.len() < window * count {
        return Err(Error::InvalidArgument(format!(
            "recording of {} samples holds fewer than {count} windows of {window}",
            recording.len()
        )));
    }
    Ok((0..count)
        .map(|k| {
            let win = &recording[k * window..(k + 1) * window];
            let mut v = win.to_vec();
            v.extend((0..padded - window).map(|j| win[window - 2 - j.min(window - 2)]));
            Tensor::from_vec(&[1, padded, 1], v).expect("window shape")
        })
        .collect())
}

/// Smallest multiple of 4 that is `>= h`.
pub fn padded_height(h: usize) -> usize {
    h.div_ceil(4) * 4
}

/// One raw recording to convert: little-endian `f32`, single channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionSource {
    pub path: PathBuf,
    pub class_id: usize,
    pub domain_id: u32,
}

/// Converter contract for real recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionSpec {
    pub window: usize,
    pub train_per_cell: usize,
    pub test_per_cell: usize,
    pub n_classes: usize,
    pub domains: Vec<DomainInfo>,
    pub sources: Vec<ConversionSource>,
}

/// Windows each recording (train windows first, then test) into a dataset.
pub fn convert_recordings(spec: &ConversionSpec, base: &Path, out_dir: &Path) -> Result<DatasetManifest> {
    let h = padded_height(spec.window);
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut samples = Vec::new();
    for src in &spec.sources {
        let path = base.join(&src.path);
        let bytes = fs::read(&path).at(&path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Corrupt {
                path,
                expected: bytes.len() as u64 / 4 * 4,
                found: bytes.len() as u64,
            });
        }
        let rec: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let windows = window_recording(&rec, spec.window, spec.train_per_cell + spec.test_per_cell, h)?;
        for (i, signal) in windows.into_iter().enumerate() {
            let split = if i < spec.train_per_cell { Split::Train } else { Split::Test };
            samples.push((
                LabeledSample {
                    signal,
                    class_id: src.class_id,
                    domain_id: src.domain_id,
                },
                split,
            ));
        }
    }
    write_dataset(out_dir, [1, h, 1], spec.n_classes, spec.domains.clone(), samples)
}

/// Deterministic PK batch sampler over class labels.
///
/// Each batch holds `min(P, classes)` distinct classes with exactly `K`
/// indices each. Indices of a class are drawn without replacement from a
/// shuffled pool that is reshuffled whenever it runs out.
#[derive(Clone, Debug)]
pub struct PkSampler {
    p: usize,
    k: usize,
    classes: Vec<usize>,
    pools: BTreeMap<usize, (Vec<usize>, usize)>,
    rng: ChaCha8Rng,
}

impl PkSampler {
    pub fn new(labels: &[usize], p: usize, k: usize, seed: u64) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("P and K must be positive, got P={p}, K={k}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            by_class.entry(c).or_default().push(i);
        }
        if by_class.is_empty() {
            return Err(Error::InvalidArgument("no samples to sample from".into()));
        }
        let classes = by_class.keys().copied().collect();
        let pools = by_class
            .into_iter()
            .map(|(c, mut idx)| {
                idx.shuffle(&mut rng);
                (c, (idx, 0))
            })
            .collect();
        Ok(Self { p, k, classes, pools, rng })
    }

    /// Classes per batch after clamping.
    pub fn classes_per_batch(&self) -> usize {
        self.p.min(self.classes.len())
    }

    pub fn batch_size(&self) -> usize {
        self.classes_per_batch() * self.k
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut chosen = self.classes.clone();
        if chosen.len() > self.p {
            chosen.shuffle(&mut self.rng);
            chosen.truncate(self.p);
            chosen.sort_unstable();
        }
        let mut batch = Vec::with_capacity(chosen.len() * self.k);
        for c in chosen {
            let (pool, pos) = self.pools.get_mut(&c).expect("known class");
            for _ in 0..self.k {
                if *pos == pool.len() {
                    pool.shuffle(&mut self.rng);
                    *pos = 0;
                }
                batch.push(pool[*pos]);
                *pos += 1;
            }
        }
        batch
    }
}

/// The first `n_batches` batches of a [`PkSampler`].
pub fn pk_batches(labels: &[usize], p: usize, k: usize, seed: u64, n_batches: usize) -> Result<Vec<Vec<usize>>> {
    let mut s = PkSampler::new(labels, p, k, seed)?;
    Ok((0..n_batches).map(|_| s.next_batch()).collect())
}

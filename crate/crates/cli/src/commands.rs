use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use farnet::checkpoint::{self, CheckpointMeta};
use farnet::dataset::{convert_recordings, generate_synthetic, ConversionSpec, Dataset, SynthSpec};
use farnet::error::IoContext;
use farnet::report::{self, EmbeddingRow, RunMetrics, RunSummary};
use farnet::spectral::{amplitude_swap, dft2, polar};
use farnet::trainer::{evaluate, run_ablation, train_and_evaluate, TrainConfig};
use farnet::{Error, FarNet32, Sample32};

use crate::{
    AblateArgs, CliError, ConvertArgs, EvalArgs, ExportArgs, Overrides, PreviewArgs, StatsArgs, SynthArgs, Task,
    TrainArgs, RUN_ROOT_ENV,
};

type Result<T> = std::result::Result<T, CliError>;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

fn create_dir(dir: &Path) -> Result<()> {
    Ok(fs::create_dir_all(dir).at(dir)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(fs::write(path, text).at(path)?)
}

fn join_ids<T: ToString>(ids: &[T]) -> String {
    ids.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => toml::from_str(&fs::read_to_string(path).at(path)?).map_err(Error::from)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = a.classes {
        spec.n_classes = n;
    }
    if let Some(n) = a.domains {
        if n != spec.domain_speed_factors.len() {
            spec.domain_speed_factors = (0..n).map(|d| 1.0 + 0.05 * d as f64).collect();
            spec.domain_amplitude_scales = (0..n).map(|d| 1.0 + 0.5 * d as f64).collect();
        }
        spec.n_domains = n;
    }
    if let Some(n) = a.train_per_cell {
        spec.train_per_cell = n;
    }
    if let Some(n) = a.test_per_cell {
        spec.test_per_cell = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let m = generate_synthetic(&spec, &a.out)?;
    println!(
        "wrote {} records ({} classes, {} domains) to {}",
        m.records.len(),
        m.n_classes,
        m.domains.len(),
        a.out.display()
    );
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let spec: ConversionSpec = report::read_json(&a.spec)?;
    let base = a
        .base
        .unwrap_or_else(|| a.spec.parent().map(Path::to_path_buf).unwrap_or_default());
    let m = convert_recordings(&spec, &base, &a.out)?;
    println!("wrote {} records to {}", m.records.len(), a.out.display());
    Ok(())
}

fn load_config(o: &Overrides) -> Result<TrainConfig> {
    let mut c = match &o.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.runs {
        c.runs = v;
    }
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.workers {
        c.workers = v;
    }
    Ok(c)
}

struct TaskData {
    dataset: Dataset,
    train: Vec<Sample32>,
    test: Vec<Sample32>,
    name: String,
}

fn load_task(t: &Task) -> Result<TaskData> {
    if t.sources.contains(&t.target) {
        return Err(CliError::Usage(format!("target domain {} is also a source", t.target)));
    }
    let mut sorted = t.sources.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != t.sources.len() {
        return Err(CliError::Usage("source domains repeat".into()));
    }
    let dataset = Dataset::open(&t.data)?;
    let known = dataset.manifest.domain_ids();
    for d in t.sources.iter().chain([&t.target]) {
        if !known.contains(d) {
            return Err(Error::InvalidArgument(format!("dataset has no domain {d} (domains: {})", join_ids(&known))).into());
        }
    }
    let train = dataset.load_split(&t.sources, farnet::dataset::Split::Train)?;
    let test = dataset.load_split(&[t.target], farnet::dataset::Split::Test)?;
    let name = format!("{}->{}", join_ids(&t.sources), t.target);
    Ok(TaskData {
        dataset,
        train,
        test,
        name,
    })
}

/// `--out`, or a directory named `stem` under the run root.
fn run_dir(out: &Option<PathBuf>, stem: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(stem)
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(&a.overrides)?;
    if let Some(v) = a.variant {
        config.variant = v.into();
    }
    config.validate()?;
    let task = load_task(&a.task)?;
    let stem = format!(
        "train-{}-to-{}-{}",
        join_ids(&a.task.sources).replace(',', "_"),
        a.task.target,
        config.variant.name()
    );
    let dir = run_dir(&a.overrides.out, &stem);
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &config.to_toml()?)?;
    let manifest = &task.dataset.manifest;
    let meta = CheckpointMeta {
        sample_shape: manifest.sample_shape,
        n_classes: manifest.n_classes,
        config: config.clone(),
    };
    eprintln!(
        "task {}: {} train / {} test samples, {} runs of {} epochs, variant {}",
        task.name,
        task.train.len(),
        task.test.len(),
        config.runs,
        config.epochs,
        config.variant.name()
    );
    let start = Instant::now();
    let accuracies = train_and_evaluate(&task.train, &task.test, manifest.n_classes, &config, |run, o| {
        let rd = dir.join(format!("run-{run:02}"));
        fs::create_dir_all(&rd).at(&rd)?;
        report::write_history(&rd.join(report::HISTORY_FILE), &o.history.epochs)?;
        report::write_steps(&rd.join(report::STEPS_FILE), &o.history.steps)?;
        report::write_confusion(&rd.join(report::CONFUSION_FILE), &o.eval.confusion)?;
        report::write_json(
            &rd.join(report::METRICS_FILE),
            &RunMetrics {
                seed: o.seed,
                seconds: o.seconds,
                eval: o.eval.clone(),
            },
        )?;
        checkpoint::save(&rd.join(CHECKPOINT_FILE), &o.models, &meta)?;
        eprintln!("run {run} (seed {}): target accuracy {:.4} in {:.1}s", o.seed, o.eval.accuracy, o.seconds);
        Ok(())
    })?;
    let summary = RunSummary::new(task.name, config.variant.name(), accuracies, start.elapsed().as_secs_f64());
    report::write_json(&dir.join(report::SUMMARY_FILE), &summary)?;
    let table = report::render_table(
        &["task", "variant", "runs", "accuracy (%)"],
        &[vec![
            summary.task.clone(),
            summary.variant.clone(),
            summary.accuracies.len().to_string(),
            report::format_mean_std(summary.mean, summary.std),
        ]],
    );
    write_text(&dir.join("summary.txt"), &table)?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path, dataset: &Dataset) -> Result<FarNet32> {
    let (models, meta) = checkpoint::load::<f32>(path)?;
    let m = &dataset.manifest;
    if meta.n_classes != m.n_classes {
        return Err(Error::ClassMismatch(format!(
            "checkpoint {} was trained on {} classes but the dataset has {}",
            path.display(),
            meta.n_classes,
            m.n_classes
        ))
        .into());
    }
    if meta.sample_shape[0] != m.sample_shape[0] {
        return Err(Error::Shape(format!(
            "checkpoint expects {} input channels, dataset samples have {}",
            meta.sample_shape[0], m.sample_shape[0]
        ))
        .into());
    }
    Ok(models)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let models = load_checkpoint(&a.checkpoint, &dataset)?;
    let samples: Vec<Sample32> = dataset.load_split(&a.domains, a.split.into())?;
    let start = Instant::now();
    let r = evaluate(&models, &samples, 64)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        report::write_confusion(&dir.join(report::CONFUSION_FILE), &r.confusion)?;
        report::write_json(
            &dir.join(report::METRICS_FILE),
            &RunMetrics {
                seed: 0,
                seconds: start.elapsed().as_secs_f64(),
                eval: r.clone(),
            },
        )?;
    }
    println!("accuracy {:.4} on {} samples", r.accuracy, samples.len());
    let rows: Vec<Vec<String>> = r
        .per_class_accuracy
        .iter()
        .enumerate()
        .map(|(c, acc)| vec![c.to_string(), acc.map_or("n/a".into(), |v| format!("{:.4}", v))])
        .collect();
    print!("{}", report::render_table(&["class", "accuracy"], &rows));
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let config = load_config(&a.overrides)?;
    config.validate()?;
    let task = load_task(&a.task)?;
    let suite = format!("{:?}", a.suite).to_lowercase();
    let dir = run_dir(
        &a.overrides.out,
        &format!(
            "ablate-{suite}-{}-to-{}",
            join_ids(&a.task.sources).replace(',', "_"),
            a.task.target
        ),
    );
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &config.to_toml()?)?;
    let rows = run_ablation(a.suite, &config, &task.train, &task.test, task.dataset.manifest.n_classes)?;
    let mut csv = String::from("label,mean,std,accuracies\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.label, r.mean, r.std, join_ids(&r.accuracies).replace(',', ";")));
    }
    write_text(&dir.join("ablation.csv"), &csv)?;
    let table = report::render_table(
        &["row", "accuracy (%)"],
        &rows
            .iter()
            .map(|r| vec![r.label.clone(), report::format_mean_std(r.mean, r.std)])
            .collect::<Vec<_>>(),
    );
    write_text(&dir.join("ablation.txt"), &table)?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn preview_swap(a: PreviewArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let pick = |domain: u32| -> Result<Sample32> {
        let idx = dataset
            .manifest
            .select(&[domain], a.split.into())
            .into_iter()
            .filter(|&i| dataset.manifest.records[i].class_id == a.class)
            .nth(a.index)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "domain {domain} has no sample {} of class {} in the {} split",
                    a.index,
                    a.class,
                    farnet::dataset::Split::from(a.split).as_str()
                ))
            })?;
        Ok(dataset.load(idx)?)
    };
    let xa = pick(a.domain_a)?.signal.cast::<f64>();
    let xb = pick(a.domain_b)?.signal.cast::<f64>();
    let ab = amplitude_swap(&xa, &xb)?;
    let ba = amplitude_swap(&xb, &xa)?;
    create_dir(&a.out)?;
    let mut signals = String::from("index,a,b,phase_a_amplitude_b,phase_b_amplitude_a\n");
    for i in 0..xa.len() {
        signals.push_str(&format!("{i},{},{},{},{}\n", xa.data()[i], xb.data()[i], ab.data()[i], ba.data()[i]));
    }
    write_text(&a.out.join("signals.csv"), &signals)?;
    let spectra = [&xa, &xb, &ab, &ba].map(|x| dft2(x).map(|s| polar(&s)));
    let [pa, pb, pab, pba] = spectra;
    let (pa, pb, pab, pba) = (pa?, pb?, pab?, pba?);
    let mut csv = String::from("bin,amplitude_a,phase_a,amplitude_b,phase_b,amplitude_ab,phase_ab,amplitude_ba,phase_ba\n");
    for i in 0..xa.len() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            pa.amplitude.data()[i],
            pa.phase.data()[i],
            pb.amplitude.data()[i],
            pb.phase.data()[i],
            pab.amplitude.data()[i],
            pab.phase.data()[i],
            pba.amplitude.data()[i],
            pba.phase.data()[i]
        ));
    }
    write_text(&a.out.join("spectra.csv"), &csv)?;
    println!("wrote signals.csv and spectra.csv to {}", a.out.display());
    Ok(())
}

pub fn domain_stats(a: StatsArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let domains = dataset.manifest.domain_ids();
    let mut samples: Vec<Sample32> = Vec::new();
    let splits = match a.split {
        Some(s) => vec![s.into()],
        None => vec![farnet::dataset::Split::Train, farnet::dataset::Split::Test],
    };
    for s in splits {
        samples.extend(dataset.load_split::<f32>(&domains, s)?);
    }
    let stats = report::domain_stats(&samples, a.classes.as_deref())?;
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        report::write_json(out, &stats)?;
    }
    let rows: Vec<Vec<String>> = stats
        .pairs
        .iter()
        .map(|(d1, d2, amp, pha)| vec![format!("{d1}-{d2}"), format!("{amp:.6}"), format!("{pha:.6}")])
        .collect();
    print!("{}", report::render_table(&["domains", "amplitude", "phase"], &rows));
    println!(
        "amplitude distance {:.6}, phase distance {:.6}, rho {}",
        stats.amplitude_distance,
        stats.phase_distance,
        stats.rho.map_or("n/a".to_string(), |r| format!("{r:.4}"))
    );
    Ok(())
}

pub fn export_embeddings(a: ExportArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let models = load_checkpoint(&a.checkpoint, &dataset)?;
    let domains = a.domains.clone().unwrap_or_else(|| dataset.manifest.domain_ids());
    let samples: Vec<Sample32> = dataset.load_split(&domains, a.split.into())?;
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let refs: Vec<_> = chunk.iter().map(|s| &s.signal).collect();
        let e = models.rec.embed(&farnet::Tensor::stack(&refs)?)?;
        let dim = e.shape()[1];
        for (s, v) in chunk.iter().zip(e.data().chunks(dim)) {
            rows.push(EmbeddingRow {
                domain_id: s.domain_id,
                class_id: s.class_id,
                vector: v.iter().map(|&x| x as f64).collect(),
            });
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report::write_embeddings(&a.out, &rows)?;
    println!("wrote {} embeddings to {}", rows.len(), a.out.display());
    Ok(())
}

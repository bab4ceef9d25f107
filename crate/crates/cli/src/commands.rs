use std::fs;
use std::path::Path;

use mgsgan::autodiff::Graph;
use mgsgan::data::{load_dataset, make_synthetic, save_dataset, split_tttr, DataFormat, SpectralDataset, SplitSpec, SynthSpec};
use mgsgan::eval::{mcnemar_with, Comparison, EvalReport, MethodSummary, RunMetrics};
use mgsgan::models::{read_checkpoint, write_checkpoint, GanModel, NoiseLaw};
use mgsgan::nn::BnMode;
use mgsgan::rng::{seeded, stream};
use mgsgan::train::{train_with_hook, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::settings::{parse_pairs, RunSettings};
use crate::{CliError, EvalArgs, ExportArgs, SynthArgs, TrainArgs};

pub const MANIFEST: &str = "manifest.json";

fn load(path: &Path) -> Result<SpectralDataset, CliError> {
    Ok(load_dataset(path, DataFormat::from_path(path))?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    if a.sizes.len() != a.classes {
        return Err(CliError::Usage(format!(
            "--sizes lists {} classes but --classes is {}",
            a.sizes.len(),
            a.classes
        )));
    }
    let mut spec = SynthSpec::new(a.seed, a.bands, a.sizes.clone(), a.overlap);
    if let Some(noise) = a.noise {
        spec.noise = noise;
    }
    let ds = make_synthetic(&spec)?;
    save_dataset(&ds, &a.out, DataFormat::from_path(&a.out))?;
    println!("wrote {} samples ({} classes, {} bands) to {}", ds.len(), ds.classes(), ds.bands(), a.out.display());
    Ok(())
}

pub fn convert(input: &Path, output: &Path) -> Result<(), CliError> {
    let ds = load(input)?;
    save_dataset(&ds, output, DataFormat::from_path(output))?;
    Ok(())
}

/// Artifacts of one seed, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub dir: String,
    pub checkpoint: String,
    pub runlog: String,
    pub train_data: String,
    pub test_data: String,
    pub config: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Settings snapshot in `key=value` form; `train --config` accepts it.
    pub config: String,
    pub train_config: TrainConfig,
    pub tttr: f64,
    pub dataset: String,
    pub dataset_sha256: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub runs: Vec<RunEntry>,
}

fn train_settings(a: &TrainArgs) -> Result<RunSettings, CliError> {
    let mut s = RunSettings::default();
    if let Some(path) = &a.config {
        s.apply(&parse_pairs(&fs::read_to_string(path)?)?)?;
    }
    let flags = [
        ("mode", &a.mode),
        ("tttr", &a.tttr),
        ("epochs", &a.epochs),
        ("seed", &a.seed),
        ("seeds", &a.seeds),
        ("batch", &a.batch),
        ("lr", &a.lr),
        ("beta1", &a.beta1),
        ("beta2", &a.beta2),
        ("noise-dim", &a.noise_dim),
        ("margin", &a.margin),
        ("prior-mode", &a.prior_mode),
        ("generator-loss", &a.generator_loss),
        ("noise-law", &a.noise_law),
        ("checkpoint-interval", &a.checkpoint_interval),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v)?;
        }
    }
    for pair in &a.extra {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        s.set(k.trim(), v.trim())?;
    }
    Ok(s)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let settings = train_settings(a)?;
    let bytes = fs::read(&a.data)?;
    let data = load(&a.data)?;
    fs::create_dir_all(&a.out)?;
    let mut runs = Vec::new();
    for &seed in &settings.seeds {
        let run = settings.for_seed(seed);
        let dir_name = format!("seed-{seed}");
        let dir = a.out.join(&dir_name);
        fs::create_dir_all(&dir)?;
        let (train_raw, test_raw) = split_tttr(&data, SplitSpec { tttr: run.tttr, seed })?;
        let (train, test) = SpectralDataset::normalize_split(&train_raw, &test_raw)?;
        save_dataset(&train, &dir.join("train.bin"), DataFormat::Bin)?;
        save_dataset(&test, &dir.join("test.bin"), DataFormat::Bin)?;
        fs::write(dir.join("config.txt"), run.render())?;
        log::info!("seed {seed}: {} train / {} test samples", train.len(), test.len());
        let hook_dir = dir.clone();
        let result = train_with_hook(&train, &run.train, |epoch, model| {
            write_checkpoint(model, &hook_dir.join(format!("checkpoint-epoch-{epoch}.ckpt")))
        });
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                let log_path = dir.join("runlog.jsonl");
                fs::write(&log_path, e.log.to_json_lines())?;
                if let Some(model) = &e.last_good {
                    write_checkpoint(model, &dir.join("model.last-good.ckpt"))?;
                }
                return Err(CliError::Training {
                    message: format!("seed {seed}: {e} (log: {})", log_path.display()),
                    numeric: matches!(e.source, mgsgan::Error::Numeric { .. }),
                });
            }
        };
        write_checkpoint(&outcome.model, &dir.join("model.ckpt"))?;
        fs::write(dir.join("runlog.jsonl"), outcome.log.to_json_lines())?;
        let rel = |f: &str| format!("{dir_name}/{f}");
        runs.push(RunEntry {
            seed,
            dir: dir_name.clone(),
            checkpoint: rel("model.ckpt"),
            runlog: rel("runlog.jsonl"),
            train_data: rel("train.bin"),
            test_data: rel("test.bin"),
            config: rel("config.txt"),
        });
        println!("seed {seed}: trained {} epochs, wrote {}", outcome.log.records.len(), dir.display());
    }
    let manifest = RunManifest {
        config: settings.render(),
        train_config: settings.train.clone(),
        tttr: settings.tttr,
        dataset: a.data.display().to_string(),
        dataset_sha256: sha256_hex(&bytes),
        seeds: settings.seeds.clone(),
        output_dir: a.out.display().to_string(),
        runs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(a.out.join(MANIFEST), json + "\n")?;
    Ok(())
}

fn check_compatible(model: &GanModel, data: &SpectralDataset, what: &Path) -> Result<(), CliError> {
    if model.classes() != data.classes() || model.bands() != data.bands() {
        return Err(mgsgan::Error::Compatibility(format!(
            "checkpoint has N={} d={} but {} has N={} d={}",
            model.classes(),
            model.bands(),
            what.display(),
            data.classes(),
            data.bands()
        ))
        .into());
    }
    Ok(())
}

/// Predictions of a checkpoint on its test data.
struct Evaluated {
    method: String,
    seed: u64,
    test: SpectralDataset,
    predictions: Vec<usize>,
    metrics: RunMetrics,
}

fn evaluate(checkpoint: &Path, data: &Path, seed: u64) -> Result<Evaluated, CliError> {
    let model = read_checkpoint(checkpoint)?;
    let test = load(data)?;
    check_compatible(&model, &test, data)?;
    let predictions = model.predict(&test.to_tensor())?;
    let metrics = RunMetrics::new(seed, test.labels(), &predictions, test.classes())?;
    Ok(Evaluated {
        method: model.mode.to_string(),
        seed,
        test,
        predictions,
        metrics,
    })
}

fn evaluate_run(dir: &Path) -> Result<Vec<Evaluated>, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| mgsgan::Error::Format(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    manifest
        .runs
        .iter()
        .map(|r| evaluate(&dir.join(&r.checkpoint), &dir.join(&r.test_data), r.seed))
        .collect()
}

fn summary(runs: &[Evaluated], name: String) -> Result<MethodSummary, CliError> {
    Ok(MethodSummary::new(name, runs.iter().map(|r| r.metrics.clone()).collect())?)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let primary = match (&a.run, &a.checkpoint, &a.data) {
        (Some(dir), None, None) => evaluate_run(dir)?,
        (None, Some(ckpt), Some(data)) => vec![evaluate(ckpt, data, 0)?],
        _ => return Err(CliError::Usage("eval needs --run DIR or --checkpoint FILE --data FILE".into())),
    };
    let secondary = match (&a.compare, &a.run, &a.data) {
        (None, _, _) => None,
        (Some(other), Some(_), _) => Some(evaluate_run(other)?),
        (Some(other), None, Some(data)) => Some(vec![evaluate(other, data, 0)?]),
        _ => unreachable!("argument combinations checked above"),
    };
    let classes = primary[0].test.classes();
    let name_a = primary[0].method.clone();
    let mut methods = vec![summary(&primary, name_a.clone())?];
    let mut comparisons = Vec::new();
    if let Some(other) = &secondary {
        let mut name_b = other[0].method.clone();
        if name_b == name_a {
            name_b.push_str(" (compare)");
        }
        methods.push(summary(other, name_b.clone())?);
        let (ra, rb) = primary
            .iter()
            .find_map(|ra| other.iter().find(|rb| rb.seed == ra.seed).map(|rb| (ra, rb)))
            .ok_or_else(|| mgsgan::Error::Compatibility("the compared runs share no seed".into()))?;
        if ra.test != rb.test {
            return Err(mgsgan::Error::Compatibility(format!(
                "McNemar needs the same test split; seed {} differs between the runs",
                ra.seed
            ))
            .into());
        }
        let result = mcnemar_with(&ra.predictions, &rb.predictions, ra.test.labels(), a.continuity_correction)?;
        comparisons.push(Comparison {
            method_a: name_a,
            method_b: name_b,
            seed: ra.seed,
            result,
        });
    }
    let report = EvalReport {
        class_names: (0..classes).map(|j| j.to_string()).collect(),
        methods,
        comparisons,
    };
    let table = report.to_table();
    print!("{table}");
    if let Some(path) = &a.json {
        fs::write(path, report.to_json() + "\n")?;
    }
    if let Some(path) = &a.table {
        fs::write(path, &table)?;
    }
    Ok(())
}

pub fn export_spectra(a: &ExportArgs) -> Result<(), CliError> {
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let mut model = read_checkpoint(&a.checkpoint)?;
    let data = load(&a.data)?;
    check_compatible(&model, &data, &a.data)?;
    let n = model.classes();
    let classes: Vec<usize> = match a.class {
        Some(c) if c >= n => {
            return Err(mgsgan::Error::Contract(format!("unknown class {c}; the checkpoint has {n} classes")).into())
        }
        Some(c) => vec![c],
        None => (0..n).collect(),
    };
    let d = model.bands();
    let mut rng = seeded(a.seed, stream::EXPORT);
    let restore = |v: Vec<f64>| match data.normalization() {
        Some(norm) => norm.invert(&v),
        None => v,
    };
    let mut csv = String::from("class,band,real_mean,generated_mean,tau_lower,tau_upper\n");
    let mut summary = String::from("class,containment\n");
    for &j in &classes {
        let idx = data.indices_of(j);
        let mut real = vec![0.0; d];
        for &i in &idx {
            real.iter_mut().zip(data.sample(i)).for_each(|(m, v)| *m += v / idx.len() as f64);
        }
        let z = NoiseLaw::default().sample(&mut rng, a.samples, model.noise_dim());
        let mut g = Graph::new();
        let (out, _) = model
            .generators
            .generate_batch(&mut g, &z, &vec![j; a.samples], false, BnMode::Eval)?;
        let generated = g.value(out);
        let dom = &model.generators.domains()[j];
        let mut mean = vec![0.0; d];
        let mut inside = 0;
        for r in 0..a.samples {
            let row = generated.row(r);
            inside += dom.contains(row) as usize;
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / a.samples as f64);
        }
        let (real, mean) = (restore(real), restore(mean));
        let (lower, upper) = (restore(dom.lower.clone()), restore(dom.upper.clone()));
        for b in 0..d {
            csv.push_str(&format!("{j},{b},{},{},{},{}\n", real[b], mean[b], lower[b], upper[b]));
        }
        summary.push_str(&format!("{j},{}\n", inside as f64 / a.samples as f64));
    }
    fs::write(&a.out, csv)?;
    print!("{summary}");
    Ok(())
}

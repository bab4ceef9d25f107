//! The training loop: per batch, one discriminator step, one classifier step
//! and one generator step, each with the other players frozen.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Param, Tensor, Var};
use crate::data::{class_priors, SpectralDataset};
use crate::error::{contract, Error, Result};
use crate::losses::{loss_c, loss_d, loss_d_auxiliary, loss_g, loss_g_auxiliary, ClassPriors, GeneratorLoss};
use crate::models::{compute_class_domains, ArchConfig, GanMode, GanModel, GeneratorKind, NoiseLaw};
use crate::nn::{Adam, AdamConfig, BnMode};
use crate::rng::{seeded, stream, Rng};

/// Class priors used for loss weighting and for drawing generator classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    #[default]
    Empirical,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: GanMode,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub noise_dim: usize,
    pub seed: u64,
    /// Relative widening of the class domain boxes.
    pub margin: f64,
    pub prior_mode: PriorMode,
    pub generator_loss: GeneratorLoss,
    pub noise: NoiseLaw,
    pub arch: ArchConfig,
    /// Call the checkpoint hook every this many epochs; 0 disables it.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: GanMode::Mgsgan,
            epochs: 1500,
            batch: 64,
            adam: AdamConfig::default(),
            noise_dim: 100,
            seed: 0,
            margin: 0.05,
            prior_mode: PriorMode::Empirical,
            generator_loss: GeneratorLoss::NonSaturating,
            noise: NoiseLaw::StandardNormal,
            arch: ArchConfig::default(),
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch == 0 || self.batch > train_len {
            return Err(contract(format!(
                "batch size {} must be in 1..={train_len} (training-set size)",
                self.batch
            )));
        }
        if self.noise_dim == 0 {
            return Err(contract("noise_dim must be positive"));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(contract(format!("margin must be non-negative, got {}", self.margin)));
        }
        Adam::new(self.adam).map(|_| ())
    }
}

/// Per-epoch telemetry. Losses are batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_c: Option<f64>,
    pub d_real: f64,
    pub d_fake: f64,
    /// Fraction of generated samples of each class inside that class's box;
    /// `None` for classes not drawn this epoch.
    pub containment: Vec<Option<f64>>,
    /// FNV-1a digest of the epoch's batch index sequence.
    pub order_digest: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut log = self.clone();
        log.records.iter_mut().for_each(|r| r.seconds = 0.0);
        log
    }
}

/// Training aborted on a numeric failure.
#[derive(Debug)]
pub struct TrainError {
    pub epoch: usize,
    pub batch: usize,
    pub source: Error,
    /// Model as of the end of the last completed epoch; `None` when setup
    /// failed before any model existed.
    pub last_good: Option<Box<GanModel>>,
    pub log: RunLog,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted at epoch {} batch {}: {}", self.epoch, self.batch, self.source)
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GanModel,
    pub log: RunLog,
    pub priors: ClassPriors,
}

/// Real and generated samples of one batch. The generator graph stays open
/// until the generator step.
pub struct Batch {
    pub real: Tensor,
    pub real_labels: Vec<usize>,
    pub fake_labels: Vec<usize>,
    graph: Graph,
    fake: Var,
}

impl Batch {
    pub fn fake(&self) -> &Tensor {
        self.graph.value(self.fake)
    }
}

fn fnv1a(state: u64, value: u64) -> u64 {
    value.to_le_bytes().iter().fold(state, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn finite_loss(g: &Graph, loss: Var, what: &'static str) -> Result<f64> {
    let v = g.value(loss).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { op: what })
    }
}

/// Stateful trainer; [`train`] drives it over a whole run.
pub struct Trainer {
    model: GanModel,
    config: TrainConfig,
    priors: ClassPriors,
    class_law: WeightedIndex<f64>,
    adam_d: Adam,
    adam_c: Adam,
    adam_g: Adam,
    order_rng: Rng,
    noise_rng: Rng,
}

impl Trainer {
    /// Computes the class domains and priors from `train` and initialises
    /// G, D and C (in that order) from the seed.
    pub fn new(train: &SpectralDataset, config: &TrainConfig) -> Result<Self> {
        train.check_all_classes()?;
        config.validate(train.len())?;
        if train.samples().iter().any(|v| v.abs() > 1.0 + 1e-9) {
            log::warn!("training data outside [-1, 1]; generator outputs are tanh-bounded");
        }
        let priors = match config.prior_mode {
            PriorMode::Empirical => class_priors(train)?,
            PriorMode::Uniform => ClassPriors::uniform(train.classes()),
        };
        let class_law = WeightedIndex::new(&priors.generated)
            .map_err(|e| contract(format!("cannot sample classes from priors: {e}")))?;
        let domains = compute_class_domains(train, config.margin)?;
        let model = GanModel::new(
            config.mode,
            domains,
            train.bands(),
            config.noise_dim,
            &config.arch,
            &mut seeded(config.seed, stream::INIT),
        )?;
        Ok(Self {
            model,
            config: config.clone(),
            priors,
            class_law,
            adam_d: Adam::new(config.adam)?,
            adam_c: Adam::new(config.adam)?,
            adam_g: Adam::new(config.adam)?,
            order_rng: seeded(config.seed, stream::DATA_ORDER),
            noise_rng: seeded(config.seed, stream::NOISE),
        })
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut GanModel {
        &mut self.model
    }

    pub fn into_model(self) -> GanModel {
        self.model
    }

    pub fn priors(&self) -> &ClassPriors {
        &self.priors
    }

    /// Shuffled batches of training indices for the next epoch.
    pub fn epoch_batches(&mut self, train_len: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..train_len).collect();
        order.shuffle(&mut self.order_rng);
        order.chunks(self.config.batch).map(<[usize]>::to_vec).collect()
    }

    /// Draw noise and classes, one generated sample per real sample, and run
    /// the generator forward.
    pub fn prepare_batch(&mut self, train: &SpectralDataset, indices: &[usize]) -> Result<Batch> {
        let b = indices.len();
        let classes: Vec<usize> = (0..b).map(|_| self.class_law.sample(&mut self.noise_rng)).collect();
        let z = self.config.noise.sample(&mut self.noise_rng, b, self.config.noise_dim);
        let mut graph = Graph::new();
        let (fake, fake_labels) = self
            .model
            .generators
            .generate_batch(&mut graph, &z, &classes, true, BnMode::Train)?;
        Ok(Batch {
            real: train.batch(indices),
            real_labels: indices.iter().map(|i| train.labels()[*i]).collect(),
            fake_labels,
            graph,
            fake,
        })
    }

    /// One Adam step on D. Returns the loss and the mean real-ness D assigns
    /// to the real and generated samples.
    pub fn step_discriminator(&mut self, batch: &Batch) -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let real = g.constant(batch.real.clone());
        let fake = g.constant(batch.fake().clone());
        let d = &self.model.discriminator;
        let pr = d.forward(&mut g, real, true)?;
        let pf = d.forward(&mut g, fake, true)?;
        let (loss, d_real, d_fake) = if self.config.mode == GanMode::Achsgan {
            let loss = loss_d_auxiliary(&mut g, pr, &batch.real_labels, pf, &batch.fake_labels, &self.priors)?;
            let n = self.model.classes();
            let realness = |t: &Tensor| (0..t.shape()[0]).map(|r| 1.0 - t.row(r)[n]).sum::<f64>() / t.shape()[0] as f64;
            (loss, realness(g.value(pr)), realness(g.value(pf)))
        } else {
            let loss = loss_d(&mut g, pr, &batch.real_labels, pf, &batch.fake_labels, &self.priors)?;
            let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
            (loss, mean(g.value(pr)), mean(g.value(pf)))
        };
        let value = finite_loss(&g, loss, "discriminator loss")?;
        let grads = g.backward(loss)?;
        self.adam_d.step(self.model.discriminator.params_mut(), &grads)?;
        Ok((value, d_real, d_fake))
    }

    /// One Adam step on C over real and generated samples; `None` when the
    /// mode has no separate classifier.
    pub fn step_classifier(&mut self, batch: &Batch) -> Result<Option<f64>> {
        let Some(c) = &mut self.model.classifier else {
            return Ok(None);
        };
        let mut g = Graph::new();
        let real = g.constant(batch.real.clone());
        let fake = g.constant(batch.fake().clone());
        let pr = c.forward(&mut g, real, true)?;
        let pf = c.forward(&mut g, fake, true)?;
        let loss = loss_c(&mut g, pr, &batch.real_labels, Some((pf, &batch.fake_labels)), &self.priors)?;
        let value = finite_loss(&g, loss, "classifier loss")?;
        let grads = g.backward(loss)?;
        self.adam_c.step(c.params_mut(), &grads)?;
        Ok(Some(value))
    }

    /// One Adam step on the generators that produced samples in `batch`,
    /// through the (frozen, freshly updated) discriminator.
    pub fn step_generator(&mut self, batch: Batch) -> Result<f64> {
        let Batch {
            mut graph,
            fake,
            fake_labels,
            ..
        } = batch;
        let g = &mut graph;
        let p = self.model.discriminator.forward(g, fake, false)?;
        let loss = if self.config.mode == GanMode::Achsgan {
            loss_g_auxiliary(g, p, &fake_labels, &self.priors)?
        } else {
            loss_g(g, p, &fake_labels, &self.priors, self.config.generator_loss)?
        };
        let value = finite_loss(g, loss, "generator loss")?;
        let grads = g.backward(loss)?;
        let bank = &mut self.model.generators;
        let active: BTreeSet<usize> = match bank.kind() {
            GeneratorKind::Mixture => fake_labels.iter().copied().collect(),
            GeneratorKind::Conditional => BTreeSet::from([0]),
        };
        let params: Vec<&mut Param> = bank
            .nets_mut()
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| active.contains(i))
            .flat_map(|(_, n)| n.params_mut())
            .collect();
        self.adam_g.step(params, &grads)?;
        Ok(value)
    }

    /// One pass over the shuffled training set.
    pub fn run_epoch(&mut self, train: &SpectralDataset, epoch: usize) -> std::result::Result<EpochRecord, (usize, Error)> {
        let start = Instant::now();
        let n = self.model.classes();
        let batches = self.epoch_batches(train.len());
        let mut digest = FNV_OFFSET;
        let (mut ld, mut lg, mut lc) = (0.0, 0.0, 0.0);
        let (mut d_real, mut d_fake) = (0.0, 0.0);
        let mut has_c = false;
        let mut inside = vec![0usize; n];
        let mut drawn = vec![0usize; n];
        for (b, indices) in batches.iter().enumerate() {
            for i in indices {
                digest = fnv1a(digest, *i as u64);
            }
            let fail = |e| (b, e);
            let batch = self.prepare_batch(train, indices).map_err(fail)?;
            let domains = self.model.generators.domains();
            for (r, &c) in batch.fake_labels.iter().enumerate() {
                drawn[c] += 1;
                inside[c] += domains[c].contains(batch.fake().row(r)) as usize;
            }
            let (l, dr, df) = self.step_discriminator(&batch).map_err(fail)?;
            ld += l;
            d_real += dr;
            d_fake += df;
            if let Some(l) = self.step_classifier(&batch).map_err(fail)? {
                lc += l;
                has_c = true;
            }
            lg += self.step_generator(batch).map_err(fail)?;
        }
        let k = batches.len() as f64;
        Ok(EpochRecord {
            epoch,
            loss_d: ld / k,
            loss_g: lg / k,
            loss_c: has_c.then_some(lc / k),
            d_real: d_real / k,
            d_fake: d_fake / k,
            containment: inside
                .iter()
                .zip(&drawn)
                .map(|(i, d)| (*d > 0).then(|| *i as f64 / *d as f64))
                .collect(),
            order_digest: format!("{digest:016x}"),
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Train with a hook called every `checkpoint_interval` epochs (and never
/// when the interval is 0).
pub fn train_with_hook(
    train: &SpectralDataset,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &GanModel) -> Result<()>,
) -> std::result::Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(train, config).map_err(|source| TrainError {
        epoch: 0,
        batch: 0,
        source,
        last_good: None,
        log: RunLog::default(),
    })?;
    let mut log = RunLog::default();
    let mut last_good = trainer.model().clone();
    for epoch in 0..config.epochs {
        match trainer.run_epoch(train, epoch) {
            Ok(record) => {
                log::info!(
                    "epoch {epoch}: L_D {:.4} L_G {:.4} D(real) {:.3} D(fake) {:.3}",
                    record.loss_d,
                    record.loss_g,
                    record.d_real,
                    record.d_fake
                );
                log.records.push(record);
            }
            Err((batch, source)) => {
                return Err(TrainError {
                    epoch,
                    batch,
                    source,
                    last_good: Some(Box::new(last_good)),
                    log,
                })
            }
        }
        last_good = trainer.model().clone();
        let interval = config.checkpoint_interval;
        if interval > 0 && (epoch + 1) % interval == 0 {
            on_checkpoint(epoch + 1, trainer.model()).map_err(|source| TrainError {
                epoch,
                batch: 0,
                source,
                last_good: Some(Box::new(last_good.clone())),
                log: log.clone(),
            })?;
        }
    }
    let priors = trainer.priors().clone();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        priors,
    })
}

/// Run the configured game on `train`.
pub fn train(train: &SpectralDataset, config: &TrainConfig) -> std::result::Result<TrainOutcome, TrainError> {
    train_with_hook(train, config, |_, _| Ok(()))
}

/// Run one of the baseline games; `config.mode` must not be MGSGAN.
pub fn train_baseline(train: &SpectralDataset, config: &TrainConfig) -> std::result::Result<TrainOutcome, TrainError> {
    if config.mode == GanMode::Mgsgan {
        return Err(TrainError {
            epoch: 0,
            batch: 0,
            source: contract("train_baseline needs mode acsgan or achsgan"),
            last_good: None,
            log: RunLog::default(),
        });
    }
    self::train(train, config)
}

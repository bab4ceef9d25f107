//! `key=value` run settings shared by config files, flags and the snapshot
//! written next to every run.

use std::collections::BTreeMap;

use mgsgan::losses::GeneratorLoss;
use mgsgan::models::{GanMode, NoiseLaw};
use mgsgan::train::{PriorMode, TrainConfig};

use crate::CliError;

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub train: TrainConfig,
    pub tttr: f64,
    pub seeds: Vec<u64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            tttr: 0.1,
            seeds: vec![0],
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got '{raw}'", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse '{v}'")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn fixed<const N: usize>(key: &str, v: &str) -> Result<[usize; N], CliError> {
    let items: Vec<usize> = list(key, v)?;
    items
        .try_into()
        .map_err(|_| CliError::Usage(format!("{key}: expected {N} comma-separated integers")))
}

fn flag(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn choice<T>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, CliError>
where
    T: Copy,
{
    options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        CliError::Usage(format!("{key}: '{v}' is not one of {}", names.join(", ")))
    })
}

const MODES: [(&str, GanMode); 3] = [
    ("mgsgan", GanMode::Mgsgan),
    ("acsgan", GanMode::Acsgan),
    ("achsgan", GanMode::Achsgan),
];
const PRIORS: [(&str, PriorMode); 2] = [("empirical", PriorMode::Empirical), ("uniform", PriorMode::Uniform)];
const G_LOSSES: [(&str, GeneratorLoss); 2] = [
    ("saturating", GeneratorLoss::Saturating),
    ("non-saturating", GeneratorLoss::NonSaturating),
];
const NOISE: [(&str, NoiseLaw); 3] = [
    ("standard-normal", NoiseLaw::StandardNormal),
    ("normal-mean-minus-one", NoiseLaw::NormalMeanMinusOne),
    ("uniform", NoiseLaw::Uniform),
];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], t: T) -> &'static str {
    options.iter().find(|(_, v)| *v == t).map(|(n, _)| *n).expect("every variant is named")
}

impl RunSettings {
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), CliError> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "mode" => t.mode = choice(key, v, &MODES)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "lr" => t.adam.lr = num(key, v)?,
            "beta1" => t.adam.beta1 = num(key, v)?,
            "beta2" => t.adam.beta2 = num(key, v)?,
            "adam-eps" => t.adam.eps = num(key, v)?,
            "noise-dim" => t.noise_dim = num(key, v)?,
            "margin" => t.margin = num(key, v)?,
            "prior-mode" => t.prior_mode = choice(key, v, &PRIORS)?,
            "generator-loss" => t.generator_loss = choice(key, v, &G_LOSSES)?,
            "noise-law" => t.noise = choice(key, v, &NOISE)?,
            "checkpoint-interval" => t.checkpoint_interval = num(key, v)?,
            "gen-channels" => t.arch.gen_channels = fixed(key, v)?,
            "disc-channels" => t.arch.disc_channels = fixed(key, v)?,
            "disc-kernel" => t.arch.disc_kernel = num(key, v)?,
            "cls-channels" => t.arch.cls_channels = fixed(key, v)?,
            "cls-kernels" => t.arch.cls_kernels = list(key, v)?,
            "stride" => t.arch.stride = num(key, v)?,
            "leaky-slope" => t.arch.leaky_slope = num(key, v)?,
            "gen-batchnorm" => t.arch.gen_batchnorm = flag(key, v)?,
            "tttr" => self.tttr = num(key, v)?,
            "seed" => self.seeds = vec![num(key, v)?],
            "seeds" => self.seeds = list(key, v)?,
            other => return Err(CliError::Usage(format!("unknown setting '{other}'"))),
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        Ok(())
    }

    /// Snapshot in the same `key=value` syntax [`parse_pairs`] reads.
    pub fn render(&self) -> String {
        let t = &self.train;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let lines = [
            ("mode", name_of(&MODES, t.mode).to_string()),
            ("seeds", seeds.join(",")),
            ("tttr", self.tttr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch", t.batch.to_string()),
            ("lr", t.adam.lr.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("adam-eps", t.adam.eps.to_string()),
            ("noise-dim", t.noise_dim.to_string()),
            ("margin", t.margin.to_string()),
            ("prior-mode", name_of(&PRIORS, t.prior_mode).to_string()),
            ("generator-loss", name_of(&G_LOSSES, t.generator_loss).to_string()),
            ("noise-law", name_of(&NOISE, t.noise).to_string()),
            ("checkpoint-interval", t.checkpoint_interval.to_string()),
            ("gen-channels", join(&t.arch.gen_channels)),
            ("disc-channels", join(&t.arch.disc_channels)),
            ("disc-kernel", t.arch.disc_kernel.to_string()),
            ("cls-channels", join(&t.arch.cls_channels)),
            ("cls-kernels", join(&t.arch.cls_kernels)),
            ("stride", t.arch.stride.to_string()),
            ("leaky-slope", t.arch.leaky_slope.to_string()),
            ("gen-batchnorm", t.arch.gen_batchnorm.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Settings of a single seed of this run.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seeds = vec![seed];
        s.train.seed = seed;
        s
    }
}

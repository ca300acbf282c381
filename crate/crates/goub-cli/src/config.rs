//! Flat key=value run configuration.
//!
//! Every physics parameter is explicit: the embedded default text lists
//! all keys, a config file and `--set` overrides replace them, and the
//! resolved configuration is echoed into the output directory so no value
//! is ever silent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use goub_core::error::{Error, Result};
use goub_core::predictor::{Activation, LossKind};
use goub_core::samplers::SamplerKind;
use goub_core::schedule::ScheduleKind;

/// Default configuration: 100-step flipped-cosine schedule with terminal
/// attenuation 0.005 and stationary level 30/255, the mask toy task, and
/// the optimizer settings used throughout.
pub const DEFAULT_CONFIG: &str = "\
schedule.kind = flipped-cosine
schedule.steps = 100
schedule.delta = 0.005
schedule.lambda_mode = std
schedule.lambda_value = 0.11764705882352941
bridge.kind = goub
sampler.kind = mean-ode
sampler.paths = 64
model.hidden = 96,96
model.time_embed_dim = 16
model.activation = relu
train.loss = l1
train.l1_keep_weight = true
train.lr = 1e-3
train.beta1 = 0.9
train.beta2 = 0.99
train.batch_size = 8
train.total_steps = 1500
train.lr_decay_steps = 900,1200
train.t_min = 1
train.log_every = 100
task.kind = mask
task.image_size = 16
task.mask_fraction = 0.5
task.downup_factor = 2
task.stripe_period = 4
task.stripe_amplitude = 0.3
task.train_count = 64
task.test_count = 6
task.gauss_prior_mean = 0.0
task.gauss_prior_var = 1.0
task.gauss_x_term = 2.0
seed = 0
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeKind {
    Goub,
    Veb,
    Vpb,
    /// Alias of the variance-exploding bridge; the two coincide.
    Brownian,
}

impl BridgeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "goub" => Ok(BridgeKind::Goub),
            "veb" => Ok(BridgeKind::Veb),
            "vpb" => Ok(BridgeKind::Vpb),
            "brownian" => Ok(BridgeKind::Brownian),
            other => Err(Error::invalid(
                "bridge.kind",
                format!("unknown bridge `{other}` (expected goub | veb | vpb | brownian)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BridgeKind::Goub => "goub",
            BridgeKind::Veb => "veb",
            BridgeKind::Vpb => "vpb",
            BridgeKind::Brownian => "brownian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Mask,
    DownUp,
    Stripes,
    Identity,
    Gauss1d,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(TaskKind::Mask),
            "downup" => Ok(TaskKind::DownUp),
            "stripes" => Ok(TaskKind::Stripes),
            "identity" => Ok(TaskKind::Identity),
            "gauss1d" => Ok(TaskKind::Gauss1d),
            other => Err(Error::invalid(
                "task.kind",
                format!(
                    "unknown task `{other}` (expected mask | downup | stripes | identity | gauss1d)"
                ),
            )),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schedule_kind: ScheduleKind,
    pub steps: usize,
    pub delta: f64,
    /// Stationary variance, after resolving the lambda interpretation.
    pub lambda2: f64,
    pub bridge: BridgeKind,
    pub sampler: SamplerKind,
    pub sampler_paths: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    pub loss: LossKind,
    pub l1_keep_weight: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr_decay_steps: Vec<usize>,
    pub t_min: usize,
    pub log_every: usize,
    pub task: TaskKind,
    pub image_size: usize,
    pub mask_fraction: f64,
    pub downup_factor: usize,
    pub stripe_period: usize,
    pub stripe_amplitude: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub gauss_prior_mean: f64,
    pub gauss_prior_var: f64,
    pub gauss_x_term: f64,
    pub seed: u64,
    /// The raw key table, echoed verbatim next to artifacts.
    table: BTreeMap<String, String>,
}

fn parse_table(text: &str, into: &mut BTreeMap<String, String>) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(
                "config",
                format!("line {}: expected key = value, got `{line}`", lineno + 1),
            )
        })?;
        into.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(())
}

impl RunConfig {
    /// Builds from the embedded defaults, an optional file, and a list of
    /// `key=value` overrides, in that precedence order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut table = BTreeMap::new();
        parse_table(DEFAULT_CONFIG, &mut table)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            parse_table(&text, &mut table)?;
        }
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::invalid("--set", format!("expected key=value, got `{item}`"))
            })?;
            table.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_table(table)
    }

    fn from_table(table: BTreeMap<String, String>) -> Result<RunConfig> {
        let get = |key: &str| -> Result<&str> {
            table
                .get(key)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::invalid(key, "missing"))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            get(key)?
                .parse::<f64>()
                .map_err(|_| Error::invalid(key, format!("not a number: `{}`", get(key).unwrap())))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse::<usize>()
                .map_err(|_| Error::invalid(key, format!("not a count: `{}`", get(key).unwrap())))
        };
        let parse_bool = |key: &str| -> Result<bool> {
            match get(key)? {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(Error::invalid(key, format!("not a bool: `{other}`"))),
            }
        };
        let parse_list = |key: &str| -> Result<Vec<usize>> {
            let raw = get(key)?;
            if raw.is_empty() || raw == "none" {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(key, format!("bad list entry `{p}`")))
                })
                .collect()
        };

        let lambda_value = parse_f64("schedule.lambda_value")?;
        let lambda2 = match get("schedule.lambda_mode")? {
            "std" => lambda_value * lambda_value,
            "var" => lambda_value,
            other => {
                return Err(Error::invalid(
                    "schedule.lambda_mode",
                    format!("expected std | var, got `{other}`"),
                ))
            }
        };
        if !lambda2.is_finite() || lambda2 <= 0.0 {
            return Err(Error::invalid("schedule.lambda_value", "must give lambda2 > 0"));
        }

        let config = RunConfig {
            schedule_kind: ScheduleKind::parse(get("schedule.kind")?)?,
            steps: parse_usize("schedule.steps")?,
            delta: parse_f64("schedule.delta")?,
            lambda2,
            bridge: BridgeKind::parse(get("bridge.kind")?)?,
            sampler: SamplerKind::parse(get("sampler.kind")?)?,
            sampler_paths: parse_usize("sampler.paths")?,
            hidden: parse_list("model.hidden")?,
            time_embed_dim: parse_usize("model.time_embed_dim")?,
            activation: Activation::parse(get("model.activation")?)?,
            loss: LossKind::parse(get("train.loss")?)?,
            l1_keep_weight: parse_bool("train.l1_keep_weight")?,
            lr: parse_f64("train.lr")?,
            beta1: parse_f64("train.beta1")?,
            beta2: parse_f64("train.beta2")?,
            batch_size: parse_usize("train.batch_size")?,
            total_steps: parse_usize("train.total_steps")?,
            lr_decay_steps: parse_list("train.lr_decay_steps")?,
            t_min: parse_usize("train.t_min")?,
            log_every: parse_usize("train.log_every")?.max(1),
            task: TaskKind::parse(get("task.kind")?)?,
            image_size: parse_usize("task.image_size")?,
            mask_fraction: parse_f64("task.mask_fraction")?,
            downup_factor: parse_usize("task.downup_factor")?,
            stripe_period: parse_usize("task.stripe_period")?,
            stripe_amplitude: parse_f64("task.stripe_amplitude")?,
            train_count: parse_usize("task.train_count")?,
            test_count: parse_usize("task.test_count")?,
            gauss_prior_mean: parse_f64("task.gauss_prior_mean")?,
            gauss_prior_var: parse_f64("task.gauss_prior_var")?,
            gauss_x_term: parse_f64("task.gauss_x_term")?,
            seed: get("seed")?
                .parse::<u64>()
                .map_err(|_| Error::invalid("seed", "not a u64"))?,
            table,
        };
        // fail fast on schedule parameters; the grid constructor is the
        // authority on their ranges
        goub_core::schedule::ScheduleGrid::build(
            config.schedule_kind,
            config.steps,
            config.delta,
            config.lambda2,
        )?;
        if config.test_count == 0 || config.train_count == 0 {
            return Err(Error::invalid("task", "train/test counts must be >= 1"));
        }
        Ok(config)
    }

    /// Override the seed after loading (the `--seed` flag).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.table.insert("seed".into(), seed.to_string());
        self
    }

    pub fn train_config(&self) -> goub_core::training::TrainConfig {
        goub_core::training::TrainConfig {
            loss_kind: self.loss,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            lr_decay_steps: self.lr_decay_steps.clone(),
            seed: self.seed,
            t_min: self.t_min,
            l1_keep_weight: self.l1_keep_weight,
            log_every: self.log_every,
        }
    }

    /// The resolved key table as config-file text.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.table {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

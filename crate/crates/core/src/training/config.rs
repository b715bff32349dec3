use serde::{Deserialize, Serialize};

use super::plan::{Ablation, StepPlan};
use crate::autodiff::Step;

/// Learning rate and length of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub lr: f64,
    pub epochs: usize,
    /// Multiply the rate by `decay` after every `decay_every` epochs.
    pub decay_every: Option<usize>,
    pub decay: f64,
}

impl StepSchedule {
    pub fn constant(lr: f64, epochs: usize) -> Self {
        Self { lr, epochs, decay_every: None, decay: 0.1 }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_every {
            Some(period) if period > 0 => self.lr * self.decay.powi((epoch / period) as i32),
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub step1: StepSchedule,
    pub step2: StepSchedule,
    pub step3: StepSchedule,
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub freeze_backbone_step1: bool,
    pub same_id_negatives: bool,
    /// Random horizontal mirroring of training images.
    pub mirror: bool,
    pub min_count: usize,
    /// `desk` or `full` architecture sizes.
    pub model_size: String,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn full() -> Self {
        Self {
            batch_size: 96,
            step1: StepSchedule::constant(0.001, 10),
            step2: StepSchedule { lr: 0.0002, epochs: 15, decay_every: Some(10), decay: 0.1 },
            step3: StepSchedule::constant(0.0002, 5),
            margin: 0.2,
            lambda1: 1.0,
            lambda2: 0.5,
            seed: 42,
            ablation: Ablation::Mia,
            freeze_backbone_step1: false,
            same_id_negatives: false,
            mirror: true,
            min_count: 1,
            model_size: "full".into(),
            temperature: 1.0,
        }
    }

    /// Schedule for the synthetic corpus on one CPU core.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            step1: StepSchedule::constant(0.001, 60),
            step2: StepSchedule { lr: 0.0005, epochs: 90, decay_every: Some(60), decay: 0.1 },
            step3: StepSchedule::constant(0.0005, 40),
            model_size: "desk".into(),
            ..Self::full()
        }
    }

    pub fn schedule(&self, step: Step) -> &StepSchedule {
        match step {
            1 => &self.step1,
            2 => &self.step2,
            _ => &self.step3,
        }
    }

    pub fn schedule_mut(&mut self, step: Step) -> &mut StepSchedule {
        match step {
            1 => &mut self.step1,
            2 => &mut self.step2,
            _ => &mut self.step3,
        }
    }

    pub fn lr(&self, step: Step, epoch: usize) -> f64 {
        self.schedule(step).lr_at(epoch)
    }

    pub fn plan(&self) -> StepPlan {
        StepPlan::new(self.ablation, self.freeze_backbone_step1)
    }

    pub fn total_epochs(&self) -> usize {
        self.plan().steps().iter().map(|&s| self.schedule(s).epochs).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        for s in 1..=3 {
            let sch = self.schedule(s);
            if !(sch.lr > 0.0 && sch.lr.is_finite()) {
                return Err(format!("step{s} learning rate must be positive"));
            }
        }
        if self.margin < 0.0 || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err("margin and λ weights must be non-negative".into());
        }
        if self.min_count == 0 {
            return Err("min_count must be at least 1".into());
        }
        if self.model_size != "desk" && self.model_size != "full" {
            return Err(format!("model_size must be desk or full, got {:?}", self.model_size));
        }
        Ok(())
    }
}

/// One `key = value` line of a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{origin}:{line}: {reason}")]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub reason: String,
}

/// Parses UTF-8 `key = value` lines. Blank lines and `#` comments are
/// skipped; a repeated key keeps its last value.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<ConfigEntry>, ConfigError> {
    let mut out: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| ConfigError { origin: origin.to_string(), line: i + 1, reason: reason.to_string() };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err("empty key"));
        }
        out.retain(|e| e.key != key);
        out.push(ConfigEntry { key: key.to_string(), value: value.to_string(), line: i + 1 });
    }
    Ok(out)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 23] = [
        "batch_size",
        "step1_lr",
        "step1_epochs",
        "step2_lr",
        "step2_epochs",
        "step2_decay_every",
        "step2_decay",
        "step3_lr",
        "step3_epochs",
        "margin",
        "lambda1",
        "lambda2",
        "seed",
        "ablation",
        "freeze_backbone_step1",
        "same_id_negatives",
        "mirror",
        "min_count",
        "model_size",
        "temperature",
        "step1_decay_every",
        "step3_decay_every",
        "preset",
    ];

    /// Sets one field by config key. Returns `Ok(false)` for keys this
    /// struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got {v:?}")),
            }
        }
        fn period(key: &str, v: &str) -> Result<Option<usize>, String> {
            if v == "none" || v == "0" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        }
        match key {
            "preset" => {
                let keep_seed = self.seed;
                *self = match value {
                    "desk" => TrainConfig::desk(),
                    "full" => TrainConfig::full(),
                    _ => return Err(format!("preset: expected desk or full, got {value:?}")),
                };
                self.seed = keep_seed;
            }
            "batch_size" => self.batch_size = num(key, value)?,
            "step1_lr" => self.step1.lr = num(key, value)?,
            "step2_lr" => self.step2.lr = num(key, value)?,
            "step3_lr" => self.step3.lr = num(key, value)?,
            "step1_epochs" => self.step1.epochs = num(key, value)?,
            "step2_epochs" => self.step2.epochs = num(key, value)?,
            "step3_epochs" => self.step3.epochs = num(key, value)?,
            "step1_decay_every" => self.step1.decay_every = period(key, value)?,
            "step2_decay_every" => self.step2.decay_every = period(key, value)?,
            "step3_decay_every" => self.step3.decay_every = period(key, value)?,
            "step2_decay" => self.step2.decay = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "freeze_backbone_step1" => self.freeze_backbone_step1 = flag(key, value)?,
            "same_id_negatives" => self.same_id_negatives = flag(key, value)?,
            "mirror" => self.mirror = flag(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "model_size" => self.model_size = value.to_string(),
            "temperature" => self.temperature = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Learning rate of the full-scale schedule: 0.001 in step 1, 0.0002 decayed
/// ×0.1 every 10 epochs in step 2, 0.0002 in step 3.
pub fn lr_schedule(step: Step, epoch: usize) -> f64 {
    TrainConfig::full().lr(step, epoch)
}

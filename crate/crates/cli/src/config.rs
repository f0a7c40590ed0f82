//! Flat `key = value` run configuration.
//!
//! Every key names a field of the synthetic-data, training or alignment
//! config. `seed` drives both data generation and training. Blank lines and
//! `#` comments are ignored; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use csalign::train::{SynthConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "num_classes",
    "per_class",
    "input_dims",
    "embed_dim",
    "class_sep",
    "noise_sigma",
    "seed",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "weight_decay",
    "grad_clip_norm",
    "max_epochs",
    "batch_size",
    "lr_decay_every",
    "lr_decay_factor",
    "holdout_fraction",
    "loss",
    "strategy",
    "temperature",
    "hidden_dim",
    "eval_ks",
];

fn value<T: FromStr>(key: &str, raw: &str) -> CliResult<T> {
    raw.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {raw:?}")))
}

fn list(key: &str, raw: &str) -> CliResult<Vec<usize>> {
    raw.split(',').map(|s| value(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("line {}: unknown key {k:?}", lineno + 1)));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
            }
        }
        let mut cfg = Self::default();
        for (k, v) in &seen {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> CliResult<()> {
        let (s, t) = (&mut self.synth, &mut self.train);
        match key {
            "num_classes" => s.num_classes = value(key, raw)?,
            "per_class" => s.per_class = value(key, raw)?,
            "input_dims" => s.input_dims = list(key, raw)?,
            "embed_dim" => s.embed_dim = value(key, raw)?,
            "class_sep" => s.class_sep = value(key, raw)?,
            "noise_sigma" => s.noise_sigma = value(key, raw)?,
            "seed" => self.set_seed(value(key, raw)?),
            "learning_rate" => t.learning_rate = value(key, raw)?,
            "adam_beta1" => t.adam_beta1 = value(key, raw)?,
            "adam_beta2" => t.adam_beta2 = value(key, raw)?,
            "adam_epsilon" => t.adam_epsilon = value(key, raw)?,
            "weight_decay" => t.weight_decay = value(key, raw)?,
            "grad_clip_norm" => t.grad_clip_norm = value(key, raw)?,
            "max_epochs" => t.max_epochs = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "lr_decay_every" => t.lr_decay_every = value(key, raw)?,
            "lr_decay_factor" => t.lr_decay_factor = value(key, raw)?,
            "holdout_fraction" => t.holdout_fraction = value(key, raw)?,
            "loss" => t.loss = raw.parse().map_err(|e: csalign::Error| CliError::Config(e.to_string()))?,
            "strategy" => t.strategy = raw.parse().map_err(|e: csalign::Error| CliError::Config(e.to_string()))?,
            "temperature" => t.temperature = value(key, raw)?,
            "hidden_dim" => {
                t.hidden_dim = match raw {
                    "" | "none" => None,
                    _ => Some(value(key, raw)?),
                }
            }
            "eval_ks" => t.eval_ks = list(key, raw)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.train.validate()?;
        let gallery = (self.synth.num_classes * self.synth.per_class) as f64 * self.train.holdout_fraction;
        if let Some(&k) = self.train.eval_ks.iter().find(|&&k| k as f64 > gallery.floor()) {
            return Err(CliError::Config(format!("eval k={k} exceeds the held-out gallery size")));
        }
        Ok(())
    }

    /// Fully resolved `(key, value)` pairs in [`KEYS`] order. Feeding them
    /// back through [`RunConfig::parse`] reproduces this config.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let (s, t) = (&self.synth, &self.train);
        let vals = [
            s.num_classes.to_string(),
            s.per_class.to_string(),
            join(&s.input_dims),
            s.embed_dim.to_string(),
            s.class_sep.to_string(),
            s.noise_sigma.to_string(),
            t.seed.to_string(),
            t.learning_rate.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            t.adam_epsilon.to_string(),
            t.weight_decay.to_string(),
            t.grad_clip_norm.to_string(),
            t.max_epochs.to_string(),
            t.batch_size.to_string(),
            t.lr_decay_every.to_string(),
            t.lr_decay_factor.to_string(),
            t.holdout_fraction.to_string(),
            t.loss.name().to_string(),
            t.strategy.name().to_string(),
            t.temperature.to_string(),
            t.hidden_dim.map_or_else(|| "none".to_string(), |h| h.to_string()),
            join(&t.eval_ks),
        ];
        KEYS.iter().copied().zip(vals).collect()
    }

    pub fn to_text(&self) -> String {
        self.resolved().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use csalign::train::TrainLoss;
    use csalign::Strategy;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# small run\nper_class = 10\ninput_dims = 8, 8\nseed=7  # both\nloss = pairwise_cs\nstrategy=cw\neval_ks=1,5\n",
        )
        .unwrap();
        assert_eq!(cfg.synth.per_class, 10);
        assert_eq!(cfg.synth.input_dims, vec![8, 8]);
        assert_eq!((cfg.synth.seed, cfg.train.seed), (7, 7));
        assert_eq!(cfg.train.loss, TrainLoss::PairwiseCs);
        assert_eq!(cfg.train.strategy, Strategy::Clockwise);
        assert_eq!(cfg.train.eval_ks, vec![1, 5]);
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["bogus = 1", "seed = 1\nseed = 2", "seed", "max_epochs = -3", "temperature = 0", "loss = l2"] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn resolved_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("hidden_dim", "32").unwrap();
        cfg.set("learning_rate", "0.000123456789012345").unwrap();
        cfg.set_seed(99);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }
}

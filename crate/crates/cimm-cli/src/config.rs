//! Flat key=value run configuration with file loading, command-line
//! overrides and round-trip serialization.
//!
//! The format is INI-style without sections: one `key = value` per line,
//! `#` starts a comment, unknown keys are rejected. Every default matches
//! the standard training recipe (patch 40, batch 64, learning rate 1e-4
//! halved every 10 epochs, 40 epochs, weight decay 1e-4, M=3, L=6, C=64,
//! dilations 1,3,3,3,3,3, noise range [1,50]).

use std::path::PathBuf;

use cimm::net::{default_dilation_schedule, NetworkConfig};
use cimm::train::{NoiseSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub in_channels: usize,
    pub modules: usize,
    pub pairs_per_module: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Explicit per-pair dilations; derived from `pairs_per_module` when
    /// not set.
    pub dilations: Option<Vec<usize>>,

    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// `None` derives steps per epoch from the dataset size.
    pub iterations_per_epoch: Option<usize>,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    pub noise: NoiseSpec,

    pub train_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            in_channels: 1,
            modules: 3,
            pairs_per_module: 6,
            channels: 64,
            kernel: 3,
            dilations: None,
            epochs: 40,
            batch_size: 64,
            patch_size: 40,
            base_lr: 1e-4,
            lr_halving_period: 10,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            iterations_per_epoch: None,
            checkpoint_every: 10,
            noise: NoiseSpec::agnostic_default(),
            train_dir: None,
            out_dir: PathBuf::from("cimm-out"),
        }
    }
}

impl RunConfig {
    pub fn net_config(&self) -> NetworkConfig {
        NetworkConfig {
            in_channels: self.in_channels,
            num_modules: self.modules,
            pairs_per_module: self.pairs_per_module,
            channels: self.channels,
            kernel: self.kernel,
            dilation_schedule: self
                .dilations
                .clone()
                .unwrap_or_else(|| default_dilation_schedule(self.pairs_per_module)),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            lr_halving_period: self.lr_halving_period,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed: self.seed,
            iterations_per_epoch: self.iterations_per_epoch,
        }
    }

    /// Applies one `key = value` assignment. Unknown keys and malformed
    /// values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "in_channels" => self.in_channels = parse_field(key, value)?,
            "modules" => self.modules = parse_field(key, value)?,
            "pairs_per_module" => self.pairs_per_module = parse_field(key, value)?,
            "channels" => self.channels = parse_field(key, value)?,
            "kernel" => self.kernel = parse_field(key, value)?,
            "dilations" => {
                let parsed: Result<Vec<usize>, _> =
                    value.split(',').map(|v| v.trim().parse()).collect();
                self.dilations =
                    Some(parsed.map_err(|_| format!("bad value for dilations: '{value}'"))?);
            }
            "epochs" => self.epochs = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "patch_size" => self.patch_size = parse_field(key, value)?,
            "base_lr" => self.base_lr = parse_field(key, value)?,
            "lr_halving_period" => self.lr_halving_period = parse_field(key, value)?,
            "weight_decay" => self.weight_decay = parse_field(key, value)?,
            "beta1" => self.beta1 = parse_field(key, value)?,
            "beta2" => self.beta2 = parse_field(key, value)?,
            "epsilon" => self.epsilon = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "iterations_per_epoch" => {
                self.iterations_per_epoch = if value == "auto" {
                    None
                } else {
                    Some(parse_field(key, value)?)
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse_field(key, value)?,
            "noise" => {
                self.noise = value
                    .parse()
                    .map_err(|e| format!("bad value for noise: {e}"))?
            }
            "train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    /// Parses a whole config file.
    pub fn apply_file(&mut self, text: &str) -> Result<(), String> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    /// Serializes the effective configuration; parsing the output yields an
    /// identical run plan.
    pub fn to_ini(&self) -> String {
        let noise = match self.noise {
            NoiseSpec::Specific(s) => format!("specific:{s}"),
            NoiseSpec::Agnostic { lo, hi } => format!("agnostic:{lo},{hi}"),
        };
        let dilations: Vec<String> = self
            .net_config()
            .dilation_schedule
            .iter()
            .map(|d| d.to_string())
            .collect();
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        push("in_channels", self.in_channels.to_string());
        push("modules", self.modules.to_string());
        push("pairs_per_module", self.pairs_per_module.to_string());
        push("channels", self.channels.to_string());
        push("kernel", self.kernel.to_string());
        push("dilations", dilations.join(","));
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("patch_size", self.patch_size.to_string());
        push("base_lr", self.base_lr.to_string());
        push("lr_halving_period", self.lr_halving_period.to_string());
        push("weight_decay", self.weight_decay.to_string());
        push("beta1", self.beta1.to_string());
        push("beta2", self.beta2.to_string());
        push("epsilon", self.epsilon.to_string());
        push("seed", self.seed.to_string());
        push(
            "iterations_per_epoch",
            self.iterations_per_epoch
                .map(|v| v.to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        push("checkpoint_every", self.checkpoint_every.to_string());
        push("noise", noise);
        if let Some(dir) = &self.train_dir {
            push("train_dir", dir.display().to_string());
        }
        push("out_dir", self.out_dir.display().to_string());
        out
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("bad value for {key}: '{value}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.patch_size, 40);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.base_lr, 1e-4);
        assert_eq!(c.epochs, 40);
        assert_eq!(c.lr_halving_period, 10);
        assert_eq!(c.weight_decay, 1e-4);
        assert_eq!(c.noise, NoiseSpec::Agnostic { lo: 1.0, hi: 50.0 });
        let net = c.net_config();
        assert_eq!(
            (net.num_modules, net.pairs_per_module, net.channels),
            (3, 6, 64)
        );
        assert_eq!(net.dilation_schedule, vec![1, 3, 3, 3, 3, 3]);
        assert_eq!(net.param_count(), 628_993);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut c = RunConfig::default();
        assert!(c.set("momentum", "0.9").is_err());
    }

    #[test]
    fn file_parsing_with_comments() {
        let mut c = RunConfig::default();
        c.apply_file("# comment\nmodules = 1\nchannels = 8 # trailing\n\nnoise = specific:25\n")
            .unwrap();
        assert_eq!(c.modules, 1);
        assert_eq!(c.channels, 8);
        assert_eq!(c.noise, NoiseSpec::Specific(25.0));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply_file("modules 3").is_err());
        assert!(c.apply_file("epochs = forty").is_err());
    }

    #[test]
    fn round_trip_preserves_effective_config() {
        let mut c = RunConfig::default();
        c.set("modules", "2").unwrap();
        c.set("pairs_per_module", "4").unwrap();
        c.set("noise", "specific:37.5").unwrap();
        c.set("train_dir", "/data/train").unwrap();
        c.set("iterations_per_epoch", "120").unwrap();
        let mut reparsed = RunConfig::default();
        reparsed.apply_file(&c.to_ini()).unwrap();
        // Serialization resolves the derived dilation schedule; the
        // effective run plan must be identical.
        assert_eq!(reparsed.net_config(), c.net_config());
        assert_eq!(reparsed.train_config(), c.train_config());
        assert_eq!(reparsed.noise, c.noise);
        assert_eq!(reparsed.train_dir, c.train_dir);
        assert_eq!(reparsed.out_dir, c.out_dir);
        // And a second round trip is a fixed point.
        assert_eq!(reparsed.to_ini(), c.to_ini());
    }

    #[test]
    fn dilations_follow_pairs_when_not_explicit() {
        let mut c = RunConfig::default();
        c.set("pairs_per_module", "3").unwrap();
        assert_eq!(c.net_config().dilation_schedule, vec![1, 3, 3]);
        c.set("dilations", "1,2,2").unwrap();
        assert_eq!(c.net_config().dilation_schedule, vec![1, 2, 2]);
    }
}

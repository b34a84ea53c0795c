//! Experiment options. Every flag can also come from a TOML file passed
//! with `--config`; flags given on the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Gains of a random multi-antenna downlink under a fixed precoder.
    Precoder,
    /// `|h|^2` with `h` standard complex Gaussian.
    Rayleigh,
    /// Uniform on `[0.1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    DdpgBcd,
    Td3Bcd,
    PureDdpg,
    PureTd3,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::DdpgBcd => "ddpg-bcd",
            AgentKind::Td3Bcd => "td3-bcd",
            AgentKind::PureDdpg => "pure-ddpg",
            AgentKind::PureTd3 => "pure-td3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardArg {
    Label,
    Sumrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelArg {
    Grid,
    Multistart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseArg {
    OneSided,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitArg {
    Final,
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateFeatureArg {
    InverseSinr,
    LogRate,
}

/// Starting point for training hyperparameters, before any flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Tuned for a few thousand environment steps on one core.
    Desk,
    /// The published hyperparameters.
    Paper,
}

/// Methods known to `compare`. The learned ones need a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bcd,
    Multistart,
    DdpgBcd,
    Td3Bcd,
    PureDdpg,
    PureTd3,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bcd => "bcd",
            Method::Multistart => "multistart",
            Method::DdpgBcd => "ddpg-bcd",
            Method::Td3Bcd => "td3-bcd",
            Method::PureDdpg => "pure-ddpg",
            Method::PureTd3 => "pure-td3",
        }
    }
}

macro_rules! options {
    ($($(#[$m:meta])* $field:ident: $ty:ty,)*) => {
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
        pub struct Options {
            /// TOML file supplying any of the flags below.
            #[arg(long)]
            #[serde(skip)]
            pub config: Option<PathBuf>,
            /// Checkpoint files; `method=path` selects the method in `compare`.
            #[arg(long)]
            pub checkpoint: Vec<String>,
            /// Methods for `compare`, comma separated.
            #[arg(long, value_enum, value_delimiter = ',')]
            pub methods: Vec<Method>,
            $($(#[$m])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl Options {
            /// `self` with unset fields taken from `file`.
            pub fn over(self, file: Options) -> Options {
                Options {
                    config: self.config,
                    checkpoint: if self.checkpoint.is_empty() { file.checkpoint } else { self.checkpoint },
                    methods: if self.methods.is_empty() { file.methods } else { self.methods },
                    $($field: self.$field.or(file.$field),)*
                }
            }
        }
    };
}

options! {
    /// Master seed; required by every command except `example1`.
    seed: u64,
    links: usize,
    tx_antennas: usize,
    rx_antennas: usize,
    /// Number of instances to generate.
    count: usize,
    #[arg(value_enum)]
    model: ModelKind,
    input: PathBuf,
    /// Held-out set evaluated after training.
    test_input: PathBuf,
    output: PathBuf,
    /// Aggregate table of `compare` and `eval`.
    summary: PathBuf,
    /// Training log CSV.
    log: PathBuf,
    #[arg(value_enum)]
    agent: AgentKind,
    #[arg(value_enum)]
    preset: Preset,
    #[arg(value_enum)]
    reward: RewardArg,
    #[arg(value_enum)]
    label_strategy: LabelArg,
    resolution: f64,
    starts: usize,
    steps: usize,
    horizon: usize,
    epsilon: f64,
    updates_per_step: usize,
    discount: f64,
    actor_lr: f64,
    critic_lr: f64,
    noise_bound: f64,
    #[arg(value_enum)]
    noise: NoiseArg,
    noise_refresh: usize,
    noise_decay: f64,
    tau: f64,
    batch: usize,
    policy_delay: usize,
    target_noise: f64,
    target_clip: f64,
    hidden: usize,
    depth: usize,
    actor_head_scale: f64,
    buffer_capacity: usize,
    residual: bool,
    normalize: bool,
    #[arg(value_enum)]
    emit: EmitArg,
    #[arg(value_enum)]
    rate_feature: RateFeatureArg,
    /// Enables the convolutional front end with this kernel size.
    conv_kernel: usize,
    conv_stride: usize,
    /// Add a wall-clock column; output is then no longer reproducible.
    timing: bool,
    /// Run instance-parallel work on the rayon pool.
    parallel: bool,
}

impl Options {
    /// Reads the `--config` file, if any, and fills unset flags from it.
    pub fn resolve(self) -> Result<Options> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = read(&path)?;
        let file: Options =
            toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Ok(self.over(file))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| BenchError::Config("--seed is required".into()))
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| BenchError::Config("--input is required".into()))
    }

    /// First 16 hex digits of the SHA-256 of the resolved options.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("options serialize");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line heading every CSV output.
    pub fn metadata(&self, command: &str) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!("# wsrm {command} config={} seed={seed}", self.hash())
    }
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Options = toml::from_str("seed = 3\nlinks = 4\nmethods = [\"bcd\"]\nmodel = \"rayleigh\"").unwrap();
        let cli = Options { links: Some(5), ..Options::default() };
        let m = cli.over(file);
        assert_eq!(m.seed, Some(3));
        assert_eq!(m.links, Some(5));
        assert_eq!(m.methods, vec![Method::Bcd]);
        assert_eq!(m.model, Some(ModelKind::Rayleigh));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Options>("sed = 3").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Options { seed: Some(1), ..Options::default() };
        let b = Options { seed: Some(2), ..Options::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 16);
    }
}

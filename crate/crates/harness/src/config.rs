//! Experiment configuration.
//!
//! The text format is line oriented, UTF-8:
//!
//! ```text
//! # comment
//! section.key = value
//! list.key = 128, 256, 512
//! ```
//!
//! Values are layered: built-in preset, then the config file, then command
//! line flags. [`ExperimentConfig::to_text`] writes every key in a fixed
//! order and is what the manifest hash covers.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nnsp_core::kernels::{Activation, NetworkSpec};
use nnsp_core::langevin::StepScaling;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },

    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Value { key: String, value: String, reason: String },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    WidthSweep,
    NSweep,
    EkCheck,
    Ergodicity,
    SinglePredict,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::WidthSweep => "width_sweep",
            ExperimentKind::NSweep => "n_sweep",
            ExperimentKind::EkCheck => "ek_check",
            ExperimentKind::Ergodicity => "ergodicity",
            ExperimentKind::SinglePredict => "single_predict",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "width_sweep" => ExperimentKind::WidthSweep,
            "n_sweep" => ExperimentKind::NSweep,
            "ek_check" => ExperimentKind::EkCheck,
            "ergodicity" => ExperimentKind::Ergodicity,
            "single_predict" => ExperimentKind::SinglePredict,
            _ => return Err("expected width_sweep, n_sweep, ek_check, ergodicity or single_predict".into()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Quick,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub target_seed: u64,
    /// Rescale the target to unit second moment under the input measure.
    pub normalize: bool,
}

/// Two-layer network prior.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub activation: Activation,
    pub weight_var: f64,
    pub readout_var: f64,
}

impl NetworkConfig {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::two_layer(self.activation, self.weight_var, self.readout_var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// GP noise `σ²`; the temperature is `2σ²`.
    pub noise: f64,
    pub dt: f64,
    pub epochs: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seeds: usize,
    pub scaling: StepScaling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthSweepConfig {
    pub widths: Vec<usize>,
    /// Number of largest widths in the slope fit; 0 means the top half.
    pub fit_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NSweepConfig {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub noises: Vec<f64>,
    pub n_test: usize,
    /// Fit window in decades below the largest `n`.
    pub fit_decades: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkConfig {
    pub d: usize,
    pub n: usize,
    pub draws: usize,
    pub n_test: usize,
    pub samples: usize,
    pub rank_cut: f64,
    pub mc_nodes: usize,
    /// Training-set sizes for the scaling of the corrected EK mean.
    pub n_grid: Vec<usize>,
    /// Largest `n` at which the exact finite-`n` correction is also
    /// evaluated for comparison.
    pub finite_n_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityConfig {
    pub width: usize,
    pub seeds: usize,
    pub epochs: u64,
    /// Smallest block, in recorded samples.
    pub min_block: usize,
    pub min_blocks: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub width_sweep: WidthSweepConfig,
    pub n_sweep: NSweepConfig,
    pub ek: EkConfig,
    pub ergodicity: ErgodicityConfig,
    pub predict_width: usize,
    pub bootstrap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Quick)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let quick = ExperimentConfig {
            kind: ExperimentKind::WidthSweep,
            seed: 0,
            output: PathBuf::from("out"),
            data: DataConfig { d: 8, n_train: 64, n_test: 100, target_seed: 1, normalize: true },
            network: NetworkConfig { activation: Activation::Quadratic, weight_var: 1.0, readout_var: 0.1 },
            train: TrainConfig {
                noise: 0.2,
                dt: 0.005,
                epochs: 100_000,
                burn_in: 10_000,
                thin: 10,
                seeds: 8,
                scaling: StepScaling::Preconditioned,
            },
            width_sweep: WidthSweepConfig { widths: vec![128, 256, 512, 1024, 2048], fit_points: 0 },
            n_sweep: NSweepConfig {
                d: 4,
                n_grid: vec![5, 10, 20, 40, 80, 160, 320],
                noises: vec![0.01, 0.05],
                n_test: 100,
                fit_decades: 1.0,
            },
            ek: EkConfig {
                d: 4,
                n: 512,
                draws: 20,
                n_test: 50,
                samples: 2048,
                rank_cut: 1e-6,
                mc_nodes: 4096,
                n_grid: vec![256, 512, 1024, 2048, 4096],
                finite_n_max: 256,
            },
            ergodicity: ErgodicityConfig {
                width: 128,
                seeds: 16,
                epochs: 100_000,
                min_block: 128,
                min_blocks: 32,
                probes: 10,
            },
            predict_width: 512,
            bootstrap: 200,
        };
        match preset {
            Preset::Quick => quick,
            Preset::Full => {
                let mut c = quick;
                c.data.d = 16;
                c.data.n_train = 110;
                c.train.dt = 0.001;
                c.train.epochs = 2_000_000;
                c.train.burn_in = 100_000;
                c.train.thin = 100;
                c.train.seeds = 16;
                c.width_sweep.widths = vec![100, 200, 400, 800, 1600, 3200, 6400];
                c.n_sweep.n_grid = vec![5, 10, 20, 40, 80, 160, 320, 640, 1280];
                c.ek.draws = 50;
                c.ek.samples = 4096;
                c.ek.mc_nodes = 16384;
                c.ergodicity.width = 200;
                c.ergodicity.seeds = 64;
                c.ergodicity.epochs = 1_000_000;
                c
            }
        }
    }

    pub fn from_text(base: ExperimentConfig, text: &str) -> Result<Self, ConfigError> {
        let mut c = base;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() })?;
            c.set(key.trim(), value.trim())?;
        }
        Ok(c)
    }

    pub fn load(base: ExperimentConfig, path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_text(base, &text)
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.data.d < 2 || self.n_sweep.d < 2 || self.ek.d < 2 {
            return bad("input dimension must be at least 2");
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return bad("train and test sets must be non-empty");
        }
        if !(self.train.noise > 0.0) || !(self.train.dt > 0.0) {
            return bad("train.noise and train.dt must be positive");
        }
        if self.train.thin == 0 || self.train.burn_in >= self.train.epochs {
            return bad("need train.thin ≥ 1 and train.burn_in < train.epochs");
        }
        if self.train.seeds < 2 {
            return bad("the statistical bias estimate needs train.seeds ≥ 2");
        }
        if self.width_sweep.widths.len() < 4 {
            return bad("width_sweep.widths needs at least 4 points");
        }
        if self.width_sweep.widths.windows(2).any(|w| w[0] >= w[1]) || self.n_sweep.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep grids must be strictly increasing");
        }
        let (lo, hi) = (self.n_sweep.n_grid.first().copied().unwrap_or(0), self.n_sweep.n_grid.last().copied().unwrap_or(0));
        if lo == 0 || hi < 10 * lo {
            return bad("n_sweep.n_grid must span at least one decade");
        }
        if self.n_sweep.noises.is_empty() || self.n_sweep.noises.iter().any(|s| !(*s > 0.0)) {
            return bad("n_sweep.noises must be positive");
        }
        if self.bootstrap == 0 {
            return bad("fit.bootstrap must be at least 1");
        }
        Ok(())
    }
}

/// Types that appear as configuration values.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}

plain_value!(usize, u64, f64, bool);

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        inner.split(',').map(str::trim).filter(|p| !p.is_empty()).map(T::parse_value).collect()
    }

    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(", ")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }

    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Activation {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e| format!("{e}"))
    }

    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for ExperimentKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse()
    }

    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for StepScaling {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(StepScaling::Uniform),
            "preconditioned" => Ok(StepScaling::Preconditioned),
            _ => Err("expected uniform or preconditioned".into()),
        }
    }

    fn render(&self) -> String {
        match self {
            StepScaling::Uniform => "uniform".into(),
            StepScaling::Preconditioned => "preconditioned".into(),
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every accepted key, in the order [`ExperimentConfig::to_text`] writes them.
        pub const KEYS: &[&str] = &[$($key),*];

        impl ExperimentConfig {
            /// Set one key from its text value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let err = |reason: String| ConfigError::Value { key: key.to_string(), value: value.to_string(), reason };
                match key {
                    $($key => self.$($field).+ = ConfigValue::parse_value(value).map_err(err)?,)*
                    _ => return Err(ConfigError::UnknownKey { key: key.to_string(), suggestion: nearest_key(key) }),
                }
                Ok(())
            }

            /// Canonical text form, one `key = value` line per key.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str($key);
                    out.push_str(" = ");
                    out.push_str(&ConfigValue::render(&self.$($field).+));
                    out.push('\n');
                )*
                out
            }
        }
    };
}

config_keys! {
    "experiment.kind" => kind,
    "experiment.seed" => seed,
    "experiment.output" => output,
    "data.d" => data.d,
    "data.n_train" => data.n_train,
    "data.n_test" => data.n_test,
    "data.target_seed" => data.target_seed,
    "data.normalize" => data.normalize,
    "network.activation" => network.activation,
    "network.weight_var" => network.weight_var,
    "network.readout_var" => network.readout_var,
    "train.noise" => train.noise,
    "train.dt" => train.dt,
    "train.epochs" => train.epochs,
    "train.burn_in" => train.burn_in,
    "train.thin" => train.thin,
    "train.seeds" => train.seeds,
    "train.scaling" => train.scaling,
    "width_sweep.widths" => width_sweep.widths,
    "width_sweep.fit_points" => width_sweep.fit_points,
    "n_sweep.d" => n_sweep.d,
    "n_sweep.n_grid" => n_sweep.n_grid,
    "n_sweep.noises" => n_sweep.noises,
    "n_sweep.n_test" => n_sweep.n_test,
    "n_sweep.fit_decades" => n_sweep.fit_decades,
    "ek.d" => ek.d,
    "ek.n" => ek.n,
    "ek.draws" => ek.draws,
    "ek.n_test" => ek.n_test,
    "ek.samples" => ek.samples,
    "ek.rank_cut" => ek.rank_cut,
    "ek.mc_nodes" => ek.mc_nodes,
    "ek.n_grid" => ek.n_grid,
    "ek.finite_n_max" => ek.finite_n_max,
    "ergodicity.width" => ergodicity.width,
    "ergodicity.seeds" => ergodicity.seeds,
    "ergodicity.epochs" => ergodicity.epochs,
    "ergodicity.min_block" => ergodicity.min_block,
    "ergodicity.min_blocks" => ergodicity.min_blocks,
    "ergodicity.probes" => ergodicity.probes,
    "predict.width" => predict_width,
    "fit.bootstrap" => bootstrap,
}

fn nearest_key(key: &str) -> Option<String> {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(dist, _)| *dist <= key.len().max(4) / 2)
        .map(|(_, k)| k.to_string())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

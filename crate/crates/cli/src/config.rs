//! TOML run configuration. Every key has a same-named flag on the
//! subcommand that reads it (`noise_power` <-> `--noise-power`); flags win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mnn_alloc::experiments::{StudyParams, Theorem1Sweep};
use mnn_alloc::gnn::{Architecture, InputSignal, TrainConfig};
use mnn_alloc::netgen::ChannelParams;
use serde::{Deserialize, Serialize};

/// Configuration problems; mapped to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub channel: ChannelSection,
    pub power: PowerSection,
    pub generate: GenerateSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub transfer: TransferSection,
    pub noise: NoiseSection,
    pub theorem1: Theorem1Section,
    pub spectral: SpectralSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub pathloss_exponent: f64,
    pub fading_scale: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelParams::default();
        Self {
            pathloss_exponent: c.pathloss_exponent,
            fading_scale: c.fading_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub p0: f64,
    pub noise_power: f64,
    pub budget_fraction: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        let s = StudyParams::default();
        Self {
            p0: s.p0,
            noise_power: s.noise_power,
            budget_fraction: s.budget_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub m: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { m: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub primal_step: f64,
    pub dual_step: f64,
    pub iterations: usize,
    pub batch: usize,
    pub m_train: usize,
    pub init_scale: f64,
    pub layers: usize,
    pub taps: usize,
    pub width: usize,
    pub input: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            primal_step: t.primal_step,
            dual_step: t.dual_step,
            iterations: t.iterations,
            batch: t.batch,
            m_train: t.m_train,
            init_scale: t.init_scale,
            layers: t.arch.layers,
            taps: t.arch.taps,
            width: t.arch.width,
            input: "direct-state".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub model: Option<PathBuf>,
    /// Evaluate on this network file instead of fresh draws.
    pub network: Option<PathBuf>,
    pub m: usize,
    pub trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            model: None,
            network: None,
            m: 50,
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub model: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            model: None,
            sizes: vec![50, 100, 200],
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Layer counts swept; everything else comes from `[train]`.
    pub depths: Vec<usize>,
    pub m: usize,
    pub perturb_sigma: f64,
    pub trials: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            depths: vec![2, 4, 8],
            m: 100,
            perturb_sigma: 1.0,
            trials: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Section {
    pub sizes: Vec<usize>,
    pub layers: Vec<usize>,
    pub widths: Vec<usize>,
    pub epsilon_fractions: Vec<f64>,
    pub taps: usize,
    pub alpha_gap_fraction: f64,
    pub repeats: usize,
}

impl Default for Theorem1Section {
    fn default() -> Self {
        let s = Theorem1Sweep::default();
        Self {
            sizes: s.sizes,
            layers: s.layers,
            widths: s.widths,
            epsilon_fractions: s.epsilon_fractions,
            taps: s.taps,
            alpha_gap_fraction: s.alpha_gap_fraction,
            repeats: s.repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub network: Option<PathBuf>,
    /// Size of a fresh network when no file is given.
    pub m: usize,
    pub operator: String,
    pub alpha: f64,
    /// Polynomial coefficients, lowest degree first.
    pub filter: Vec<f64>,
    pub delta_budget: f64,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            network: None,
            m: 50,
            operator: "symmetrized-shift".into(),
            alpha: 1.0,
            filter: vec![1.0],
            delta_budget: 0.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| usage("a seed is required: pass --seed or set `seed` in the config"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn study_params(&self) -> StudyParams {
        StudyParams {
            channel: ChannelParams {
                pathloss_exponent: self.channel.pathloss_exponent,
                fading_scale: self.channel.fading_scale,
                perturb_sigma: 0.0,
            },
            p0: self.power.p0,
            noise_power: self.power.noise_power,
            budget_fraction: self.power.budget_fraction,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let input: InputSignal = t.input.parse().map_err(|e| usage(format!("{e}")))?;
        Ok(TrainConfig {
            primal_step: t.primal_step,
            dual_step: t.dual_step,
            iterations: t.iterations,
            batch: t.batch,
            m_train: t.m_train,
            seed: self.seed()?,
            init_scale: t.init_scale,
            arch: Architecture {
                layers: t.layers,
                taps: t.taps,
                width: t.width,
            },
            input,
        })
    }

    pub fn theorem1_sweep(&self) -> Result<Theorem1Sweep> {
        let t = &self.theorem1;
        Ok(Theorem1Sweep {
            sizes: t.sizes.clone(),
            layers: t.layers.clone(),
            widths: t.widths.clone(),
            epsilon_fractions: t.epsilon_fractions.clone(),
            taps: t.taps,
            alpha_gap_fraction: t.alpha_gap_fraction,
            repeats: t.repeats,
            seed_base: self.seed()?,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

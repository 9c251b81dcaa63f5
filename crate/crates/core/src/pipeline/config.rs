//! Resolved run configuration, arm names and dotted `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{GenRecError, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::rl::RlConfig;
use crate::sft::{SftConfig, SftMode};
use crate::tokenizer::RqKmeansConfig;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSettings {
    pub level_sizes: Vec<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub zero_codeword: bool,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        let d = RqKmeansConfig::default();
        Self {
            level_sizes: d.level_sizes,
            max_iters: d.max_iters,
            tol: d.tol,
            zero_codeword: d.zero_codeword,
        }
    }
}

impl TokenizerSettings {
    pub fn with_seed(&self, seed: u64) -> RqKmeansConfig {
        RqKmeansConfig {
            level_sizes: self.level_sizes.clone(),
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
            zero_codeword: self.zero_codeword,
        }
    }
}

/// Transformer shape. Position budgets are derived: the prompt holds `max_history_items`
/// items plus three specials (whether or not the merger is on), the response holds one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_history_items: usize,
    pub level_masking: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let s = ModelConfig::small(Vec::new());
        Self {
            n_layers: s.n_layers,
            n_heads: s.n_heads,
            hidden_dim: s.hidden_dim,
            ffn_dim: s.ffn_dim,
            max_history_items: 32,
            level_masking: true,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, level_sizes: &[usize], page_size: usize, merger: bool, seed: u64) -> ModelConfig {
        let levels = level_sizes.len();
        let per_item = if merger { 1 } else { levels };
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            ffn_dim: self.ffn_dim,
            level_sizes: level_sizes.to_vec(),
            max_prompt_positions: self.max_history_items * per_item + 3,
            max_response_positions: page_size * levels,
            merger_enabled: merger,
            level_masking: self.level_masking,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of users whose pages are held out from training.
    pub heldout_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { heldout_fraction: 0.2 }
    }
}

/// Arms trained and evaluated by `all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmsConfig {
    pub sft: Vec<String>,
    pub rl: Vec<String>,
    /// SFT arm every RL arm starts from.
    pub rl_from: String,
}

impl Default for ArmsConfig {
    fn default() -> Self {
        Self {
            sft: vec!["sft-pagewise".into(), "sft-pointwise".into()],
            rl: vec!["grpo-sr".into()],
            rl_from: "sft-pagewise".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub world: WorldConfig,
    pub tokenizer: TokenizerSettings,
    pub split: SplitConfig,
    pub model: ModelSettings,
    pub sft: SftConfig,
    pub rl: RlConfig,
    pub eval: EvalConfig,
    pub arms: ArmsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("genrec-run"),
            world: WorldConfig::default(),
            tokenizer: TokenizerSettings::default(),
            split: SplitConfig::default(),
            model: ModelSettings::default(),
            sft: SftConfig {
                batch_size: 16,
                total_steps: 300,
                peak_lr: 3e-3,
                floor_lr: 3e-4,
                warmup_fraction: 0.05,
                ..SftConfig::default()
            },
            rl: RlConfig {
                steps: 400,
                batch_size: 8,
                peak_lr: 1e-3,
                floor_lr: 1e-4,
                warmup_fraction: 0.05,
                ..RlConfig::default()
            },
            eval: EvalConfig::default(),
            arms: ArmsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Applies `section.key=value` overrides. The key must already exist in the resolved
    /// config; the value is parsed as JSON and falls back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| GenRecError::InvalidConfig(format!("override `{ov}` is not key=value")))?;
            let slot = key
                .split('.')
                .try_fold(&mut tree, |node, part| match node {
                    Value::Object(map) => map.get_mut(part),
                    Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                })
                .ok_or_else(|| GenRecError::InvalidConfig(format!("unknown config key `{key}`")))?;
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        serde_json::from_value(tree).map_err(|e| GenRecError::InvalidConfig(format!("override rejected: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.sft.validate()?;
        self.rl.validate()?;
        if !(0.0..1.0).contains(&self.split.heldout_fraction) {
            return Err(GenRecError::InvalidConfig("heldout_fraction must lie in [0, 1)".into()));
        }
        if self.tokenizer.level_sizes.is_empty() {
            return Err(GenRecError::InvalidConfig("tokenizer needs at least one level".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) || self.eval.beam_width == 0 {
            return Err(GenRecError::InvalidConfig("eval needs positive ks and beam width".into()));
        }
        for a in &self.arms.sft {
            a.parse::<SftArm>()?;
        }
        for a in &self.arms.rl {
            a.parse::<RlArm>()?;
        }
        self.arms.rl_from.parse::<SftArm>()?;
        self.model_config(&self.tokenizer.level_sizes, true, 0).validate()
    }

    pub fn model_config(&self, level_sizes: &[usize], merger: bool, seed: u64) -> ModelConfig {
        self.model.model_config(level_sizes, self.world.page_size, merger, seed)
    }
}

/// `sft-pagewise`, `sft-pointwise`, with an optional `-nomerge` suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SftArm {
    pub mode: SftMode,
    pub merger: bool,
}

impl FromStr for SftArm {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        let rest = s
            .strip_prefix("sft-")
            .ok_or_else(|| GenRecError::InvalidConfig(format!("unknown SFT arm `{s}`")))?;
        let (mode, merger) = match rest.strip_suffix("-nomerge") {
            Some(m) => (m, false),
            None => (rest, true),
        };
        Ok(Self {
            mode: mode.parse()?,
            merger,
        })
    }
}

impl fmt::Display for SftArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            SftMode::Pagewise => "pagewise",
            SftMode::Pointwise => "pointwise",
        };
        write!(f, "sft-{mode}{}", if self.merger { "" } else { "-nomerge" })
    }
}

/// RL arms: GRPO-SR, plain GRPO (no supervised term), and either without the relevance gate.
/// Gate-less arms also sample rollouts without the catalog trie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlArm {
    GrpoSr,
    Grpo,
    GrpoSrNoGate,
    GrpoNoGate,
}

impl RlArm {
    pub fn apply(self, base: &RlConfig) -> RlConfig {
        let mut cfg = base.clone();
        if matches!(self, Self::Grpo | Self::GrpoNoGate) {
            cfg.alpha = 0.0;
        }
        if matches!(self, Self::GrpoSrNoGate | Self::GrpoNoGate) {
            cfg.gate_enabled = false;
            cfg.constrained_rollouts = false;
        }
        cfg
    }
}

impl FromStr for RlArm {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo-sr" => Ok(Self::GrpoSr),
            "grpo" => Ok(Self::Grpo),
            "grpo-sr-nogate" => Ok(Self::GrpoSrNoGate),
            "grpo-nogate" => Ok(Self::GrpoNoGate),
            other => Err(GenRecError::InvalidConfig(format!("unknown RL arm `{other}`"))),
        }
    }
}

impl fmt::Display for RlArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GrpoSr => "grpo-sr",
            Self::Grpo => "grpo",
            Self::GrpoSrNoGate => "grpo-sr-nogate",
            Self::GrpoNoGate => "grpo-nogate",
        })
    }
}

/// A trained model is named by the arm that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArm {
    Sft(SftArm),
    Rl(RlArm),
}

impl FromStr for ModelArm {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("sft-") {
            s.parse().map(Self::Sft)
        } else {
            s.parse().map(Self::Rl)
        }
    }
}

impl fmt::Display for ModelArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sft(a) => a.fmt(f),
            Self::Rl(a) => a.fmt(f),
        }
    }
}

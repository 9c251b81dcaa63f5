//! Decoder-only transformer over the semantic-ID vocabulary.
//!
//! Prompt items are merged into one position each by a linear projection of their concatenated
//! level-token embeddings; special tokens and response tokens stay one token per position.
//! Response position `t` predicts a token from level `t mod L` only, so every masked softmax
//! is over one level's code segment. Gradients are derived by hand in [`forward`].

mod checkpoint;
mod forward;
mod linalg;
mod params;
mod scalar;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};
use crate::tokenizer::SemanticId;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointInfo};
pub use forward::{PromptState, TokenObjective};
pub use params::TensorSpec;
pub use scalar::Scalar;

use params::ParamLayout;

pub type Token = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    /// Codebook sizes `K_1..K_L`; the SID vocabulary is their concatenation.
    pub level_sizes: Vec<usize>,
    pub max_prompt_positions: usize,
    pub max_response_positions: usize,
    pub merger_enabled: bool,
    /// When false each response token competes across the whole SID vocabulary.
    #[serde(default = "yes")]
    pub level_masking: bool,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// 4 layers, 4 heads, hidden 128, FFN 512.
    pub fn small(level_sizes: Vec<usize>) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            hidden_dim: 128,
            ffn_dim: 512,
            level_sizes,
            max_prompt_positions: 128,
            max_response_positions: 32,
            merger_enabled: true,
            level_masking: true,
            seed: 0,
        }
    }

    /// Twice the depth of [`ModelConfig::small`] at a narrower width.
    pub fn deep_narrow(level_sizes: Vec<usize>) -> Self {
        Self {
            n_layers: 8,
            hidden_dim: 96,
            ffn_dim: 384,
            ..Self::small(level_sizes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GenRecError::InvalidConfig(m));
        if self.n_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if self.level_sizes.is_empty() || self.level_sizes.contains(&0) {
            return bad("level_sizes must be non-empty and positive".into());
        }
        if self.max_prompt_positions == 0 || self.max_response_positions == 0 {
            return bad("position budgets must be positive".into());
        }
        Ok(())
    }

    pub fn vocab(&self) -> VocabLayout {
        VocabLayout::new(&self.level_sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Special {
    Bos,
    Sep,
    EmptyHistory,
}

/// Token id layout: level segments `[K_1][K_2]…[K_L]` followed by the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLayout {
    level_sizes: Vec<usize>,
    offsets: Vec<usize>,
    n_sid: usize,
}

impl VocabLayout {
    pub fn new(level_sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(level_sizes.len());
        let mut acc = 0;
        for &k in level_sizes {
            offsets.push(acc);
            acc += k;
        }
        Self {
            level_sizes: level_sizes.to_vec(),
            offsets,
            n_sid: acc,
        }
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn n_sid_tokens(&self) -> usize {
        self.n_sid
    }

    pub fn size(&self) -> usize {
        self.n_sid + 3
    }

    pub fn segment(&self, level: usize) -> Range<usize> {
        self.offsets[level]..self.offsets[level] + self.level_sizes[level]
    }

    pub fn special(&self, s: Special) -> Token {
        (self.n_sid
            + match s {
                Special::Bos => 0,
                Special::Sep => 1,
                Special::EmptyHistory => 2,
            }) as Token
    }

    pub fn token(&self, level: usize, code: u32) -> Token {
        (self.offsets[level] + code as usize) as Token
    }

    /// `(level, code)` of a SID token; `None` for specials and out-of-range ids.
    pub fn level_of(&self, token: Token) -> Option<(usize, u32)> {
        let t = token as usize;
        if t >= self.n_sid {
            return None;
        }
        let level = self.offsets.iter().rposition(|&o| o <= t)?;
        Some((level, (t - self.offsets[level]) as u32))
    }

    pub fn sid_tokens(&self, sid: &SemanticId) -> Vec<Token> {
        sid.codes().iter().enumerate().map(|(l, &c)| self.token(l, c)).collect()
    }

    /// Flat response over several items, `L` tokens each.
    pub fn response_tokens<'a>(&self, sids: impl IntoIterator<Item = &'a SemanticId>) -> Vec<Token> {
        sids.into_iter().flat_map(|s| self.sid_tokens(s)).collect()
    }

    /// Reads one item's tokens back as a SID; `None` if any token sits outside its level segment.
    pub fn sid_of(&self, tokens: &[Token]) -> Option<SemanticId> {
        if tokens.len() != self.levels() {
            return None;
        }
        tokens
            .iter()
            .enumerate()
            .map(|(l, &t)| match self.level_of(t) {
                Some((lv, code)) if lv == l => Some(code),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(SemanticId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptCell {
    Item(SemanticId),
    Special(Special),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptSequence {
    pub cells: Vec<PromptCell>,
}

impl PromptSequence {
    /// `<bos> items… <sep>`, or `<bos> <empty_history> <sep>` without history. Only the most
    /// recent `max_items` history items are kept.
    pub fn from_history(history: &[SemanticId], max_items: usize) -> Self {
        let mut cells = vec![PromptCell::Special(Special::Bos)];
        if history.is_empty() {
            cells.push(PromptCell::Special(Special::EmptyHistory));
        } else {
            let start = history.len().saturating_sub(max_items);
            cells.extend(history[start..].iter().cloned().map(PromptCell::Item));
        }
        cells.push(PromptCell::Special(Special::Sep));
        Self { cells }
    }

    pub fn n_items(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, PromptCell::Item(_))).count()
    }

    /// Positions the prompt occupies: one per cell with merging, `L` per item without.
    pub fn positions(&self, merger_enabled: bool, levels: usize) -> usize {
        self.cells
            .iter()
            .map(|c| match c {
                PromptCell::Item(_) if !merger_enabled => levels,
                _ => 1,
            })
            .sum()
    }
}

/// Transformer parameters in one flat buffer, plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    vocab: VocabLayout,
    layout: ParamLayout,
    pub params: Vec<T>,
    /// Optimizer steps applied so far.
    pub step: u64,
}

/// Training-precision policy; the checkpoint format stores exactly this.
pub type PolicyCheckpoint = Model<f32>;

impl<T: Scalar> Model<T> {
    /// Gaussian(0, 0.02) weights, zero biases, unit normalization gains; seeded by `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = crate::rng::stream(config.seed, &["model-init"]);
        let params = layout.initial_values(&mut rng, 0.02);
        Ok(Self {
            vocab: config.vocab(),
            layout,
            config,
            params,
            step: 0,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<T>, step: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(GenRecError::Format(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            vocab: config.vocab(),
            layout,
            config,
            params,
            step,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &VocabLayout {
        &self.vocab
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.offset..t.offset + t.numel()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let spec = self.layout.tensors.iter().find(|t| t.name == name)?;
        let range = spec.offset..spec.offset + spec.numel();
        Some(&mut self.params[range])
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
            step: self.step,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Softmax segment competed over at response position `t`.
    pub fn segment(&self, t: usize) -> Range<usize> {
        if self.config.level_masking {
            self.vocab.segment(t % self.vocab.levels())
        } else {
            0..self.vocab.n_sid_tokens()
        }
    }

    pub fn prompt(&self, history: &[SemanticId]) -> PromptSequence {
        let levels = self.vocab.levels();
        let reserved = 3;
        let per_item = if self.config.merger_enabled { 1 } else { levels };
        let max_items = self.config.max_prompt_positions.saturating_sub(reserved) / per_item;
        PromptSequence::from_history(history, max_items)
    }
}

/// Level-masked log-softmax of one logit row: entries outside `segment` are `-inf`.
pub fn masked_log_softmax<T: Scalar>(logits: &[T], segment: Range<usize>) -> Vec<T> {
    let seg = &logits[segment.clone()];
    let max = seg.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + seg.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    logits
        .iter()
        .enumerate()
        .map(|(j, &z)| if segment.contains(&j) { z - lse } else { T::neg_infinity() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_layout_round_trips_tokens() {
        let v = VocabLayout::new(&[4, 2, 3]);
        assert_eq!(v.size(), 12);
        assert_eq!(v.segment(1), 4..6);
        assert_eq!(v.token(2, 1), 7);
        assert_eq!(v.level_of(7), Some((2, 1)));
        assert_eq!(v.level_of(9), None);
        let sid = SemanticId::new([3, 1, 2]);
        let toks = v.sid_tokens(&sid);
        assert_eq!(toks, vec![3, 5, 8]);
        assert_eq!(v.sid_of(&toks), Some(sid));
        assert_eq!(v.sid_of(&[3, 3, 8]), None);
        assert_eq!(v.special(Special::EmptyHistory), 11);
    }

    #[test]
    fn prompt_layout_and_position_counts() {
        let h: Vec<_> = (0..8).map(|i| SemanticId::new([i, 0, 0])).collect();
        let p = PromptSequence::from_history(&h, 100);
        assert_eq!(p.cells.len(), 10);
        assert_eq!(p.positions(true, 3), 10);
        assert_eq!(p.positions(false, 3), 26);
        let empty = PromptSequence::from_history(&[], 100);
        assert_eq!(
            empty.cells,
            vec![
                PromptCell::Special(Special::Bos),
                PromptCell::Special(Special::EmptyHistory),
                PromptCell::Special(Special::Sep)
            ]
        );
        let cut = PromptSequence::from_history(&h, 3);
        assert_eq!(cut.cells[1], PromptCell::Item(SemanticId::new([5, 0, 0])));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::small(vec![4, 4, 4]);
        assert!(c.validate().is_ok());
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(GenRecError::InvalidConfig(_))));
    }

    #[test]
    fn masked_log_softmax_normalizes_within_segment() {
        let z = [1.0f64, 2.0, 3.0, -1.0];
        let lp = masked_log_softmax(&z, 1..3);
        assert_eq!(lp[0], f64::NEG_INFINITY);
        let s: f64 = lp[1..3].iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

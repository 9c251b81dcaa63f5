//! Supervised next-token training: the page-wise objective over a page's full interaction
//! sequence and the point-wise baseline with one example per positive item.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};
use crate::model::{Model, PromptSequence, Scalar, Token, TokenObjective};
use crate::optim::{AdamW, OptimState, Schedule};
use crate::tokenizer::SemanticId;
use crate::world::SidExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftMode {
    Pagewise,
    Pointwise,
}

impl std::str::FromStr for SftMode {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pagewise" => Ok(Self::Pagewise),
            "pointwise" => Ok(Self::Pointwise),
            other => Err(GenRecError::InvalidConfig(format!("unknown SFT mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub mode: SftMode,
    pub batch_size: usize,
    pub total_steps: u64,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_fraction: f64,
    pub optimizer: AdamW,
    /// Held-out loss is logged every this many steps (and after the last one); 0 logs only at
    /// the end.
    pub eval_every: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            mode: SftMode::Pagewise,
            batch_size: 32,
            total_steps: 5000,
            peak_lr: 3e-4,
            floor_lr: 0.0,
            warmup_fraction: 0.01,
            optimizer: AdamW::default(),
            eval_every: 0,
        }
    }
}

impl SftConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            total_steps: self.total_steps,
            warmup_fraction: self.warmup_fraction,
            peak_lr: self.peak_lr,
            floor_lr: self.floor_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GenRecError::InvalidConfig("batch_size must be positive".into()));
        }
        self.schedule().validate()
    }
}

/// One supervised sequence: a prompt and the response tokens it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SftUnit {
    pub prompt: PromptSequence,
    pub tokens: Vec<Token>,
}

/// Expands examples into training units. Page-wise: one unit per page with the whole target.
/// Point-wise: one unit per positive item, each repeating the page's prompt.
pub fn build_units<T: Scalar>(model: &Model<T>, examples: &[SidExample], mode: SftMode) -> Vec<SftUnit> {
    let vocab = model.vocab();
    let mut units = Vec::new();
    for ex in examples {
        let prompt = model.prompt(&ex.prompt);
        match mode {
            SftMode::Pagewise if !ex.target.is_empty() => units.push(SftUnit {
                prompt,
                tokens: vocab.response_tokens(&ex.target),
            }),
            SftMode::Pagewise => {}
            SftMode::Pointwise => units.extend(ex.positives().map(|sid| SftUnit {
                prompt: prompt.clone(),
                tokens: vocab.sid_tokens(sid),
            })),
        }
    }
    units
}

/// Negative log-likelihood of the page's full target sequence.
pub fn sft_loss<T: Scalar>(model: &Model<T>, example: &SidExample) -> Result<T> {
    if example.target.is_empty() {
        return Err(GenRecError::InvalidConfig("page target is empty".into()));
    }
    let tokens = model.vocab().response_tokens(&example.target);
    Ok(-model.log_prob(&model.prompt(&example.prompt), &tokens)?)
}

/// Negative log-likelihood of a single item given the history.
pub fn pointwise_ntp_loss<T: Scalar>(model: &Model<T>, history: &[SemanticId], sid: &SemanticId) -> Result<T> {
    let tokens = model.vocab().sid_tokens(sid);
    Ok(-model.log_prob(&model.prompt(history), &tokens)?)
}

/// Mean page-wise loss over the examples with a non-empty target.
pub fn eval_loss<T: Scalar>(model: &Model<T>, examples: &[SidExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples.iter().filter(|e| !e.target.is_empty()) {
        total += sft_loss(model, ex)?.as_f64();
        n += 1;
    }
    if n == 0 {
        return Err(GenRecError::EmptyEval);
    }
    Ok(total / n as f64)
}

/// Mean loss over `batch` and its gradient (added into `grad`).
pub fn batch_loss_grad<T: Scalar>(model: &Model<T>, batch: &[&SftUnit], grad: &mut [T]) -> Result<f64> {
    let coef = -1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for unit in batch {
        let objectives = vec![TokenObjective::LogProb(coef); unit.tokens.len()];
        let lps = model.objective_grad(&unit.prompt, &unit.tokens, &objectives, Some(grad))?;
        loss -= lps.iter().map(|l| l.as_f64()).sum::<f64>();
    }
    Ok(loss / batch.len() as f64)
}

/// Training metrics in `step<TAB>split<TAB>metric<TAB>value` form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<(u64, String, String, f64)>,
}

impl MetricsLog {
    pub fn push(&mut self, step: u64, split: &str, metric: &str, value: f64) {
        self.rows.push((step, split.to_string(), metric.to_string(), value));
    }

    pub fn series(&self, split: &str, metric: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.1 == split && r.2 == metric)
            .map(|r| (r.0, r.3))
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (step, split, metric, value) in &self.rows {
            let _ = writeln!(s, "{step}\t{split}\t{metric}\t{value}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || GenRecError::Format(format!("metrics line {}: `{line}`", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            log.push(
                f[0].parse().map_err(|_| bad())?,
                f[1],
                f[2],
                f[3].parse().map_err(|_| bad())?,
            );
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftReport {
    pub log: MetricsLog,
    pub train_losses: Vec<f64>,
    pub final_eval_loss: Option<f64>,
}

fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs `config.total_steps` AdamW steps over shuffled mini-batches of `train`. The shuffle
/// order is reseeded every epoch from `seed`. On a non-finite loss, gradient or update
/// the model is left at its last finite state and `NumericalError` is returned.
pub fn train_sft(
    model: &mut Model<f32>,
    train: &[SidExample],
    heldout: &[SidExample],
    config: &SftConfig,
    seed: u64,
) -> Result<SftReport> {
    config.validate()?;
    let units = build_units(model, train, config.mode);
    if units.is_empty() {
        return Err(GenRecError::InvalidConfig("training set has no usable examples".into()));
    }
    let schedule = config.schedule();
    let mut opt = OptimState::new(model.n_params(), config.optimizer);
    let mut log = MetricsLog::default();
    let mut losses = Vec::with_capacity(config.total_steps as usize);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut grad = model.zeros_like();
    let mut final_eval = None;

    for step in 1..=config.total_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..units.len()).collect();
                order.shuffle(&mut crate::rng::stream(seed, &["sft-shuffle", &epoch.to_string()]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&units[order[cursor]]);
            cursor += 1;
        }
        grad.fill(0.0);
        let loss = batch_loss_grad(model, &batch, &mut grad)?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(GenRecError::NumericalError(format!("non-finite loss or gradient at step {step}")));
        }
        let backup = model.params.clone();
        opt.update(&mut model.params, &grad, schedule.lr(step))?;
        if !all_finite(&model.params) {
            model.params = backup;
            return Err(GenRecError::NumericalError(format!("non-finite parameters after step {step}")));
        }
        model.step += 1;
        log.push(step, "train", "loss", loss);
        log.push(step, "train", "lr", schedule.lr(step));
        losses.push(loss);
        let eval_now = step == config.total_steps || (config.eval_every > 0 && step % config.eval_every == 0);
        if eval_now && !heldout.is_empty() {
            let l = eval_loss(model, heldout)?;
            log.push(step, "heldout", "loss", l);
            final_eval = Some(l);
        }
    }
    Ok(SftReport {
        log,
        train_losses: losses,
        final_eval_loss: final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            level_sizes: vec![4, 4, 4],
            max_prompt_positions: 16,
            max_response_positions: 12,
            merger_enabled: true,
            level_masking: true,
            seed: 1,
        }
    }

    fn examples() -> Vec<SidExample> {
        vec![
            SidExample {
                user_id: 0,
                prompt: vec![],
                target: vec![SemanticId::new([0, 1, 2]), SemanticId::new([3, 3, 0])],
                positive_flags: vec![true, false],
            },
            SidExample {
                user_id: 1,
                prompt: vec![SemanticId::new([1, 1, 1])],
                target: vec![SemanticId::new([2, 0, 1]), SemanticId::new([1, 2, 3]), SemanticId::new([0, 0, 0])],
                positive_flags: vec![true, true, false],
            },
        ]
    }

    #[test]
    fn uniform_head_gives_closed_form_losses() {
        let mut cfg = config();
        cfg.level_sizes = vec![64, 64, 64];
        let mut m = Model::<f64>::init(cfg).unwrap();
        m.tensor_mut("out.weight").unwrap().fill(0.0);
        let ex = SidExample {
            user_id: 0,
            prompt: vec![SemanticId::new([5, 6, 7])],
            target: vec![SemanticId::new([1, 2, 3]), SemanticId::new([4, 5, 6])],
            positive_flags: vec![true, true],
        };
        let page = sft_loss(&m, &ex).unwrap();
        assert!((page - 6.0 * 64f64.ln()).abs() < 1e-12);
        let point = pointwise_ntp_loss(&m, &ex.prompt, &ex.target[0]).unwrap();
        assert!((point - 3.0 * 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pointwise_units_cover_positives_only() {
        let m = Model::<f32>::init(config()).unwrap();
        let page = build_units(&m, &examples(), SftMode::Pagewise);
        let point = build_units(&m, &examples(), SftMode::Pointwise);
        assert_eq!(page.len(), 2);
        assert_eq!(page[1].tokens.len(), 9);
        assert_eq!(point.len(), 3);
        assert!(point.iter().all(|u| u.tokens.len() == 3));
        assert_eq!(point[1].prompt, point[2].prompt);
    }

    #[test]
    fn zero_rate_training_leaves_parameters_unchanged() {
        let mut m = Model::<f32>::init(config()).unwrap();
        let orig = m.params.clone();
        let cfg = SftConfig {
            batch_size: 2,
            total_steps: 5,
            peak_lr: 0.0,
            ..SftConfig::default()
        };
        let report = train_sft(&mut m, &examples(), &[], &cfg, 0).unwrap();
        assert_eq!(m.params, orig);
        assert_eq!(report.train_losses.len(), 5);
        assert_eq!(m.step, 5);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let cfg = SftConfig {
            batch_size: 2,
            total_steps: 60,
            peak_lr: 1e-2,
            warmup_fraction: 0.1,
            ..SftConfig::default()
        };
        let mut a = Model::<f32>::init(config()).unwrap();
        let mut b = Model::<f32>::init(config()).unwrap();
        let ra = train_sft(&mut a, &examples(), &examples(), &cfg, 3).unwrap();
        let rb = train_sft(&mut b, &examples(), &examples(), &cfg, 3).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
        let l = &ra.train_losses;
        assert!(l[l.len() - 1] < l[0]);
    }

    #[test]
    fn metrics_log_round_trips() {
        let mut log = MetricsLog::default();
        log.push(1, "train", "loss", 2.5);
        log.push(2, "heldout", "loss", 0.1);
        let back = MetricsLog::parse(&log.render()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log.series("train", "loss"), vec![(1, 2.5)]);
    }
}

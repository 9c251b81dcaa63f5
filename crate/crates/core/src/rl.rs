//! Preference alignment with group-relative policy optimization: gated hybrid rewards,
//! positive anchoring, standardized group advantages, and a supervised NLL regularizer on
//! the page's real positives.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decode::{sample_rollouts, Rollout, Sampling};
use crate::error::{GenRecError, Result};
use crate::model::{Model, PromptSequence, Scalar, Token, TokenObjective};
use crate::optim::{AdamW, OptimState, Schedule};
use crate::tokenizer::SemanticId;
use crate::world::{SidExample, SidOracle, UserId, UserProfile};

pub const ADVANTAGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageNorm {
    /// `(r − mean) / (std + ε)` with the population standard deviation.
    Standardize,
    /// `r − mean`
    MeanOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub group_size: usize,
    pub tau: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub steps: u64,
    /// Prompts per optimizer step.
    pub batch_size: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_fraction: f64,
    pub optimizer: AdamW,
    pub gate_enabled: bool,
    pub constrained_rollouts: bool,
    pub advantage: AdvantageNorm,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            tau: 0.2,
            alpha: 0.1,
            temperature: 1.0,
            steps: 200,
            batch_size: 16,
            peak_lr: 1e-4,
            floor_lr: 0.0,
            warmup_fraction: 0.01,
            optimizer: AdamW::default(),
            gate_enabled: true,
            constrained_rollouts: false,
            advantage: AdvantageNorm::Standardize,
        }
    }
}

impl RlConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            total_steps: self.steps,
            warmup_fraction: self.warmup_fraction,
            peak_lr: self.peak_lr,
            floor_lr: self.floor_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GenRecError::InvalidConfig(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.tau.is_nan() || self.tau < 0.0 || self.alpha.is_nan() || self.alpha < 0.0 {
            return bad("tau and alpha must be non-negative");
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad("temperature must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        self.schedule().validate()
    }
}

/// `r_i = 1(s_i > τ) · pref_i`; with the gate disabled every candidate passes.
pub fn hybrid_reward(gate_scores: &[f64], prefs: &[f64], tau: f64, gate_enabled: bool) -> Result<Vec<f64>> {
    if gate_scores.len() != prefs.len() {
        return Err(GenRecError::DimensionMismatch {
            expected: prefs.len(),
            got: gate_scores.len(),
        });
    }
    gate_scores
        .iter()
        .zip(prefs)
        .enumerate()
        .map(|(index, (&s, &p))| {
            if !(0.0..=1.0).contains(&p) {
                return Err(GenRecError::InvalidReward { index, value: p });
            }
            Ok(if !gate_enabled || s > tau { p } else { 0.0 })
        })
        .collect()
}

/// Positives take the group's maximum hybrid reward; everything else keeps its own.
pub fn calibrate(rewards: &[f64], positive: &[bool]) -> Vec<f64> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rewards
        .iter()
        .zip(positive)
        .map(|(&r, &p)| if p { max } else { r })
        .collect()
}

pub fn group_advantage(rewards: &[f64], norm: AdvantageNorm) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards
        .iter()
        .map(|r| match norm {
            AdvantageNorm::Standardize => (r - mean) / (std + ADVANTAGE_EPS),
            AdvantageNorm::MeanOnly => r - mean,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoLoss {
    /// Policy term; the stop-gradient ratio is 1 in value, so this is `−(1/G) Σ Â_i`.
    pub policy: f64,
    /// `−α · mean over positives of their sequence log-likelihood`
    pub nll: f64,
}

impl GrpoLoss {
    pub fn total(&self) -> f64 {
        self.policy + self.nll
    }
}

/// Loss for one prompt's rollout group. When `grad` is given, accumulates `scale ×` its
/// gradient. The policy term is differentiated through `π / sg(π)`, with the stop-gradient
/// denominator taken from the probabilities recorded at sampling time.
#[allow(clippy::too_many_arguments)]
pub fn grpo_sr_loss<T: Scalar>(
    model: &Model<T>,
    prompt: &PromptSequence,
    rollouts: &[Rollout],
    advantages: &[f64],
    positives: &[SemanticId],
    alpha: f64,
    scale: f64,
    grad: Option<&mut [T]>,
) -> Result<GrpoLoss> {
    if rollouts.len() != advantages.len() || rollouts.is_empty() {
        return Err(GenRecError::DimensionMismatch {
            expected: rollouts.len(),
            got: advantages.len(),
        });
    }
    let g = rollouts.len() as f64;
    let nll_coef = if positives.is_empty() { 0.0 } else { alpha / positives.len() as f64 };
    let positive_tokens: Vec<Vec<Token>> = if alpha > 0.0 {
        positives.iter().map(|s| model.vocab().sid_tokens(s)).collect()
    } else {
        Vec::new()
    };
    let mut responses: Vec<&[Token]> = rollouts.iter().map(|o| o.tokens.as_slice()).collect();
    responses.extend(positive_tokens.iter().map(|t| t.as_slice()));
    let log_probs = match grad {
        Some(grad) => {
            let mut objectives: Vec<Vec<TokenObjective>> = rollouts
                .iter()
                .zip(advantages)
                .map(|(o, &adv)| {
                    let len = o.tokens.len() as f64;
                    o.token_log_probs
                        .iter()
                        .map(|&old| TokenObjective::Prob(-scale * adv / (g * len * old.exp())))
                        .collect()
                })
                .collect();
            objectives.extend(
                positive_tokens
                    .iter()
                    .map(|t| vec![TokenObjective::LogProb(-scale * nll_coef); t.len()]),
            );
            let refs: Vec<&[TokenObjective]> = objectives.iter().map(|o| o.as_slice()).collect();
            model.objective_grad_group(prompt, &responses, &refs, grad)?
        }
        None => model.group_log_probs(prompt, &responses)?,
    };
    let mut policy = 0.0;
    for ((o, &adv), now) in rollouts.iter().zip(advantages).zip(&log_probs) {
        let mut ratio_sum = 0.0;
        for (lp, old) in now.iter().zip(&o.token_log_probs) {
            let ratio = (lp.as_f64() - old).exp();
            if !ratio.is_finite() {
                return Err(GenRecError::NumericalError("non-finite importance ratio".into()));
            }
            ratio_sum += ratio * adv;
        }
        policy -= ratio_sum / (o.tokens.len() as f64 * g);
    }
    let nll = -nll_coef
        * log_probs[rollouts.len()..]
            .iter()
            .flatten()
            .map(|l| l.as_f64())
            .sum::<f64>();
    if !policy.is_finite() || !nll.is_finite() {
        return Err(GenRecError::NumericalError("non-finite GRPO loss".into()));
    }
    Ok(GrpoLoss { policy, nll })
}

/// Everything scored for one candidate of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub gate_score: f64,
    pub gate: bool,
    pub pref: f64,
    pub hybrid: f64,
    pub calibrated: f64,
    pub is_positive: bool,
    pub valid: bool,
}

/// Scores a rollout group against the oracle for `user`.
pub fn score_group(
    oracle: &SidOracle,
    user: &UserProfile,
    rollouts: &[Rollout],
    positives: &[SemanticId],
    vocab: &crate::model::VocabLayout,
    config: &RlConfig,
) -> Result<Vec<RewardRecord>> {
    let sids: Vec<Option<SemanticId>> = rollouts.iter().map(|o| vocab.sid_of(&o.tokens)).collect();
    let gate_scores: Vec<f64> = sids
        .iter()
        .map(|s| s.as_ref().map_or(0.0, |s| oracle.relevance(user, s)))
        .collect();
    let prefs: Vec<f64> = sids
        .iter()
        .map(|s| s.as_ref().map_or(0.0, |s| oracle.reward_preference(user, s)))
        .collect();
    let hybrid = hybrid_reward(&gate_scores, &prefs, config.tau, config.gate_enabled)?;
    let is_positive: Vec<bool> = sids
        .iter()
        .map(|s| s.as_ref().is_some_and(|s| positives.contains(s)))
        .collect();
    let calibrated = calibrate(&hybrid, &is_positive);
    Ok((0..rollouts.len())
        .map(|i| RewardRecord {
            gate_score: gate_scores[i],
            gate: gate_scores[i] > config.tau,
            pref: prefs[i],
            hybrid: hybrid[i],
            calibrated: calibrated[i],
            is_positive: is_positive[i],
            valid: sids[i].as_ref().is_some_and(|s| oracle.trie.contains(s)),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlStepStats {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_calibrated: f64,
    /// Fraction of rollouts that are not catalog SIDs.
    pub har: f64,
    /// Fraction of rollouts whose relevance clears τ, whether or not the gate is applied.
    pub gate_pass_rate: f64,
    pub loss: f64,
    /// Every positive candidate carried its group's maximum hybrid reward.
    pub anchored: bool,
    /// Averages over groups holding both kinds of candidate of the per-group mean calibrated
    /// reward of positives and of non-positives.
    pub positive_mean: Option<f64>,
    pub non_positive_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlReport {
    pub steps: Vec<RlStepStats>,
}

impl RlReport {
    /// Reward log: `step<TAB>mean_reward<TAB>mean_calibrated<TAB>har<TAB>gate_pass_rate`.
    pub fn render_reward_log(&self) -> String {
        let mut s = String::new();
        for st in &self.steps {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                st.step, st.mean_reward, st.mean_calibrated, st.har, st.gate_pass_rate
            );
        }
        s
    }

    pub fn write_reward_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_reward_log())?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// On-policy training: every step samples fresh groups for a batch of prompts, scores them,
/// and applies one AdamW update to the mean GRPO-SR loss. Only examples with at least one
/// positive are used as prompts.
pub fn train_rl(
    model: &mut Model<f32>,
    prompts: &[SidExample],
    users: &[UserProfile],
    oracle: &SidOracle,
    config: &RlConfig,
    seed: u64,
) -> Result<RlReport> {
    config.validate()?;
    let prompts: Vec<&SidExample> = prompts.iter().filter(|e| e.has_positive()).collect();
    if prompts.is_empty() {
        return Err(GenRecError::InvalidConfig("no RL prompts with positives".into()));
    }
    let user_of: HashMap<UserId, &UserProfile> = users.iter().map(|u| (u.user_id, u)).collect();
    let schedule = config.schedule();
    let mut opt = OptimState::new(model.n_params(), config.optimizer);
    let mut grad = model.zeros_like();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut stats = Vec::with_capacity(config.steps as usize);
    let scale = 1.0 / config.batch_size as f64;
    let sampling = Sampling::Temperature(config.temperature);

    for step in 1..=config.steps {
        grad.fill(0.0);
        let mut records: Vec<RewardRecord> = Vec::new();
        let mut anchored = true;
        let (mut pos_means, mut non_means) = (Vec::new(), Vec::new());
        let mut loss = 0.0;
        for b in 0..config.batch_size {
            if cursor == order.len() {
                order = (0..prompts.len()).collect();
                order.shuffle(&mut crate::rng::stream(seed, &["rl-shuffle", &epoch.to_string()]));
                epoch += 1;
                cursor = 0;
            }
            let ex = prompts[order[cursor]];
            cursor += 1;
            let user = user_of
                .get(&ex.user_id)
                .ok_or_else(|| GenRecError::Format(format!("unknown user {}", ex.user_id)))?;
            let prompt = model.prompt(&ex.prompt);
            let positives: Vec<SemanticId> = ex.positives().cloned().collect();
            let mut rng = crate::rng::stream(seed, &["rollouts", &step.to_string(), &b.to_string()]);
            let group = sample_rollouts(
                model,
                &prompt,
                config.group_size,
                sampling,
                config.constrained_rollouts,
                oracle.trie,
                &mut rng,
            )?;
            let recs = score_group(oracle, user, &group.candidates, &positives, model.vocab(), config)?;
            let max = recs.iter().map(|r| r.hybrid).fold(f64::NEG_INFINITY, f64::max);
            anchored &= recs.iter().filter(|r| r.is_positive).all(|r| r.calibrated == max);
            let pos: Vec<f64> = recs.iter().filter(|r| r.is_positive).map(|r| r.calibrated).collect();
            let non: Vec<f64> = recs.iter().filter(|r| !r.is_positive).map(|r| r.calibrated).collect();
            if !pos.is_empty() && !non.is_empty() {
                pos_means.push(mean(&pos));
                non_means.push(mean(&non));
            }
            let calibrated: Vec<f64> = recs.iter().map(|r| r.calibrated).collect();
            let adv = group_advantage(&calibrated, config.advantage);
            let l = grpo_sr_loss(
                model,
                &prompt,
                &group.candidates,
                &adv,
                &positives,
                config.alpha,
                scale,
                Some(&mut grad),
            )?;
            loss += scale * l.total();
            records.extend(recs);
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(GenRecError::NumericalError(format!("non-finite gradient at RL step {step}")));
        }
        let backup = model.params.clone();
        opt.update(&mut model.params, &grad, schedule.lr(step))?;
        if !model.all_finite() {
            model.params = backup;
            return Err(GenRecError::NumericalError(format!("non-finite parameters after RL step {step}")));
        }
        model.step += 1;
        let n = records.len() as f64;
        stats.push(RlStepStats {
            step,
            mean_reward: records.iter().map(|r| r.hybrid).sum::<f64>() / n,
            mean_calibrated: records.iter().map(|r| r.calibrated).sum::<f64>() / n,
            har: records.iter().filter(|r| !r.valid).count() as f64 / n,
            gate_pass_rate: records.iter().filter(|r| r.gate).count() as f64 / n,
            loss,
            anchored,
            positive_mean: (!pos_means.is_empty()).then(|| mean(&pos_means)),
            non_positive_mean: (!non_means.is_empty()).then(|| mean(&non_means)),
        });
    }
    Ok(RlReport { steps: stats })
}

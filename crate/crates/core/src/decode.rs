//! Point-wise inference: beam search over one item's SID tokens (optionally restricted to
//! catalog prefixes) and ancestral sampling of rollout groups.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};
use crate::model::{masked_log_softmax, Model, PromptSequence, PromptState, Scalar, Token, VocabLayout};
use crate::tokenizer::{SemanticId, SidTrie};
use crate::world::UserId;

/// A finished or partial token sequence with its summed log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<Token>,
    pub score: f64,
}

fn rank_order(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Tokens allowed at response position `t` after `prefix`: the level's segment, or in
/// constrained mode only the codes that keep the prefix inside the catalog trie.
fn allowed_tokens<T: Scalar>(model: &Model<T>, trie: Option<&SidTrie>, prefix: &[Token]) -> Vec<usize> {
    let t = prefix.len();
    let vocab = model.vocab();
    match trie {
        None => model.segment(t).collect(),
        Some(trie) => {
            let level = t % vocab.levels();
            let codes: Option<Vec<u32>> = prefix
                .iter()
                .map(|&tok| vocab.level_of(tok).map(|(_, c)| c))
                .collect();
            match codes {
                Some(codes) => trie
                    .next_codes(&codes)
                    .into_iter()
                    .map(|c| vocab.token(level, c) as usize)
                    .collect(),
                None => Vec::new(),
            }
        }
    }
}

fn level_log_probs<T: Scalar>(model: &Model<T>, state: &PromptState<T>, prefix: &[Token]) -> Result<Vec<f64>> {
    let logits = model.next_logits(state, prefix)?;
    Ok(masked_log_softmax(&logits, model.segment(prefix.len()))
        .into_iter()
        .map(|x| x.as_f64())
        .collect())
}

/// Length-`L` beam search. Returns up to `beam_width` complete sequences ranked by summed
/// log-probability, ties broken by token order (equivalently by codes).
pub fn beam_search<T: Scalar>(
    model: &Model<T>,
    prompt: &PromptSequence,
    beam_width: usize,
    constrained: bool,
    trie: &SidTrie,
) -> Result<Vec<BeamHypothesis>> {
    if beam_width == 0 {
        return Err(GenRecError::InvalidConfig("beam width must be at least 1".into()));
    }
    if constrained && trie.is_empty() {
        return Err(GenRecError::EmptyCatalog);
    }
    let trie = constrained.then_some(trie);
    let state = model.prompt_state(prompt)?;
    let mut beams = vec![BeamHypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    for _ in 0..model.vocab().levels() {
        let mut next = Vec::new();
        for beam in &beams {
            let lp = level_log_probs(model, &state, &beam.tokens)?;
            for tok in allowed_tokens(model, trie, &beam.tokens) {
                let mut tokens = beam.tokens.clone();
                tokens.push(tok as Token);
                next.push(BeamHypothesis {
                    tokens,
                    score: beam.score + lp[tok],
                });
            }
        }
        next.sort_by(rank_order);
        next.truncate(beam_width);
        beams = next;
    }
    Ok(beams)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Zero-temperature limit: always the most probable allowed token.
    Greedy,
    Temperature(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<Token>,
    /// Log-probability under the policy itself: untempered and not renormalized to the trie.
    pub log_prob: f64,
    /// Per-token terms of `log_prob`.
    pub token_log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub candidates: Vec<Rollout>,
    pub sampling: Sampling,
}

fn draw(lp: &[f64], allowed: &[usize], sampling: Sampling, rng: &mut impl Rng) -> Option<usize> {
    let best = allowed
        .iter()
        .copied()
        .filter(|&j| lp[j].is_finite())
        .max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a)))?;
    let temp = match sampling {
        Sampling::Greedy => return Some(best),
        Sampling::Temperature(t) => t,
    };
    let top = lp[best];
    let weights: Vec<f64> = allowed.iter().map(|&j| ((lp[j] - top) / temp).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&j, &w) in allowed.iter().zip(&weights) {
        if u < w {
            return Some(j);
        }
        u -= w;
    }
    Some(best)
}

/// Draws `g` independent single-item sequences. Duplicates are kept.
pub fn sample_rollouts<T: Scalar>(
    model: &Model<T>,
    prompt: &PromptSequence,
    g: usize,
    sampling: Sampling,
    constrained: bool,
    trie: &SidTrie,
    rng: &mut impl Rng,
) -> Result<RolloutGroup> {
    if g < 2 {
        return Err(GenRecError::InvalidConfig("a rollout group needs at least 2 candidates".into()));
    }
    if let Sampling::Temperature(t) = sampling {
        if !(t > 0.0 && t.is_finite()) {
            return Err(GenRecError::InvalidConfig(format!("temperature {t} must be positive")));
        }
    }
    if constrained && trie.is_empty() {
        return Err(GenRecError::EmptyCatalog);
    }
    let trie = constrained.then_some(trie);
    let state = model.prompt_state(prompt)?;
    let mut cache: HashMap<Vec<Token>, Vec<f64>> = HashMap::new();
    let mut candidates = Vec::with_capacity(g);
    for _ in 0..g {
        let mut tokens = Vec::with_capacity(model.vocab().levels());
        let mut token_log_probs = Vec::with_capacity(model.vocab().levels());
        for _ in 0..model.vocab().levels() {
            if !cache.contains_key(&tokens) {
                cache.insert(tokens.clone(), level_log_probs(model, &state, &tokens)?);
            }
            let lp = &cache[&tokens];
            let allowed = allowed_tokens(model, trie, &tokens);
            let tok = draw(lp, &allowed, sampling, rng)
                .ok_or_else(|| GenRecError::NumericalError("no finite token probability to sample".into()))?;
            token_log_probs.push(lp[tok]);
            tokens.push(tok as Token);
        }
        candidates.push(Rollout {
            tokens,
            log_prob: token_log_probs.iter().sum(),
            token_log_probs,
        });
    }
    Ok(RolloutGroup { candidates, sampling })
}

/// One ranked prediction as stored in a decode file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rank: usize,
    /// `None` when some token sits outside its level segment.
    pub sid: Option<SemanticId>,
    /// The SID column: codes, with `!<token>` for tokens outside their level.
    pub text: String,
    pub log_prob: f64,
    pub valid: bool,
}

impl Prediction {
    pub fn from_tokens(vocab: &VocabLayout, trie: &SidTrie, rank: usize, tokens: &[Token], log_prob: f64) -> Self {
        let sid = vocab.sid_of(tokens);
        let text = match &sid {
            Some(s) => s.to_string(),
            None => tokens
                .iter()
                .enumerate()
                .map(|(l, &t)| match vocab.level_of(t) {
                    Some((lv, c)) if lv == l => c.to_string(),
                    _ => format!("!{t}"),
                })
                .collect::<Vec<_>>()
                .join(","),
        };
        let valid = sid.as_ref().is_some_and(|s| trie.contains(s));
        Self {
            rank,
            sid,
            text,
            log_prob,
            valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub user_id: UserId,
    pub predictions: Vec<Prediction>,
}

pub fn decode_record<T: Scalar>(
    model: &Model<T>,
    user_id: UserId,
    history: &[SemanticId],
    beam_width: usize,
    constrained: bool,
    trie: &SidTrie,
) -> Result<DecodeRecord> {
    let beams = beam_search(model, &model.prompt(history), beam_width, constrained, trie)?;
    let predictions = beams
        .iter()
        .enumerate()
        .map(|(i, b)| Prediction::from_tokens(model.vocab(), trie, i + 1, &b.tokens, b.score))
        .collect();
    Ok(DecodeRecord { user_id, predictions })
}

/// Decode file: one prediction per line, `user_id<TAB>rank<TAB>s1,s2,s3<TAB>logprob<TAB>valid`;
/// a record ends where the next line restarts at rank 1.
pub fn render_decode_file(records: &[DecodeRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for p in &r.predictions {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.user_id,
                p.rank,
                p.text,
                p.log_prob,
                u8::from(p.valid)
            );
        }
    }
    s
}

pub fn parse_decode_file(text: &str) -> Result<Vec<DecodeRecord>> {
    let mut records: Vec<DecodeRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |what: &str| GenRecError::Format(format!("decode line {}: {what}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let user_id: UserId = f[0].parse().map_err(|_| bad("user id"))?;
        let rank: usize = f[1].parse().map_err(|_| bad("rank"))?;
        let sid = if f[2].contains('!') {
            None
        } else {
            Some(f[2].parse::<SemanticId>().map_err(|_| bad("sid"))?)
        };
        let log_prob: f64 = f[3].parse().map_err(|_| bad("log-probability"))?;
        let valid = match f[4] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("valid flag")),
        };
        let pred = Prediction {
            rank,
            sid,
            text: f[2].to_string(),
            log_prob,
            valid,
        };
        match records.last_mut() {
            Some(r) if rank != 1 => {
                if r.user_id != user_id || rank != r.predictions.len() + 1 {
                    return Err(bad("rank sequence broken"));
                }
                r.predictions.push(pred);
            }
            _ if rank == 1 => records.push(DecodeRecord {
                user_id,
                predictions: vec![pred],
            }),
            _ => return Err(bad("first rank must be 1")),
        }
    }
    Ok(records)
}

pub fn write_decode_file(path: &Path, records: &[DecodeRecord]) -> Result<()> {
    std::fs::write(path, render_decode_file(records))?;
    Ok(())
}

pub fn read_decode_file(path: &Path) -> Result<Vec<DecodeRecord>> {
    parse_decode_file(&std::fs::read_to_string(path)?)
}

//! Offline retrieval metrics over decode outputs: hit rate, NDCG, hallucination rate and the
//! best oracle reward among the top predictions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeRecord, Prediction};
use crate::error::{GenRecError, Result};
use crate::tokenizer::SemanticId;
use crate::world::{SidExample, SidOracle, UserId, UserProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub beam_width: usize,
    pub constrained: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10, 50],
            beam_width: 50,
            constrained: true,
        }
    }
}

/// Ranked predictions for one page together with the page's positives.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub user_id: UserId,
    pub predictions: Vec<Prediction>,
    /// Positives in interaction-intensity order; the first is the primary target.
    pub targets: Vec<SemanticId>,
}

impl EvalRecord {
    pub fn primary(&self) -> &SemanticId {
        &self.targets[0]
    }

    /// 1-based rank of the first prediction equal to `sid`.
    pub fn rank_of(&self, sid: &SemanticId) -> Option<usize> {
        self.predictions
            .iter()
            .position(|p| p.sid.as_ref() == Some(sid))
            .map(|i| i + 1)
    }
}

/// Pages that can be scored: those with at least one positive.
pub fn eval_pages(examples: &[SidExample]) -> Vec<&SidExample> {
    examples.iter().filter(|e| e.has_positive()).collect()
}

/// Pairs decode records with the scorable pages they were produced for, in order.
pub fn build_eval_records(decoded: &[DecodeRecord], examples: &[SidExample]) -> Result<Vec<EvalRecord>> {
    let pages = eval_pages(examples);
    if pages.len() != decoded.len() {
        return Err(GenRecError::Format(format!(
            "{} decode records for {} scorable pages",
            decoded.len(),
            pages.len()
        )));
    }
    decoded
        .iter()
        .zip(pages)
        .map(|(d, ex)| {
            if d.user_id != ex.user_id {
                return Err(GenRecError::Format(format!(
                    "decode record for user {} aligned with page of user {}",
                    d.user_id, ex.user_id
                )));
            }
            Ok(EvalRecord {
                user_id: d.user_id,
                predictions: d.predictions.clone(),
                targets: ex.positives().cloned().collect(),
            })
        })
        .collect()
}

fn check(records: &[EvalRecord], k: usize) -> Result<()> {
    if records.is_empty() {
        return Err(GenRecError::EmptyEval);
    }
    if k == 0 {
        return Err(GenRecError::InvalidConfig("K must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of records whose top-`k` predictions contain the primary target.
pub fn hit_rate_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    check(records, k)?;
    let hits = records
        .iter()
        .filter(|r| r.rank_of(r.primary()).is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Fraction of records whose top-`k` predictions contain any positive.
pub fn hit_rate_any_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    check(records, k)?;
    let hits = records
        .iter()
        .filter(|r| {
            r.predictions
                .iter()
                .take(k)
                .any(|p| p.sid.as_ref().is_some_and(|s| r.targets.contains(s)))
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Binary-relevance NDCG on the primary target (ideal DCG is 1).
pub fn ndcg_at_k(records: &[EvalRecord], k: usize) -> Result<f64> {
    check(records, k)?;
    let total: f64 = records
        .iter()
        .map(|r| match r.rank_of(r.primary()) {
            Some(rank) if rank <= k => 1.0 / ((1 + rank) as f64).log2(),
            _ => 0.0,
        })
        .sum();
    Ok(total / records.len() as f64)
}

/// Invalid predictions over all predictions emitted.
pub fn hallucination_rate(records: &[EvalRecord]) -> Result<f64> {
    check(records, 1)?;
    let total: usize = records.iter().map(|r| r.predictions.len()).sum();
    if total == 0 {
        return Err(GenRecError::EmptyEval);
    }
    let invalid = records.iter().flat_map(|r| &r.predictions).filter(|p| !p.valid).count();
    Ok(invalid as f64 / total as f64)
}

/// Mean over records of the best leaf preference among the top-`k` valid predictions;
/// invalid predictions score 0.
pub fn reward_at_k(records: &[EvalRecord], k: usize, oracle: &SidOracle, users: &[UserProfile]) -> Result<f64> {
    check(records, k)?;
    let user_of: HashMap<UserId, &UserProfile> = users.iter().map(|u| (u.user_id, u)).collect();
    let mut total = 0.0;
    for r in records {
        let user = user_of
            .get(&r.user_id)
            .ok_or_else(|| GenRecError::Format(format!("unknown user {}", r.user_id)))?;
        let best = r
            .predictions
            .iter()
            .take(k)
            .map(|p| match (&p.sid, p.valid) {
                (Some(s), true) => oracle.leaf_preference(user, s).unwrap_or(0.0),
                _ => 0.0,
            })
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / records.len() as f64)
}

/// All metrics keyed `hr@k`, `hr_any@k`, `ndcg@k`, `reward@k` and `har`.
pub fn evaluate(
    records: &[EvalRecord],
    ks: &[usize],
    oracle: &SidOracle,
    users: &[UserProfile],
) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    for &k in ks {
        m.insert(format!("hr@{k}"), hit_rate_at_k(records, k)?);
        m.insert(format!("hr_any@{k}"), hit_rate_any_at_k(records, k)?);
        m.insert(format!("ndcg@{k}"), ndcg_at_k(records, k)?);
        m.insert(format!("reward@{k}"), reward_at_k(records, k, oracle, users)?);
    }
    m.insert("har".into(), hallucination_rate(records)?);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(rank: usize, sid: [u32; 3], valid: bool) -> Prediction {
        let s = SemanticId::new(sid);
        Prediction {
            rank,
            text: s.to_string(),
            sid: Some(s),
            log_prob: -(rank as f64),
            valid,
        }
    }

    fn record(preds: Vec<Prediction>, targets: Vec<[u32; 3]>) -> EvalRecord {
        EvalRecord {
            user_id: 0,
            predictions: preds,
            targets: targets.into_iter().map(SemanticId::new).collect(),
        }
    }

    #[test]
    fn closed_form_values() {
        let r = vec![record(
            vec![pred(1, [0, 0, 1], true), pred(2, [0, 0, 0], true)],
            vec![[0, 0, 0], [0, 0, 1]],
        )];
        assert_eq!(hit_rate_at_k(&r, 1).unwrap(), 0.0);
        assert_eq!(hit_rate_at_k(&r, 2).unwrap(), 1.0);
        assert_eq!(hit_rate_any_at_k(&r, 1).unwrap(), 1.0);
        assert!((ndcg_at_k(&r, 2).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!(matches!(hit_rate_at_k(&[], 1), Err(GenRecError::EmptyEval)));
    }

    #[test]
    fn hallucination_counts_every_rank() {
        let mut preds: Vec<_> = (1..=10).map(|i| pred(i, [i as u32, 0, 0], true)).collect();
        preds[3].valid = false;
        assert_eq!(hallucination_rate(&[record(preds, vec![[1, 0, 0]])]).unwrap(), 0.1);
    }
}

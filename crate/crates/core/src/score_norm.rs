//! Adaptive symmetric score normalization (AS-Norm). Each trial score is
//! shifted and scaled twice — once against the enroll side's cohort score
//! distribution, once against the test side's — and the two normalized
//! values are averaged:
//!
//! ```text
//! s_norm = 1/2 * [ (s - mu_e)/sigma_e + (s - mu_t)/sigma_t ]
//! ```
//!
//! The mu/sigma statistics come from the top-X most positive cohort scores of
//! the utterance in question ("adaptive" selection). A cohort member with the
//! same utterance id as the trial side being normalized is excluded from that
//! side's cohort.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::embedding::EmbeddingSet;
use crate::error::{FsvError, Result};
use crate::trials::TrialScore;

/// Desk-scale default for the adaptive cohort size. Systems at full corpus
/// scale typically run with a few hundred.
pub const DEFAULT_TOP_X: usize = 10;

/// Returns the `top_x` largest scores in descending order. Ties keep input
/// order. `top_x` larger than the cohort clamps with a warning.
pub fn select_top_cohort(scores: &[f64], top_x: usize) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(FsvError::InsufficientData(format!(
            "cohort has {} scores; need at least 2",
            scores.len()
        )));
    }
    if top_x < 2 {
        return Err(FsvError::config(format!(
            "top_x must be at least 2 so sigma is defined, got {top_x}"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(FsvError::NonFinite(format!("cohort score {bad}")));
    }
    let take = if top_x > scores.len() {
        log::warn!(
            "top_x {top_x} exceeds cohort size {}; clamping",
            scores.len()
        );
        scores.len()
    } else {
        top_x
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort: equal scores stay in input order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    Ok(order.into_iter().take(take).map(|i| scores[i]).collect())
}

/// Top-X cohort score statistics for one utterance.
#[derive(Debug, Clone)]
pub struct CohortScores {
    selected: Vec<f64>,
    mean: f64,
    std: f64,
}

impl CohortScores {
    /// Selects the top-X subset of `scores` and records its mean and
    /// population standard deviation.
    pub fn from_scores(scores: &[f64], top_x: usize) -> Result<Self> {
        let selected = select_top_cohort(scores, top_x)?;
        let n = selected.len() as f64;
        let mean = selected.iter().sum::<f64>() / n;
        let var = selected.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            selected,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn selected(&self) -> &[f64] {
        &self.selected
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// Applies the AS-Norm formula to one raw score.
pub fn as_norm(raw: f64, enroll: &CohortScores, test: &CohortScores) -> Result<f64> {
    if enroll.std <= 0.0 {
        return Err(FsvError::DegenerateCohort(
            "enroll cohort scores are all equal (sigma = 0)".into(),
        ));
    }
    if test.std <= 0.0 {
        return Err(FsvError::DegenerateCohort(
            "test cohort scores are all equal (sigma = 0)".into(),
        ));
    }
    Ok(0.5 * ((raw - enroll.mean) / enroll.std + (raw - test.mean) / test.std))
}

/// Scores every trial utterance against the cohort (minus any member with
/// the same id) and keeps the top-X statistics. Computed once per distinct
/// utterance.
pub fn compute_cohort_stats<F>(
    trials: &[TrialScore],
    embeddings: &EmbeddingSet,
    cohort: &EmbeddingSet,
    scorer: &F,
    top_x: usize,
) -> Result<HashMap<String, CohortScores>>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let mut utterances: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in trials {
        for id in [t.enroll.as_str(), t.test.as_str()] {
            if seen.insert(id) {
                utterances.push(id);
            }
        }
    }
    let stats: Vec<(String, CohortScores)> = utterances
        .par_iter()
        .map(|&id| {
            let emb = embeddings.get(id).ok_or_else(|| {
                FsvError::TrialMismatch(format!("utterance {id} is not in the embedding set"))
            })?;
            let mut scores = Vec::with_capacity(cohort.len());
            for (cid, cemb) in cohort.iter() {
                if cid == id {
                    continue;
                }
                scores.push(scorer(emb, cemb)?);
            }
            if scores.len() < 2 {
                return Err(FsvError::InsufficientData(format!(
                    "cohort for utterance {id} has {} members after self-exclusion",
                    scores.len()
                )));
            }
            Ok((id.to_string(), CohortScores::from_scores(&scores, top_x)?))
        })
        .collect::<Result<_>>()?;
    Ok(stats.into_iter().collect())
}

/// Normalizes a score list against precomputed per-utterance cohort stats.
pub fn normalize_with_stats(
    trials: &[TrialScore],
    stats: &HashMap<String, CohortScores>,
) -> Result<Vec<TrialScore>> {
    trials
        .iter()
        .map(|t| {
            let enroll = stats.get(&t.enroll).ok_or_else(|| {
                FsvError::MissingCohort(format!("no cohort scores for utterance {}", t.enroll))
            })?;
            let test = stats.get(&t.test).ok_or_else(|| {
                FsvError::MissingCohort(format!("no cohort scores for utterance {}", t.test))
            })?;
            Ok(TrialScore::new(
                t.enroll.clone(),
                t.test.clone(),
                as_norm(t.score, enroll, test)?,
            ))
        })
        .collect()
}

/// Full AS-Norm pass: build cohort statistics for every utterance appearing
/// in `trials`, then normalize each score. The scorer must be the same one
/// that produced the raw trial scores.
pub fn normalize_trial_set<F>(
    trials: &[TrialScore],
    embeddings: &EmbeddingSet,
    cohort: &EmbeddingSet,
    scorer: &F,
    top_x: usize,
) -> Result<Vec<TrialScore>>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let stats = compute_cohort_stats(trials, embeddings, cohort, scorer, top_x)?;
    normalize_with_stats(trials, &stats)
}

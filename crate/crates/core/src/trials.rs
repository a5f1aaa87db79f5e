//! Shared trial-list and score-set types used by scoring, normalization,
//! calibration, and evaluation.

use std::collections::HashMap;

use crate::error::{FsvError, Result};

/// Ground-truth label of one verification trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Impostor,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "tgt",
            TrialLabel::Impostor => "imp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tgt" => Ok(TrialLabel::Target),
            "imp" => Ok(TrialLabel::Impostor),
            other => Err(FsvError::Format(format!(
                "unknown trial label {other:?} (expected tgt or imp)"
            ))),
        }
    }
}

/// One enroll/test pair, optionally labeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: Option<TrialLabel>,
}

/// An ordered list of unique enroll/test pairs.
#[derive(Debug, Clone)]
pub struct TrialList {
    trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, trial) in trials.iter().enumerate() {
            if trial.enroll.is_empty() || trial.test.is_empty() {
                return Err(FsvError::Format(format!(
                    "trial {i} has an empty utterance id"
                )));
            }
            if let Some(prev) = seen.insert((trial.enroll.clone(), trial.test.clone()), i) {
                return Err(FsvError::Format(format!(
                    "duplicate trial pair {} {} (lines {prev} and {i})",
                    trial.enroll, trial.test
                )));
            }
        }
        Ok(Self { trials })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }
}

/// One scored trial, as carried in score files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

impl TrialScore {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>, score: f64) -> Self {
        Self {
            enroll: enroll.into(),
            test: test.into(),
            score,
        }
    }
}

/// Scores joined with target/impostor labels, aligned index-by-index.
#[derive(Debug, Clone)]
pub struct LabeledScoreSet {
    scores: Vec<f64>,
    labels: Vec<TrialLabel>,
}

impl LabeledScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<TrialLabel>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(FsvError::DimMismatch(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(FsvError::NonFinite(format!("trial score {bad}")));
        }
        Ok(Self { scores, labels })
    }

    /// Joins a score list against a fully labeled trial key. Every key trial
    /// must be scored exactly once; scored pairs absent from the key are
    /// ignored.
    pub fn join(scores: &[TrialScore], key: &TrialList) -> Result<Self> {
        let mut by_pair: HashMap<(&str, &str), f64> = HashMap::new();
        for s in scores {
            if by_pair
                .insert((s.enroll.as_str(), s.test.as_str()), s.score)
                .is_some()
            {
                return Err(FsvError::TrialMismatch(format!(
                    "trial {} {} scored more than once",
                    s.enroll, s.test
                )));
            }
        }
        let mut out_scores = Vec::with_capacity(key.len());
        let mut out_labels = Vec::with_capacity(key.len());
        for trial in key.iter() {
            let label = trial.label.ok_or_else(|| {
                FsvError::TrialMismatch(format!(
                    "trial {} {} has no tgt/imp label in the key",
                    trial.enroll, trial.test
                ))
            })?;
            let score = by_pair
                .get(&(trial.enroll.as_str(), trial.test.as_str()))
                .copied()
                .ok_or_else(|| {
                    FsvError::TrialMismatch(format!(
                        "trial {} {} appears in the key but was never scored",
                        trial.enroll, trial.test
                    ))
                })?;
            out_scores.push(score);
            out_labels.push(label);
        }
        Self::new(out_scores, out_labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[TrialLabel] {
        &self.labels
    }

    pub fn target_scores(&self) -> Vec<f64> {
        self.filtered(TrialLabel::Target)
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.filtered(TrialLabel::Impostor)
    }

    fn filtered(&self, want: TrialLabel) -> Vec<f64> {
        self.scores
            .iter()
            .zip(self.labels.iter())
            .filter(|(_, l)| **l == want)
            .map(|(s, _)| *s)
            .collect()
    }

    /// Errors unless at least one target and one impostor trial are present.
    pub fn require_both_classes(&self) -> Result<()> {
        let targets = self.labels.iter().filter(|l| **l == TrialLabel::Target).count();
        if targets == 0 {
            return Err(FsvError::MissingClass("no target trials".into()));
        }
        if targets == self.labels.len() {
            return Err(FsvError::MissingClass("no impostor trials".into()));
        }
        Ok(())
    }

    /// Applies a score transform while keeping labels aligned.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.scores.iter().map(|s| f(*s)).collect(), self.labels.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(e: &str, t: &str, label: Option<TrialLabel>) -> Trial {
        Trial {
            enroll: e.into(),
            test: t.into(),
            label,
        }
    }

    #[test]
    fn trial_list_rejects_duplicates_and_empty_ids() {
        let dup = vec![
            trial("a", "b", None),
            trial("c", "d", None),
            trial("a", "b", None),
        ];
        let err = TrialList::new(dup).unwrap_err();
        assert!(err.to_string().contains("a b"), "{err}");
        assert!(TrialList::new(vec![trial("", "x", None)]).is_err());
        // Same enroll with different tests is fine.
        assert!(TrialList::new(vec![trial("a", "b", None), trial("a", "c", None)]).is_ok());
    }

    #[test]
    fn join_aligns_scores_with_key_order() {
        let key = TrialList::new(vec![
            trial("e1", "t1", Some(TrialLabel::Target)),
            trial("e1", "t2", Some(TrialLabel::Impostor)),
            trial("e2", "t1", Some(TrialLabel::Impostor)),
        ])
        .unwrap();
        // Scores arrive in a different order, with one extra pair.
        let scores = vec![
            TrialScore::new("e2", "t1", 0.3),
            TrialScore::new("e1", "t1", 2.0),
            TrialScore::new("e9", "t9", 9.0),
            TrialScore::new("e1", "t2", -1.0),
        ];
        let joined = LabeledScoreSet::join(&scores, &key).unwrap();
        assert_eq!(joined.scores(), &[2.0, -1.0, 0.3]);
        assert_eq!(joined.target_scores(), vec![2.0]);
        assert_eq!(joined.impostor_scores(), vec![-1.0, 0.3]);
    }

    #[test]
    fn join_errors_name_the_offending_trial() {
        let key = TrialList::new(vec![
            trial("e1", "t1", Some(TrialLabel::Target)),
            trial("e1", "t2", Some(TrialLabel::Impostor)),
        ])
        .unwrap();
        let missing = vec![TrialScore::new("e1", "t1", 1.0)];
        let err = LabeledScoreSet::join(&missing, &key).unwrap_err();
        assert!(err.to_string().contains("e1 t2"), "{err}");

        let dup = vec![
            TrialScore::new("e1", "t1", 1.0),
            TrialScore::new("e1", "t1", 2.0),
            TrialScore::new("e1", "t2", 0.0),
        ];
        let err = LabeledScoreSet::join(&dup, &key).unwrap_err();
        assert!(err.to_string().contains("more than once"), "{err}");

        let unlabeled = TrialList::new(vec![trial("e1", "t1", None)]).unwrap();
        assert!(matches!(
            LabeledScoreSet::join(&[TrialScore::new("e1", "t1", 1.0)], &unlabeled).unwrap_err(),
            FsvError::TrialMismatch(_)
        ));
    }

    #[test]
    fn class_presence_checks() {
        let both = LabeledScoreSet::new(
            vec![1.0, 0.0],
            vec![TrialLabel::Target, TrialLabel::Impostor],
        )
        .unwrap();
        assert!(both.require_both_classes().is_ok());
        let only_tgt =
            LabeledScoreSet::new(vec![1.0], vec![TrialLabel::Target]).unwrap();
        assert!(matches!(
            only_tgt.require_both_classes().unwrap_err(),
            FsvError::MissingClass(_)
        ));
        assert!(LabeledScoreSet::new(vec![f64::NAN], vec![TrialLabel::Target]).is_err());
        assert!(LabeledScoreSet::new(vec![1.0], vec![]).is_err());
    }
}

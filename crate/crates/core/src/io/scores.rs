//! Plain-text score files and trial keys.
//!
//! A score file has one trial per line: `enroll-id test-id score`. A trial
//! key has the same shape with a label instead of a score: `enroll-id
//! test-id tgt|imp`. Fields are separated by whitespace, which is why ids
//! containing whitespace are rejected at write time. Blank lines and lines
//! starting with `#` are ignored on read.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{FsvError, Result};
use crate::trials::{Trial, TrialLabel, TrialList, TrialScore};

pub fn write_scores(path: &Path, scores: &[TrialScore]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scores {
        check_id(&s.enroll)?;
        check_id(&s.test)?;
        writeln!(out, "{} {} {}", s.enroll, s.test, s.score)?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<TrialScore>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_scores(file).map_err(|e| FsvError::Format(format!("{}: {e}", path.display())))
}

pub fn parse_scores<R: BufRead>(input: R) -> Result<Vec<TrialScore>> {
    let mut scores = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let Some(fields) = split_line(&line) else {
            continue;
        };
        let [enroll, test, value] = fields
            .try_into()
            .map_err(|_| line_error(idx, "expected `enroll test score`"))?;
        let score: f64 = value
            .parse()
            .map_err(|_| line_error(idx, &format!("bad score value `{value}`")))?;
        if !score.is_finite() {
            return Err(line_error(idx, &format!("non-finite score `{value}`")));
        }
        scores.push(TrialScore::new(enroll, test, score));
    }
    Ok(scores)
}

pub fn write_trial_key(path: &Path, trials: &TrialList) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trials.trials() {
        check_id(&t.enroll)?;
        check_id(&t.test)?;
        let label = t
            .label
            .ok_or_else(|| FsvError::config(format!("trial {} {} has no label", t.enroll, t.test)))?;
        writeln!(out, "{} {} {}", t.enroll, t.test, label.as_str())?;
    }
    Ok(())
}

pub fn read_trial_key(path: &Path) -> Result<TrialList> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_trial_key(file).map_err(|e| FsvError::Format(format!("{}: {e}", path.display())))
}

pub fn parse_trial_key<R: BufRead>(input: R) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let Some(fields) = split_line(&line) else {
            continue;
        };
        let [enroll, test, label] = fields
            .try_into()
            .map_err(|_| line_error(idx, "expected `enroll test tgt|imp`"))?;
        let label = TrialLabel::parse(&label)
            .map_err(|_| line_error(idx, &format!("bad label `{label}` (want tgt or imp)")))?;
        trials.push(Trial {
            enroll,
            test,
            label: Some(label),
        });
    }
    TrialList::new(trials)
}

fn split_line(line: &str) -> Option<Vec<String>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return None;
    }
    Some(trimmed.split_whitespace().map(str::to_string).collect())
}

fn line_error(idx: usize, message: &str) -> FsvError {
    FsvError::Format(format!("line {}: {message}", idx + 1))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(FsvError::config(format!(
            "id `{id}` must be non-empty and contain no whitespace"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_roundtrip_with_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        let scores = vec![
            TrialScore::new("spk1", "utt-a", 1.0 / 3.0),
            TrialScore::new("spk1", "utt-b", -2.718281828459045),
            TrialScore::new("spk2", "utt-a", 1e-300),
        ];
        write_scores(&path, &scores).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in scores.iter().zip(&back) {
            assert_eq!(a.enroll, b.enroll);
            assert_eq!(a.test, b.test);
            // Display for f64 is shortest-roundtrip, so equality is exact.
            assert_eq!(a.score, b.score);
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# header\n\nspk1 utt-a 0.5\n   \nspk2 utt-b -1.25\n";
        let scores = parse_scores(text.as_bytes()).unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[1].score, -1.25);
    }

    #[test]
    fn malformed_score_lines_name_the_line() {
        let err = parse_scores("spk1 utt-a 0.5\nspk2 utt-b\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_scores("spk1 utt-a pretzel\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(parse_scores("spk1 utt-a inf\n".as_bytes()).is_err());
    }

    #[test]
    fn trial_key_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.txt");
        let trials = TrialList::new(vec![
            Trial {
                enroll: "spk1".into(),
                test: "utt-a".into(),
                label: Some(TrialLabel::Target),
            },
            Trial {
                enroll: "spk1".into(),
                test: "utt-b".into(),
                label: Some(TrialLabel::Impostor),
            },
        ])
        .unwrap();
        write_trial_key(&path, &trials).unwrap();
        let back = read_trial_key(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.trials()[0].label, Some(TrialLabel::Target));
        assert_eq!(back.trials()[1].label, Some(TrialLabel::Impostor));
    }

    #[test]
    fn bad_labels_and_whitespace_ids_rejected() {
        let err = parse_trial_key("spk1 utt-a maybe\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("maybe"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let scores = vec![TrialScore::new("spk 1", "utt-a", 0.0)];
        assert!(write_scores(&path, &scores).is_err());
    }

    #[test]
    fn duplicate_trials_in_key_rejected() {
        let text = "spk1 utt-a tgt\nspk1 utt-a imp\n";
        let err = parse_trial_key(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("spk1"), "{err}");
    }
}

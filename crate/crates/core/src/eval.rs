//! Scoring of model answer files against a holdout benchmark.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{slice_key, HoldoutItem};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("question {0} is answered more than once")]
    DuplicateAnswer(String),
    #[error("answer for unknown question {0}")]
    UnknownQuestionId(String),
    #[error("answer file line {line}: {reason}")]
    BadAnswerFile { line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRow {
    pub question_id: String,
    pub raw_text: String,
}

/// Reads a JSON-lines answer file; blank lines are skipped.
pub fn read_answers(path: &Path) -> Result<Vec<AnswerRow>, EvalError> {
    parse_answers(&std::fs::read_to_string(path)?)
}

pub fn parse_answers(text: &str) -> Result<Vec<AnswerRow>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::BadAnswerFile { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

const LABELS: [char; 4] = ['A', 'B', 'C', 'D'];

fn label(c: char) -> Option<String> {
    let c = c.to_ascii_uppercase();
    LABELS.contains(&c).then(|| c.to_string())
}

/// Extracts one option label from free text. Accepts a bare letter,
/// "(A)", "A.", "A)" or "A:" at the start, optionally after "The answer
/// is". Anything else is unparseable.
pub fn parse_answer(raw: &str) -> Option<String> {
    let mut s = raw.trim().to_ascii_lowercase();
    for prefix in ["the correct answer is", "the answer is", "answer:", "answer is"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim_start_matches([' ', ':']).to_string();
            break;
        }
    }
    let s = s.trim();
    let bare = s.trim_end_matches('.').trim();
    let bare = bare.strip_prefix('(').and_then(|b| b.strip_suffix(')')).unwrap_or(bare).trim();
    let mut chars = bare.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return label(c);
    }
    let mut chars = s.chars();
    match (chars.next(), chars.next(), chars.next()) {
        (Some('('), Some(c), Some(')')) => label(c),
        (Some(c), Some('.' | ')' | ':'), _) => label(c),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stratum {
    pub total: usize,
    pub correct: usize,
}

impl Stratum {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Missing plus unparseable.
    pub unanswered: usize,
    pub missing: usize,
    pub unparseable: usize,
    pub per_category: BTreeMap<String, Stratum>,
    /// directional / distance / both, and "entity" for non-relation items.
    pub per_slice: BTreeMap<String, Stratum>,
    /// "ge3" and "lt3" entity-count buckets.
    pub per_entity_bucket: BTreeMap<String, Stratum>,
}

pub fn entity_bucket(entity_count: usize) -> &'static str {
    if entity_count >= 3 {
        "ge3"
    } else {
        "lt3"
    }
}

/// Missing and unparseable answers count as wrong.
pub fn score(answers: &[AnswerRow], holdout: &[HoldoutItem]) -> Result<EvalReport, EvalError> {
    let known: BTreeSet<&str> = holdout.iter().map(|h| h.id.as_str()).collect();
    let mut given: BTreeMap<&str, &str> = BTreeMap::new();
    for a in answers {
        if !known.contains(a.question_id.as_str()) {
            return Err(EvalError::UnknownQuestionId(a.question_id.clone()));
        }
        if given.insert(&a.question_id, &a.raw_text).is_some() {
            return Err(EvalError::DuplicateAnswer(a.question_id.clone()));
        }
    }
    let mut overall = Stratum::default();
    let (mut missing, mut unparseable) = (0, 0);
    let mut per_category: BTreeMap<String, Stratum> = BTreeMap::new();
    let mut per_slice: BTreeMap<String, Stratum> = BTreeMap::new();
    let mut per_entity_bucket: BTreeMap<String, Stratum> = BTreeMap::new();
    for h in holdout {
        let ok = match given.get(h.id.as_str()) {
            None => {
                missing += 1;
                false
            }
            Some(raw) => match parse_answer(raw) {
                None => {
                    unparseable += 1;
                    false
                }
                Some(l) => l == h.answer_key,
            },
        };
        overall.add(ok);
        per_category.entry(h.category.key().into()).or_default().add(ok);
        per_slice.entry(slice_key(h.slice).into()).or_default().add(ok);
        per_entity_bucket.entry(entity_bucket(h.entity_count).into()).or_default().add(ok);
    }
    Ok(EvalReport {
        total: overall.total,
        correct: overall.correct,
        accuracy: overall.accuracy(),
        unanswered: missing + unparseable,
        missing,
        unparseable,
        per_category,
        per_slice,
        per_entity_bucket,
    })
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:>6} {:>7} {:>8}", "stratum", "total", "correct", "accuracy");
        let mut row = |name: &str, s: Stratum| {
            let _ = writeln!(out, "{name:<22} {:>6} {:>7} {:>8.3}", s.total, s.correct, s.accuracy());
        };
        row("overall", Stratum { total: self.total, correct: self.correct });
        for (group, map) in
            [("cat", &self.per_category), ("slice", &self.per_slice), ("entities", &self.per_entity_bucket)]
        {
            for (k, s) in map {
                row(&format!("{group}:{k}"), *s);
            }
        }
        let _ = writeln!(out, "unanswered {} (missing {}, unparseable {})", self.unanswered, self.missing, self.unparseable);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::QaCategory;
    use crate::relation::RelationClass;
    use rand::Rng;

    #[test]
    fn answer_parsing() {
        for (raw, want) in [
            ("B", Some("B")),
            ("b", Some("B")),
            ("The answer is (c).", Some("C")),
            ("(A)", Some("A")),
            ("A. the red chair", Some("A")),
            ("D) far from", Some("D")),
            ("answer: d", Some("D")),
            ("A or B", None),
            ("E", None),
            ("", None),
            ("a chair", None),
            ("I think it is B", None),
        ] {
            assert_eq!(parse_answer(raw).as_deref(), want, "{raw:?}");
        }
    }

    fn holdout(n: usize) -> Vec<HoldoutItem> {
        let slices = [None, Some(RelationClass::Directional), Some(RelationClass::Distance), Some(RelationClass::Both)];
        (0..n)
            .map(|i| {
                let slice = slices[i % 4];
                HoldoutItem {
                    id: format!("q{i:04}"),
                    instance_id: format!("inst-{}", i / 5),
                    image: format!("images/x/{}.png", i / 5),
                    question: "q".into(),
                    options: ["A", "B", "C", "D"].iter().map(|l| (l.to_string(), format!("opt {l}"))).collect(),
                    answer_key: ["A", "B", "C", "D"][(i * 7 + 3) % 4].to_string(),
                    category: slice.map_or(QaCategory::EntityCount, QaCategory::for_relation),
                    slice,
                    entity_count: 2 + i % 4,
                }
            })
            .collect()
    }

    fn rows(h: &[HoldoutItem], mut f: impl FnMut(&HoldoutItem) -> String) -> Vec<AnswerRow> {
        h.iter().map(|x| AnswerRow { question_id: x.id.clone(), raw_text: f(x) }).collect()
    }

    #[test]
    fn oracle_and_unparseable() {
        let h = holdout(566);
        let r = score(&rows(&h, |x| x.answer_key.clone()), &h).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.unanswered, 0);
        let r = score(&rows(&h, |_| "no idea".into()), &h).unwrap();
        assert_eq!((r.accuracy, r.unanswered, r.unparseable), (0.0, 566, 566));
        let r = score(&[], &h).unwrap();
        assert_eq!((r.missing, r.correct), (566, 0));
    }

    #[test]
    fn errors() {
        let h = holdout(4);
        let mut a = rows(&h, |x| x.answer_key.clone());
        a.push(a[0].clone());
        assert!(matches!(score(&a, &h), Err(EvalError::DuplicateAnswer(_))));
        let stray = vec![AnswerRow { question_id: "nope".into(), raw_text: "A".into() }];
        assert!(matches!(score(&stray, &h), Err(EvalError::UnknownQuestionId(_))));
    }

    #[test]
    fn strata_recombine_and_order_is_irrelevant() {
        let h = holdout(566);
        let mut rng = crate::seed::rng(4);
        let mut a = rows(&h, |_| ["A", "B", "C", "D", "?"][rng.random_range(0..5)].to_string());
        let r = score(&a, &h).unwrap();
        for map in [&r.per_category, &r.per_slice, &r.per_entity_bucket] {
            assert_eq!(map.values().map(|s| s.total).sum::<usize>(), r.total);
            assert_eq!(map.values().map(|s| s.correct).sum::<usize>(), r.correct);
        }
        a.reverse();
        assert_eq!(score(&a, &h).unwrap(), r);
        assert!(r.table().contains("slice:directional"));
    }

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"question_id\": \"q1\", \"raw_text\": \"B\"}\n\n{\"question_id\": \"q2\", \"raw_text\": \"(c)\"}\n";
        let rows = parse_answers(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(matches!(parse_answers("{oops"), Err(EvalError::BadAnswerFile { line: 1, .. })));
    }
}

//! Question surface forms shared by the QA generator and the image-only
//! answer oracle. Rendering and parsing live side by side so they cannot
//! drift apart.

use serde::{Deserialize, Serialize};

use crate::relation::{canonicalize, RelationSpec};
use crate::skg::strip_article;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Question {
    /// "Is there a blue balloon in the image?"
    Exists { phrase: String },
    /// "How many balloons are in the image?"
    Count { plural: String },
    /// "What color is the chair?"
    Color { label: String },
    /// "What is the spatial relation of the cup to the plate?"
    RelationOf { subject: String, object: String },
    /// "Which object is to the left of the plate?"
    WhichObject { relation: String, object: String },
    /// "Is the cup to the left of the plate?"
    Verify { subject: String, relation: String, object: String },
}

/// Relation phrase as it reads inside a question ("behind and far from").
pub fn relation_words(rel: &RelationSpec) -> String {
    rel.canonical_phrase().replace(", ", " and ")
}

pub fn with_article(phrase: &str) -> String {
    let article = match phrase.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("{article} {phrase}")
}

const IRREGULAR: [(&str, &str); 10] = [
    ("person", "people"),
    ("mouse", "mice"),
    ("child", "children"),
    ("knife", "knives"),
    ("shelf", "shelves"),
    ("leaf", "leaves"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("goose", "geese"),
    ("foot", "feet"),
];

/// English plural of a noun phrase, inflecting its last word.
pub fn pluralize(noun: &str) -> String {
    let noun = noun.trim();
    let (head, last) = match noun.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), noun),
    };
    if let Some((_, p)) = IRREGULAR.iter().find(|(s, _)| *s == last) {
        return format!("{head}{p}");
    }
    let plural = if ["s", "x", "z", "ch", "sh"].iter().any(|s| last.ends_with(s)) {
        format!("{last}es")
    } else if last.len() > 1
        && last.ends_with('y')
        && !last[..last.len() - 1].ends_with(['a', 'e', 'i', 'o', 'u'])
    {
        format!("{}ies", &last[..last.len() - 1])
    } else {
        format!("{last}s")
    };
    format!("{head}{plural}")
}

impl Question {
    pub fn render(&self) -> String {
        match self {
            Self::Exists { phrase } => format!("Is there {} in the image?", with_article(phrase)),
            Self::Count { plural } => format!("How many {plural} are in the image?"),
            Self::Color { label } => format!("What color is the {label}?"),
            Self::RelationOf { subject, object } => {
                format!("What is the spatial relation of the {subject} to the {object}?")
            }
            Self::WhichObject { relation, object } => {
                format!("Which object is {relation} the {object}?")
            }
            Self::Verify { subject, relation, object } => {
                format!("Is the {subject} {relation} the {object}?")
            }
        }
    }

    /// Parses a rendered question. Subject/object splitting needs the names
    /// of things that may appear, since they can contain spaces.
    pub fn parse(text: &str, names: &[&str]) -> Option<Self> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("Is there ") {
            let phrase = rest.strip_suffix(" in the image?")?;
            return Some(Self::Exists { phrase: strip_article(phrase).to_string() });
        }
        if let Some(rest) = t.strip_prefix("How many ") {
            let plural = rest.strip_suffix(" are in the image?")?;
            return Some(Self::Count { plural: plural.to_string() });
        }
        if let Some(rest) = t.strip_prefix("What color is the ") {
            return Some(Self::Color { label: rest.strip_suffix('?')?.to_string() });
        }
        if let Some(rest) = t.strip_prefix("What is the spatial relation of the ") {
            let body = rest.strip_suffix('?')?;
            for b in names {
                if let Some(a) = body.strip_suffix(&format!(" to the {b}")) {
                    if names.contains(&a) {
                        return Some(Self::RelationOf { subject: a.into(), object: (*b).into() });
                    }
                }
            }
            return None;
        }
        if let Some(rest) = t.strip_prefix("Which object is ") {
            let body = rest.strip_suffix('?')?;
            for b in names {
                if let Some(rel) = body.strip_suffix(&format!(" the {b}")) {
                    if parse_relation(rel).is_some() {
                        return Some(Self::WhichObject { relation: rel.into(), object: (*b).into() });
                    }
                }
            }
            return None;
        }
        if let Some(rest) = t.strip_prefix("Is the ") {
            let body = rest.strip_suffix('?')?;
            for a in names {
                let Some(tail) = body.strip_prefix(&format!("{a} ")) else { continue };
                for b in names {
                    if let Some(rel) = tail.strip_suffix(&format!(" the {b}")) {
                        if parse_relation(rel).is_some() {
                            return Some(Self::Verify {
                                subject: (*a).into(),
                                relation: rel.into(),
                                object: (*b).into(),
                            });
                        }
                    }
                }
            }
        }
        None
    }
}

/// Reads a question-style relation phrase back into a spec.
pub fn parse_relation(words: &str) -> Option<RelationSpec> {
    canonicalize(&words.replace(" and ", ", ")).ok()
}

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use super::{DirectionalRelation, DistanceRelation, RelationError, RelationSpec};

/// The synonym table shipped with the crate.
pub const BUNDLED_SYNONYMS: &str = include_str!("../../data/relations.tsv");

type Parts = (Option<DirectionalRelation>, Option<DistanceRelation>);

/// Maps free-form relation phrases onto canonical parts.
///
/// File format: UTF-8, one mapping per line,
/// `surface phrase<TAB>direction|-<TAB>distance|-`. Blank lines and lines
/// starting with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    entries: BTreeMap<String, Parts>,
}

fn normalize(phrase: &str) -> String {
    phrase
        .trim()
        .trim_end_matches(['.', '!', '?', ';', ':'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl SynonymTable {
    pub fn parse(text: &str) -> Result<Self, RelationError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            if cols.len() != 3 {
                return Err(RelationError::MalformedTable {
                    line,
                    reason: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            let direction = match cols[1].trim() {
                "-" => None,
                k => Some(DirectionalRelation::from_key(k).ok_or_else(|| {
                    RelationError::MalformedTable { line, reason: format!("unknown direction {k:?}") }
                })?),
            };
            let distance = match cols[2].trim() {
                "-" => None,
                k => Some(DistanceRelation::from_key(k).ok_or_else(|| {
                    RelationError::MalformedTable { line, reason: format!("unknown distance {k:?}") }
                })?),
            };
            if direction.is_none() && distance.is_none() {
                return Err(RelationError::MalformedTable {
                    line,
                    reason: "mapping has neither direction nor distance".into(),
                });
            }
            let key = normalize(cols[0]);
            if key.is_empty() || key.contains(',') {
                return Err(RelationError::MalformedTable {
                    line,
                    reason: "surface phrase must be non-empty and comma-free".into(),
                });
            }
            entries.insert(key, (direction, distance));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, RelationError> {
        let text = std::fs::read_to_string(path).map_err(|e| RelationError::MalformedTable {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn bundled() -> &'static SynonymTable {
        static TABLE: OnceLock<SynonymTable> = OnceLock::new();
        TABLE.get_or_init(|| SynonymTable::parse(BUNDLED_SYNONYMS).expect("bundled table parses"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Splits comma-separated compounds, looks every segment up and merges
    /// the parts. Unknown segments are reported, never guessed.
    pub fn canonicalize(&self, phrase: &str) -> Result<RelationSpec, RelationError> {
        if phrase.trim().is_empty() {
            return Err(RelationError::EmptyPhrase);
        }
        let mut direction = None;
        let mut distance = None;
        for segment in phrase.split(',') {
            let key = normalize(segment);
            if key.is_empty() {
                continue;
            }
            let (d, r) = self
                .entries
                .get(&key)
                .ok_or_else(|| RelationError::UnknownRelation(phrase.trim().to_string()))?;
            if let Some(d) = d {
                if direction.is_some_and(|prev| prev != *d) {
                    return Err(RelationError::ConflictingParts(phrase.into(), "direction"));
                }
                direction = Some(*d);
            }
            if let Some(r) = r {
                if distance.is_some_and(|prev| prev != *r) {
                    return Err(RelationError::ConflictingParts(phrase.into(), "distance"));
                }
                distance = Some(*r);
            }
        }
        let mut spec = RelationSpec::new(direction, distance).ok_or(RelationError::EmptyPhrase)?;
        spec.surface_phrase = phrase.trim().to_string();
        Ok(spec)
    }
}

/// Canonicalizes against the bundled table.
pub fn canonicalize(phrase: &str) -> Result<RelationSpec, RelationError> {
    SynonymTable::bundled().canonicalize(phrase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use DirectionalRelation::*;
    use DistanceRelation::*;

    #[test]
    fn direct_synonym() {
        let r = canonicalize("to the left of").unwrap();
        assert_eq!((r.direction, r.distance), (Some(LeftOf), None));
        assert_eq!(r.surface_phrase, "to the left of");
    }

    #[test]
    fn compound_split() {
        let r = canonicalize("behind, far away").unwrap();
        assert_eq!((r.direction, r.distance), (Some(Behind), Some(Far)));
    }

    #[test]
    fn unknown_rejected() {
        assert_eq!(
            canonicalize("orbiting"),
            Err(RelationError::UnknownRelation("orbiting".into()))
        );
        assert_eq!(canonicalize("  "), Err(RelationError::EmptyPhrase));
    }

    #[test]
    fn near_and_far_together_is_conflict() {
        assert!(matches!(
            canonicalize("near, far"),
            Err(RelationError::ConflictingParts(_, "distance"))
        ));
        assert!(matches!(
            canonicalize("left, above"),
            Err(RelationError::ConflictingParts(_, "direction"))
        ));
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let r = canonicalize("  Close   TO ").unwrap();
        assert_eq!(r.distance, Some(Near));
    }

    #[test]
    fn canonical_forms_round_trip() {
        for d in DirectionalRelation::ALL.map(Some).into_iter().chain([None]) {
            for r in DistanceRelation::ALL.map(Some).into_iter().chain([None]) {
                let Some(spec) = RelationSpec::new(d, r) else { continue };
                let back = canonicalize(&spec.surface_phrase).unwrap();
                assert_eq!(back, spec);
            }
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(SynonymTable::parse("left\tleft_of").is_err());
        assert!(SynonymTable::parse("left\tsideways\t-").is_err());
        assert!(SynonymTable::parse("left\t-\t-").is_err());
        let t = SynonymTable::parse("# header\n\nwest of\tleft_of\t-\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.canonicalize("west of").unwrap().direction, Some(LeftOf));
    }
}

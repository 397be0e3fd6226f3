//! Prompt templates with `{name}` placeholders. Defaults are embedded; a
//! directory of same-named `.txt` files overrides them at runtime.
//!
//! Leading `# key: value` lines are metadata (currently `temperature`).

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0}")]
    Unknown(String),
    #[error("template {template} needs a value for {{{name}}}")]
    MissingValue { template: String, name: String },
    #[error("template {0}: unterminated placeholder")]
    Unterminated(String),
    #[error("reading {0}")]
    Io(String),
}

pub const TEMPLATE_NAMES: [&str; 9] = [
    "scenes",
    "objects",
    "subset",
    "enrich",
    "triplets",
    "caption",
    "paraphrase",
    "verify_image",
    "verify_qa",
];

const EMBEDDED: [(&str, &str); 9] = [
    ("scenes", include_str!("../../templates/scenes.txt")),
    ("objects", include_str!("../../templates/objects.txt")),
    ("subset", include_str!("../../templates/subset.txt")),
    ("enrich", include_str!("../../templates/enrich.txt")),
    ("triplets", include_str!("../../templates/triplets.txt")),
    ("caption", include_str!("../../templates/caption.txt")),
    ("paraphrase", include_str!("../../templates/paraphrase.txt")),
    ("verify_image", include_str!("../../templates/verify_image.txt")),
    ("verify_qa", include_str!("../../templates/verify_qa.txt")),
];

#[derive(Debug, Clone, PartialEq)]
struct Template {
    body: String,
    meta: BTreeMap<String, String>,
}

impl Template {
    fn parse(text: &str) -> Self {
        let mut meta = BTreeMap::new();
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = rest.split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            lines.next();
        }
        let body = lines.collect::<Vec<_>>().join("\n");
        Self { body, meta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    templates: BTreeMap<String, Template>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::embedded()
    }
}

impl PromptTemplates {
    pub fn embedded() -> Self {
        Self {
            templates: EMBEDDED.iter().map(|(k, v)| (k.to_string(), Template::parse(v))).collect(),
        }
    }

    /// Embedded defaults overridden by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::embedded();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
                t.templates.insert(name.to_string(), Template::parse(&text));
            }
        }
        Ok(t)
    }

    /// Sampling temperature declared by the template, 1.0 when absent.
    pub fn temperature(&self, name: &str) -> f64 {
        self.templates
            .get(name)
            .and_then(|t| t.meta.get("temperature"))
            .and_then(|v| v.parse().ok())
            .unwrap_or(1.0)
    }

    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let t = self.templates.get(name).ok_or_else(|| TemplateError::Unknown(name.into()))?;
        let mut out = String::with_capacity(t.body.len());
        let mut rest = t.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| TemplateError::Unterminated(name.into()))?;
            let key = &after[..close];
            let value = values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).ok_or_else(|| {
                TemplateError::MissingValue { template: name.into(), name: key.into() }
            })?;
            out.push_str(value);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_templates_render() {
        let t = PromptTemplates::embedded();
        let s = t.render("scenes", &[("count", "12")]).unwrap();
        assert!(s.contains("List 12 distinct"));
        assert!(!s.contains("temperature"));
        assert_eq!(t.temperature("scenes"), 1.0);
        assert_eq!(t.temperature("verify_qa"), 0.0);
        assert!(matches!(
            t.render("scenes", &[]),
            Err(TemplateError::MissingValue { .. })
        ));
        assert!(matches!(t.render("nope", &[]), Err(TemplateError::Unknown(_))));
    }

    #[test]
    fn directory_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("paraphrase.txt"), "# temperature: 0.3\nSay {question} again").unwrap();
        let t = PromptTemplates::with_overrides(dir.path()).unwrap();
        assert_eq!(t.render("paraphrase", &[("question", "hi")]).unwrap(), "Say hi again");
        assert_eq!(t.temperature("paraphrase"), 0.3);
        assert!(t.render("scenes", &[("count", "1")]).is_ok());
    }
}

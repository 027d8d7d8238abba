//! Prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ChatRequest;

/// The placeholder names a template may use.
pub const PLACEHOLDERS: [&str; 4] = ["document", "triplet", "triplets", "query"];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {id} is empty")]
    Empty { id: TemplateId },
    #[error("template {id} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { id: TemplateId, name: String },
    #[error("template {id} needs a value for {{{name}}}")]
    MissingBinding { id: TemplateId, name: String },
    #[error("expected a {expected} template, got {got}")]
    WrongTemplate { expected: TemplateId, got: TemplateId },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    KgExtract,
    Ttr,
    Filter,
    Generate,
    Hyde,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::KgExtract,
        TemplateId::Ttr,
        TemplateId::Filter,
        TemplateId::Generate,
        TemplateId::Hyde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::KgExtract => "kg_extract",
            TemplateId::Ttr => "ttr",
            TemplateId::Filter => "filter",
            TemplateId::Generate => "generate",
            TemplateId::Hyde => "hyde",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    /// The placeholder carrying the main content of a prompt of this kind.
    pub fn primary_placeholder(self) -> &'static str {
        match self {
            TemplateId::KgExtract => "document",
            TemplateId::Ttr | TemplateId::Filter => "triplet",
            TemplateId::Generate => "triplets",
            TemplateId::Hyde => "query",
        }
    }

    fn max_tokens(self) -> u32 {
        match self {
            TemplateId::KgExtract => 1024,
            TemplateId::Ttr => 256,
            TemplateId::Filter => 8,
            TemplateId::Generate | TemplateId::Hyde => 512,
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::KgExtract => include_str!("../templates/kg_extract.txt"),
            TemplateId::Ttr => include_str!("../templates/ttr.txt"),
            TemplateId::Filter => include_str!("../templates/filter.txt"),
            TemplateId::Generate => include_str!("../templates/generate.txt"),
            TemplateId::Hyde => include_str!("../templates/hyde.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One piece of a parsed template.
#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// `{name}` is a placeholder when `name` is a non-empty run of lowercase
/// ASCII letters and underscores; any other brace is literal text.
fn parse(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            if !literal.is_empty() {
                out.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            out.push(Segment::Slot(after[..name_len].to_string()));
            rest = &after[name_len + 1..];
        } else {
            literal.push('{');
            rest = after;
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        out.push(Segment::Literal(literal));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    id: TemplateId,
    text: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TemplateError::Empty { id });
        }
        let segments = parse(&text);
        for seg in &segments {
            if let Segment::Slot(name) = seg {
                if !PLACEHOLDERS.contains(&name.as_str()) {
                    return Err(TemplateError::UnknownPlaceholder {
                        id,
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(Self { id, text, segments })
    }

    pub fn builtin(id: TemplateId) -> Self {
        Self::new(id, id.builtin_text()).expect("builtin templates are valid")
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn expect_id(&self, expected: TemplateId) -> Result<(), TemplateError> {
        if self.id == expected {
            Ok(())
        } else {
            Err(TemplateError::WrongTemplate {
                expected,
                got: self.id,
            })
        }
    }

    /// Substitutes every placeholder in a single pass; values are inserted
    /// verbatim and never re-scanned. Bindings the template does not use are
    /// ignored.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::MissingBinding {
                            id: self.id,
                            name: name.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Renders the template into a deterministic (temperature 0) chat request.
    pub fn request(&self, bindings: &[(&str, &str)]) -> Result<ChatRequest, TemplateError> {
        let user_prompt = self.render(bindings)?;
        Ok(ChatRequest {
            system_prompt: String::new(),
            user_prompt,
            temperature: 0.0,
            max_tokens: self.id.max_tokens(),
            template: Some(self.id),
            bindings: bindings
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect::<BTreeMap<_, _>>(),
        })
    }
}

/// The full set of prompts the pipeline uses.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub kg_extract: PromptTemplate,
    pub ttr: PromptTemplate,
    pub filter: PromptTemplate,
    pub generate: PromptTemplate,
    pub hyde: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            kg_extract: PromptTemplate::builtin(TemplateId::KgExtract),
            ttr: PromptTemplate::builtin(TemplateId::Ttr),
            filter: PromptTemplate::builtin(TemplateId::Filter),
            generate: PromptTemplate::builtin(TemplateId::Generate),
            hyde: PromptTemplate::builtin(TemplateId::Hyde),
        }
    }

    /// Loads `kg_extract.txt`, `ttr.txt`, `filter.txt` and `generate.txt`
    /// from `dir`. `hyde.txt` is optional and falls back to the builtin.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let load = |id: TemplateId| -> Result<PromptTemplate, TemplateError> {
            let path = dir.join(id.file_name());
            if id == TemplateId::Hyde && !path.exists() {
                return Ok(PromptTemplate::builtin(id));
            }
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            PromptTemplate::new(id, text)
        };
        Ok(Self {
            kg_extract: load(TemplateId::KgExtract)?,
            ttr: load(TemplateId::Ttr)?,
            filter: load(TemplateId::Filter)?,
            generate: load(TemplateId::Generate)?,
            hyde: load(TemplateId::Hyde)?,
        })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        match id {
            TemplateId::KgExtract => &self.kg_extract,
            TemplateId::Ttr => &self.ttr,
            TemplateId::Filter => &self.filter,
            TemplateId::Generate => &self.generate,
            TemplateId::Hyde => &self.hyde,
        }
    }

    /// Writes every template to `dir` using the standard file names.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        for id in TemplateId::ALL {
            std::fs::write(dir.as_ref().join(id.file_name()), self.get(id).text())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_use_expected_slots() {
        let set = TemplateSet::builtin();
        assert_eq!(set.kg_extract.placeholders(), ["document"]);
        assert_eq!(set.ttr.placeholders(), ["document", "triplet"]);
        assert_eq!(set.filter.placeholders(), ["query", "triplet"]);
        assert_eq!(set.generate.placeholders(), ["triplets"]);
        assert_eq!(set.hyde.placeholders(), ["query"]);
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let err = PromptTemplate::new(TemplateId::Ttr, "x {context} y").unwrap_err();
        assert!(matches!(err, TemplateError::UnknownPlaceholder { ref name, .. } if name == "context"));
        assert!(PromptTemplate::new(TemplateId::Ttr, "   ").is_err());
    }

    #[test]
    fn literal_braces_pass_through() {
        let t = PromptTemplate::new(TemplateId::Filter, r#"{"a": 1} {Query} {query}{}"#).unwrap();
        assert_eq!(t.placeholders(), ["query"]);
        assert_eq!(t.render(&[("query", "q")]).unwrap(), r#"{"a": 1} {Query} q{}"#);
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = PromptTemplate::new(TemplateId::Filter, "{query}/{triplet}").unwrap();
        let out = t.render(&[("query", "{triplet}"), ("triplet", "T")]).unwrap();
        assert_eq!(out, "{triplet}/T");
    }

    #[test]
    fn missing_binding_is_an_error() {
        let t = PromptTemplate::builtin(TemplateId::Filter);
        assert!(matches!(
            t.render(&[("query", "q")]),
            Err(TemplateError::MissingBinding { .. })
        ));
    }

    #[test]
    fn load_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = TemplateSet::builtin();
        set.ttr = PromptTemplate::new(TemplateId::Ttr, "describe {triplet}").unwrap();
        set.write_dir(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("hyde.txt")).unwrap();
        let loaded = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.ttr.text(), "describe {triplet}");
        assert_eq!(loaded.hyde, PromptTemplate::builtin(TemplateId::Hyde));

        std::fs::remove_file(dir.path().join("filter.txt")).unwrap();
        assert!(matches!(TemplateSet::load_dir(dir.path()), Err(TemplateError::Io { .. })));
    }
}

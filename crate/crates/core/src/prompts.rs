//! Versioned prompt templates.
//!
//! Templates are plain UTF-8 files named `<id>.txt`. Placeholders look like
//! `{name}`; substitution is a single left-to-right pass, so text inserted
//! into one slot is never re-scanned for other placeholders. Braces that do
//! not name a supplied slot are copied through untouched.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const QA_GEN_V1: &str = "qa_gen_v1";
pub const ROLE_V1: &str = "role_v1";
pub const FLOW_V1: &str = "flow_v1";
pub const SUMMARY_V1: &str = "summary_v1";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt template `{id}` lacks placeholder `{{{placeholder}}}`")]
    MissingPlaceholder { id: &'static str, placeholder: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub text: String,
}

impl PromptTemplate {
    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        render(&self.text, slots)
    }
}

/// The four templates the engine needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    pub qa_gen: PromptTemplate,
    pub role: PromptTemplate,
    pub flow: PromptTemplate,
    pub summary: PromptTemplate,
}

const REQUIRED: [(&str, &[&str]); 4] = [
    (QA_GEN_V1, &["image_description"]),
    (ROLE_V1, &["background", "profile", "image_description"]),
    (FLOW_V1, &["q", "a", "reply", "q_next", "options"]),
    (
        SUMMARY_V1,
        &["background", "profile", "chat_history", "family members"],
    ),
];

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    /// Templates compiled into the binary.
    pub fn builtin() -> Self {
        Self {
            qa_gen: PromptTemplate {
                id: QA_GEN_V1,
                text: include_str!("../prompts/qa_gen_v1.txt").to_string(),
            },
            role: PromptTemplate {
                id: ROLE_V1,
                text: include_str!("../prompts/role_v1.txt").to_string(),
            },
            flow: PromptTemplate {
                id: FLOW_V1,
                text: include_str!("../prompts/flow_v1.txt").to_string(),
            },
            summary: PromptTemplate {
                id: SUMMARY_V1,
                text: include_str!("../prompts/summary_v1.txt").to_string(),
            },
        }
    }

    /// Loads `<id>.txt` for every template id from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |id: &'static str| -> Result<PromptTemplate, PromptError> {
            let path = dir.join(format!("{id}.txt"));
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })?;
            Ok(PromptTemplate { id, text })
        };
        let catalog = Self {
            qa_gen: read(QA_GEN_V1)?,
            role: read(ROLE_V1)?,
            flow: read(FLOW_V1)?,
            summary: read(SUMMARY_V1)?,
        };
        catalog.check()?;
        Ok(catalog)
    }

    fn check(&self) -> Result<(), PromptError> {
        for (id, placeholders) in REQUIRED {
            let template = self.by_id(id);
            for placeholder in placeholders {
                if !template.text.contains(&format!("{{{placeholder}}}")) {
                    return Err(PromptError::MissingPlaceholder {
                        id: template.id,
                        placeholder,
                    });
                }
            }
        }
        Ok(())
    }

    fn by_id(&self, id: &str) -> &PromptTemplate {
        match id {
            QA_GEN_V1 => &self.qa_gen,
            ROLE_V1 => &self.role,
            FLOW_V1 => &self.flow,
            _ => &self.summary,
        }
    }
}

/// Single-pass `{name}` substitution.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots
                .iter()
                .find(|(slot, _)| *slot == name)
                .map(|(_, value)| (close, *value))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_has_all_placeholders() {
        PromptCatalog::builtin().check().unwrap();
    }

    #[test]
    fn render_is_single_pass() {
        let out = render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} b Y {z}");
    }

    #[test]
    fn literal_braces_survive() {
        let out = render("Format: {Like= [], Dislike= []} for {who}", &[("who", "me")]);
        assert_eq!(out, "Format: {Like= [], Dislike= []} for me");
    }

    #[test]
    fn load_dir_round_trips_builtin() {
        let dir = tempfile::tempdir().unwrap();
        let builtin = PromptCatalog::builtin();
        for t in [&builtin.qa_gen, &builtin.role, &builtin.flow, &builtin.summary] {
            fs::write(dir.path().join(format!("{}.txt", t.id)), &t.text).unwrap();
        }
        assert_eq!(PromptCatalog::load_dir(dir.path()).unwrap(), builtin);

        fs::write(dir.path().join("flow_v1.txt"), "no slots").unwrap();
        assert!(matches!(
            PromptCatalog::load_dir(dir.path()),
            Err(PromptError::MissingPlaceholder { id: FLOW_V1, .. })
        ));
    }
}

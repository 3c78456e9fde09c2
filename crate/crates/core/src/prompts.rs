//! Prompt templates for the LLM-backed transformers and rerankers.
//!
//! A template file holds a system part and a user part separated by a line
//! reading `<<<USER>>>`. Placeholders are `{name}` and are substituted
//! verbatim; unknown placeholders are left in place.

use std::path::Path;

use crate::error::{Result, ToolshedError};

const USER_MARKER: &str = "<<<USER>>>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

/// A rendered prompt ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Self {
        match text.split_once(USER_MARKER) {
            Some((system, user)) => PromptTemplate {
                system: system.trim_end().to_owned(),
                user: user.trim_start_matches(['\r', '\n']).trim_end().to_owned(),
            },
            None => PromptTemplate { system: String::new(), user: text.trim_end().to_owned() },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ToolshedError::config(format!("cannot read prompt template {}: {e}", path.display()))
        })?;
        Ok(Self::parse(&text))
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Prompt {
        Prompt { system: substitute(&self.system, vars), user: substitute(&self.user, vars) }
    }
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    // single pass so substituted values are never re-expanded
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
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

/// Every template the engine can use. Defaults are compiled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub reverse_hyde: PromptTemplate,
    pub key_topics: PromptTemplate,
    pub rewrite: PromptTemplate,
    pub decomposition: PromptTemplate,
    pub expansion: PromptTemplate,
    pub structure: PromptTemplate,
    pub reranker: PromptTemplate,
    pub decomposed_reranker: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            reverse_hyde: PromptTemplate::parse(include_str!("../prompts/reverse_hyde.txt")),
            key_topics: PromptTemplate::parse(include_str!("../prompts/key_topics.txt")),
            rewrite: PromptTemplate::parse(include_str!("../prompts/rewrite.txt")),
            decomposition: PromptTemplate::parse(include_str!("../prompts/decomposition.txt")),
            expansion: PromptTemplate::parse(include_str!("../prompts/expansion.txt")),
            structure: PromptTemplate::parse(include_str!("../prompts/structure.txt")),
            reranker: PromptTemplate::parse(include_str!("../prompts/reranker.txt")),
            decomposed_reranker: PromptTemplate::parse(include_str!(
                "../prompts/decomposed_reranker.txt"
            )),
        }
    }
}

impl PromptSet {
    pub const NAMES: [&'static str; 8] = [
        "reverse_hyde",
        "key_topics",
        "rewrite",
        "decomposition",
        "expansion",
        "structure",
        "reranker",
        "decomposed_reranker",
    ];

    /// Replace the named template with the contents of `path`.
    pub fn override_from_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let template = PromptTemplate::load(path)?;
        let slot = match name {
            "reverse_hyde" => &mut self.reverse_hyde,
            "key_topics" => &mut self.key_topics,
            "rewrite" => &mut self.rewrite,
            "decomposition" => &mut self.decomposition,
            "expansion" => &mut self.expansion,
            "structure" => &mut self.structure,
            "reranker" => &mut self.reranker,
            "decomposed_reranker" => &mut self.decomposed_reranker,
            other => {
                return Err(ToolshedError::config(format!(
                    "unknown prompt template `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = template;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_system_and_user() {
        let t = PromptTemplate::parse("sys line\n<<<USER>>>\nQ: {query}\n");
        assert_eq!(t.system, "sys line");
        assert_eq!(t.user, "Q: {query}");
        let p = t.render(&[("query", "what is npv")]);
        assert_eq!(p.user, "Q: what is npv");
    }

    #[test]
    fn substitution_is_single_pass_and_keeps_unknown_braces() {
        let t = PromptTemplate::parse("{a} {b} {unknown} [{'x'}]");
        let p = t.render(&[("a", "{b}"), ("b", "B")]);
        assert_eq!(p.user, "{b} B {unknown} [{'x'}]");
    }

    #[test]
    fn defaults_carry_their_placeholders() {
        let set = PromptSet::default();
        assert!(set.decomposition.user.contains("{query}"));
        assert!(set.expansion.user.contains("{user_question}"));
        assert!(set.rewrite.user.contains("{chat_history}"));
        assert!(set.reverse_hyde.user.contains("{tool_name}"));
        assert!(set.reverse_hyde.user.contains("{tool_description}"));
        assert!(set.key_topics.user.contains("{example_questions}"));
        assert!(set.decomposed_reranker.system.contains("Start by selecting the top tool from each intent."));
        assert!(!set.decomposition.system.is_empty());
    }

    #[test]
    fn unknown_override_name_is_config_error() {
        let mut set = PromptSet::default();
        let err = set.override_from_file("nope", Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, ToolshedError::Config(_)));
    }
}

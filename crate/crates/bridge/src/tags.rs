//! Key-concept tags pulled from assistant replies, either through the chat
//! endpoint or by matching a fixed lexicon of flow-pattern phrases.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chat::{ChatClient, ChatTurn, Role};
use crate::error::{BridgeError, Result};

/// Phrases recognized offline.
pub const LEXICON: [&str; 10] = [
    "vortex",
    "laminar flow",
    "turbulence",
    "jet stream",
    "circulation",
    "eddy",
    "advection",
    "saddle",
    "spiral",
    "shear",
];

const EXTRACTION_PROMPT: &str = "Extract the flow-related key concepts (flow patterns, structures and phenomena) \
mentioned in the following text. Reply with a JSON array of short lowercase phrases and nothing else. \
Reply with [] if there are none.";

const MAX_TAG_CHARS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagConcept {
    pub name: String,
    /// Index of the chat turn the tag was extracted from.
    pub source_turn: usize,
    /// Phrase sent to the matcher when the tag is clicked.
    pub query_text: String,
}

impl TagConcept {
    pub fn new(name: impl Into<String>, source_turn: usize) -> Self {
        let name = name.into();
        Self { query_text: name.clone(), name, source_turn }
    }

    fn key(&self) -> String {
        normalize_key(&self.name)
    }
}

fn normalize_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Tags unique by case-insensitive name, kept in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    tags: Vec<TagConcept>,
}

impl TagSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tags(&self) -> &[TagConcept] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        let k = normalize_key(name);
        self.tags.iter().any(|t| t.key() == k)
    }

    /// Adds tags whose names are not present yet; returns how many were added.
    pub fn merge(&mut self, new: impl IntoIterator<Item = TagConcept>) -> usize {
        let mut added = 0;
        for t in new {
            if t.key().is_empty() || self.contains(&t.name) {
                continue;
            }
            self.tags.push(t);
            added += 1;
        }
        added
    }

    /// Lowercased names, sorted.
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.tags.iter().map(TagConcept::key).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagMode {
    Llm,
    Lexicon,
}

impl FromStr for TagMode {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(TagMode::Llm),
            "lexicon" => Ok(TagMode::Lexicon),
            other => Err(BridgeError::BadInput(format!("unknown tag mode `{other}`"))),
        }
    }
}

/// `word` is `base` or a regular plural of it.
fn inflects(word: &str, base: &str) -> bool {
    if word == base {
        return true;
    }
    let Some(rest) = word.strip_prefix(base) else {
        return irregular_plural(word, base);
    };
    matches!(rest, "s" | "es") || irregular_plural(word, base)
}

fn irregular_plural(word: &str, base: &str) -> bool {
    if let Some(stem) = base.strip_suffix('y') {
        if word.strip_prefix(stem) == Some("ies") {
            return true;
        }
    }
    if let Some(stem) = base.strip_suffix("ex") {
        if word.strip_prefix(stem) == Some("ices") {
            return true;
        }
    }
    false
}

/// Lexicon phrases found in `text`, in order of first occurrence. Matching is
/// case-insensitive on whole words, longer phrases win over shorter ones at
/// the same position, and the last word of a phrase may carry a plural.
pub fn extract_lexicon(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let mut phrases: Vec<Vec<&str>> = LEXICON.iter().map(|p| p.split(' ').collect()).collect();
    phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
    let mut found: Vec<String> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let hit = phrases.iter().find(|p| {
            let n = p.len();
            i + n <= words.len()
                && p[..n - 1].iter().zip(&words[i..]).all(|(a, b)| a == b)
                && inflects(words[i + n - 1], p[n - 1])
        });
        match hit {
            Some(p) => {
                let name = p.join(" ");
                if !found.contains(&name) {
                    found.push(name);
                }
                i += p.len();
            }
            None => i += 1,
        }
    }
    found
}

/// Pulls a JSON array of strings out of a model reply, tolerating code
/// fences and surrounding prose.
fn parse_tag_reply(reply: &str) -> Result<Vec<String>> {
    let (Some(a), Some(b)) = (reply.find('['), reply.rfind(']')) else {
        return Err(BridgeError::BadResponse(format!("no JSON array in tag reply: {reply:.80}")));
    };
    if b < a {
        return Err(BridgeError::BadResponse("malformed tag array".into()));
    }
    let items: Vec<serde_json::Value> =
        serde_json::from_str(&reply[a..=b]).map_err(|e| BridgeError::BadResponse(format!("tag array: {e}")))?;
    let mut out: Vec<String> = Vec::new();
    for item in items {
        let s = item
            .as_str()
            .ok_or_else(|| BridgeError::BadResponse("tag array holds a non-string".into()))?;
        let name = s.split_whitespace().collect::<Vec<_>>().join(" ");
        if name.is_empty() || name.chars().count() > MAX_TAG_CHARS {
            continue;
        }
        if !out.iter().any(|o| o.eq_ignore_ascii_case(&name)) {
            out.push(name);
        }
    }
    Ok(out)
}

/// Extracts concept tags from an assistant turn. `turn_index` is recorded as
/// each tag's source. Llm mode needs a configured client.
pub fn extract_tags(
    turn: &ChatTurn,
    turn_index: usize,
    mode: TagMode,
    client: Option<&ChatClient>,
) -> Result<Vec<TagConcept>> {
    if turn.role != Role::Assistant {
        return Err(BridgeError::BadInput("tags are extracted from assistant turns".into()));
    }
    let names = match mode {
        TagMode::Lexicon => extract_lexicon(&turn.text),
        TagMode::Llm => {
            let client = client.filter(|c| c.is_configured()).ok_or_else(|| {
                BridgeError::ServiceUnavailable(
                    "llm tag mode needs a chat endpoint; configure one or use lexicon mode".into(),
                )
            })?;
            let reply = client.complete(vec![
                json!({ "role": "system", "content": EXTRACTION_PROMPT }),
                json!({ "role": "user", "content": turn.text }),
            ])?;
            parse_tag_reply(&reply)?
        }
    };
    Ok(names.into_iter().map(|n| TagConcept::new(n, turn_index)).collect())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Split on runs of Unicode whitespace.
    #[default]
    Whitespace,
    /// Alphanumeric runs form words; every other non-space character is its
    /// own token.
    UnicodeWord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub split_rule: SplitRule,
}

/// One tokenized turn of a dialogue.
///
/// Tokens are stored joined by single spaces. No token ever contains
/// whitespace, so the joined form round-trips exactly and costs a single
/// allocation per utterance. The original text is kept only when it differs
/// from the joined tokens, which is the common case for pre-tokenized corpora.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance {
    joined: Box<str>,
    raw: Option<Box<str>>,
    len: u32,
}

impl Utterance {
    /// An utterance with no tokens. Only evaluation uses this, for a model
    /// that produced an empty string.
    pub fn empty() -> Self {
        Utterance {
            joined: "".into(),
            raw: None,
            len: 0,
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + Clone + '_ {
        self.joined.split(' ').filter(|t| !t.is_empty())
    }

    pub fn token_vec(&self) -> Vec<&str> {
        self.tokens().collect()
    }

    /// Tokens joined with single spaces.
    pub fn joined(&self) -> &str {
        &self.joined
    }

    pub fn raw(&self) -> &str {
        self.raw.as_deref().unwrap_or(&self.joined)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Result<Utterance> {
    let mut joined = String::with_capacity(text.len());
    let mut len = 0u32;
    let mut push = |tok: &str| {
        if !joined.is_empty() {
            joined.push(' ');
        }
        if cfg.lowercase {
            joined.extend(tok.chars().flat_map(char::to_lowercase));
        } else {
            joined.push_str(tok);
        }
        len += 1;
    };

    match cfg.split_rule {
        SplitRule::Whitespace => text.split_whitespace().for_each(&mut push),
        SplitRule::UnicodeWord => {
            let mut word_start: Option<usize> = None;
            for (i, c) in text.char_indices() {
                if is_word_char(c) {
                    word_start.get_or_insert(i);
                    continue;
                }
                if let Some(s) = word_start.take() {
                    push(&text[s..i]);
                }
                if !c.is_whitespace() {
                    push(&text[i..i + c.len_utf8()]);
                }
            }
            if let Some(s) = word_start {
                push(&text[s..]);
            }
        }
    }

    if len == 0 {
        return Err(Error::EmptyUtterance);
    }
    let raw = (joined != text).then(|| text.into());
    Ok(Utterance {
        joined: joined.into_boxed_str(),
        raw,
        len,
    })
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

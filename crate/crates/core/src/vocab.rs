//! Closed word-level vocabulary with reserved control tokens.
//!
//! Tokenization is whitespace splitting after ASCII lowercasing; there is no
//! subword fallback, unknown words map to `<unk>`. Control tags such as
//! `<search>` are ordinary single tokens so a generated stream can be parsed
//! by token id alone.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Index into a [`Vocab`].
pub type TokenId = u32;

/// Reserved tokens, in their fixed id order (`PAD` is always id 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Special {
    Pad = 0,
    Unk = 1,
    Eos = 2,
    ThinkOpen = 3,
    ThinkClose = 4,
    SearchOpen = 5,
    SearchClose = 6,
    InfoOpen = 7,
    InfoClose = 8,
    AnswerOpen = 9,
    AnswerClose = 10,
}

impl Special {
    pub const COUNT: usize = 11;

    pub const ALL: [Special; Special::COUNT] = [
        Special::Pad,
        Special::Unk,
        Special::Eos,
        Special::ThinkOpen,
        Special::ThinkClose,
        Special::SearchOpen,
        Special::SearchClose,
        Special::InfoOpen,
        Special::InfoClose,
        Special::AnswerOpen,
        Special::AnswerClose,
    ];

    /// Literal surface form of the special token.
    pub fn surface(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Unk => "<unk>",
            Special::Eos => "<eos>",
            Special::ThinkOpen => "<think>",
            Special::ThinkClose => "</think>",
            Special::SearchOpen => "<search>",
            Special::SearchClose => "</search>",
            Special::InfoOpen => "<information>",
            Special::InfoClose => "</information>",
            Special::AnswerOpen => "<answer>",
            Special::AnswerClose => "</answer>",
        }
    }

    #[inline]
    pub fn id(self) -> TokenId {
        self as TokenId
    }
}

/// Immutable token table: the specials in fixed order, then the sorted word
/// list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from arbitrary words. Words are lowercased and
    /// deduplicated, special surfaces are stripped (they are always present
    /// up front), and the remainder is sorted so construction order never
    /// changes token ids.
    pub fn from_words<I, T>(words: I) -> Vocab
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut list: Vec<String> = Vec::with_capacity(Special::COUNT + 64);
        for s in Special::ALL {
            list.push(s.surface().to_string());
        }
        let mut extra: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_ascii_lowercase())
            .filter(|w| !w.is_empty() && !list.iter().any(|t| t == w))
            .collect();
        extra.sort();
        extra.dedup();
        list.extend(extra);
        Vocab::from_token_list(list).expect("specials laid out by constructor")
    }

    /// Rebuilds a vocabulary from an explicit token list (checkpoint load).
    /// The list must start with the specials in their fixed order and contain
    /// no duplicates.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < Special::COUNT {
            return Err(Error::Data("token list shorter than the reserved prefix".into()));
        }
        for s in Special::ALL {
            if tokens[s.id() as usize] != s.surface() {
                return Err(Error::Data(format!(
                    "token {} must be {:?}, found {:?}",
                    s.id(),
                    s.surface(),
                    tokens[s.id() as usize]
                )));
            }
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, lookup })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // the reserved prefix is always present
    }

    /// Id for a word, if present (exact match after lowercasing).
    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.lookup.get(&word.to_ascii_lowercase()).copied()
    }

    /// Surface string for a token id.
    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    /// All token surfaces in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase + whitespace-split; unknown words become `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(Special::Unk.id()))
            .collect()
    }

    /// Joins surfaces with single spaces.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(id));
        }
        out
    }
}

impl Serialize for Vocab {
    fn serialize<Ser: Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.tokens.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Vocab, D::Error> {
        let tokens = Vec::<String>::deserialize(de)?;
        Vocab::from_token_list(tokens).map_err(serde::de::Error::custom)
    }
}

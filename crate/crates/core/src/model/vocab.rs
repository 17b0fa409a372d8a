use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Dense token ids; `<pad>` is 0 and `<unk>` is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then every distinct lowercase word of `texts` in sorted order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| t.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .filter(|w| w != PAD_TOKEN && w != UNKNOWN_TOKEN)
            .collect();
        let tokens = [PAD_TOKEN.to_string(), UNKNOWN_TOKEN.to_string()]
            .into_iter()
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("specials are unique")
    }

    /// Rebuilds a vocabulary from an ordered token list (as stored in weight files).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNKNOWN_TOKEN {
            return Err(Error::format(
                "vocab",
                format!("token list must start with {PAD_TOKEN:?}, {UNKNOWN_TOKEN:?}"),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unknown_id(&self) -> usize {
        1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// Lowercase, whitespace split, out-of-vocabulary words → `<unk>`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    text.split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()).unwrap_or(vocab.unknown_id()))
        .collect()
}

/// Class names with their token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPromptSet {
    names: Vec<String>,
    token_ids: Vec<Vec<usize>>,
}

impl ClassPromptSet {
    pub fn new<S: AsRef<str>>(names: &[S], vocab: &Vocabulary) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Input("class list is empty".into()));
        }
        let mut token_ids = Vec::with_capacity(names.len());
        for name in names {
            let ids = tokenize(name.as_ref(), vocab);
            if ids.is_empty() {
                return Err(Error::Input(format!(
                    "class name {:?} has no tokens",
                    name.as_ref()
                )));
            }
            token_ids.push(ids);
        }
        Ok(Self {
            names: names.iter().map(|n| n.as_ref().to_string()).collect(),
            token_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn token_ids(&self) -> &[Vec<usize>] {
        &self.token_ids
    }
}

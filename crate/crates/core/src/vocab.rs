use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub type TokenId = u32;

/// An ordered token inventory with begin, end and unknown markers.
///
/// Ids are positions in the token list, so the map is a bijection onto
/// `0..len` by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, bos: TokenId, eos: TokenId, unk: TokenId) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!("token {i} is empty or contains whitespace")));
            }
            if ids.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token `{tok}`")));
            }
        }
        let n = tokens.len() as TokenId;
        if bos >= n || eos >= n || unk >= n {
            return Err(Error::Vocabulary("special id out of range".into()));
        }
        if bos == eos || bos == unk || eos == unk {
            return Err(Error::Vocabulary("special ids must be distinct".into()));
        }
        Ok(Vocabulary {
            tokens,
            ids,
            bos,
            eos,
            unk,
        })
    }

    /// `<s>`, `</s>`, `<unk>` at ids 0, 1, 2 followed by `words`.
    pub fn with_specials<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let tokens = [BOS, EOS, UNK]
            .into_iter()
            .map(str::to_owned)
            .chain(words.iter().map(|w| w.as_ref().to_owned()))
            .collect();
        Vocabulary::new(tokens, 0, 1, 2)
    }

    /// One token per line; the first three lines are the begin, end and
    /// unknown markers in that order.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if tokens.len() < 3 {
            return Err(Error::Vocabulary(format!(
                "{}: need at least the three marker tokens",
                path.display()
            )));
        }
        Vocabulary::new(tokens, 0, 1, 2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if (self.bos, self.eos, self.unk) != (0, 1, 2) {
            return Err(Error::Vocabulary("only vocabularies with markers at 0..3 can be saved".into()));
        }
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.unk)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos || id == self.unk
    }

    /// Space-joined surface form, markers removed.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != self.bos && id != self.eos)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

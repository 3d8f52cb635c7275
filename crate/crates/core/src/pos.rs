use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse part-of-speech groups used for probability profiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Det,
    Adv,
    Adp,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 7] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Det,
        PosTag::Adv,
        PosTag::Adp,
        PosTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Det => "DET",
            PosTag::Adv => "ADV",
            PosTag::Adp => "ADP",
            PosTag::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown POS tag `{s}`"))
    }
}

/// Token to POS tag map. Tokens it does not know are [`PosTag::Other`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosLexicon {
    tags: HashMap<String, PosTag>,
}

impl PosLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry, failing if the token is already tagged.
    pub fn insert(&mut self, token: impl Into<String>, tag: PosTag) -> Result<()> {
        let token = token.into();
        if self.tags.contains_key(&token) {
            return Err(Error::Vocabulary(format!("duplicate lexicon entry `{token}`")));
        }
        self.tags.insert(token, tag);
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> PosTag {
        self.tags.get(token).copied().unwrap_or(PosTag::Other)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = PosLexicon::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (token, tag) = raw
                .split_once('\t')
                .ok_or_else(|| Error::line(line, "tag", "expected `token<TAB>TAG`"))?;
            let tag: PosTag = tag.trim().parse().map_err(|m| Error::line(line, "tag", m))?;
            if lex.tags.contains_key(token) {
                return Err(Error::line(line, "token", format!("duplicate token `{token}`")));
            }
            lex.tags.insert(token.to_owned(), tag);
        }
        Ok(lex)
    }

    /// Serialized as sorted `token<TAB>TAG` lines.
    pub fn to_tsv(&self) -> String {
        let mut entries: Vec<_> = self.tags.iter().collect();
        entries.sort();
        entries
            .into_iter()
            .map(|(tok, tag)| format!("{tok}\t{tag}\n"))
            .collect()
    }
}

pub fn load_pos_lexicon(path: impl AsRef<Path>) -> Result<PosLexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PosLexicon::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_default() {
        let lex = PosLexicon::parse("dog\tNOUN\n").unwrap();
        assert_eq!(lex.lookup("dog"), PosTag::Noun);
        assert_eq!(lex.lookup("cat"), PosTag::Other);
    }

    #[test]
    fn duplicate_token_rejected() {
        let err = PosLexicon::parse("dog\tNOUN\ndog\tNOUN\n").unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, field: "token", .. }), "{err}");
    }

    #[test]
    fn unknown_tag_rejected() {
        let err = PosLexicon::parse("dog\tPRON\n").unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, field: "tag", .. }), "{err}");
    }

    #[test]
    fn tsv_roundtrip_from_file() {
        let mut lex = PosLexicon::new();
        lex.insert("red", PosTag::Adj).unwrap();
        lex.insert("a", PosTag::Det).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        fs::write(&path, lex.to_tsv()).unwrap();
        assert_eq!(load_pos_lexicon(&path).unwrap(), lex);
    }
}

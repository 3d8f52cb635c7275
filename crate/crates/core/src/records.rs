//! Caption and score records, and their line-delimited JSON forms.
//!
//! Token-record lines:
//! `{"sample_id": str, "set_id": str, "tokens": [{"t": str|int, "lp": float, "pos": str?}], "terminated": bool}`
//!
//! Class-probability lines: `{"sample_id": str, "probs": [float]}`.
//!
//! Score lines: `{"sample_id": str, "set_id": str, "score": float, "label": "IN"|"OUT"}`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pos::{PosLexicon, PosTag};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub token_id: TokenId,
    /// Natural-log probability, finite and `<= 0`.
    pub logprob: f64,
    pub pos: Option<PosTag>,
}

impl TokenRecord {
    pub fn new(token_id: TokenId, logprob: f64) -> Self {
        TokenRecord {
            token_id,
            logprob,
            pos: None,
        }
    }

    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// A generated caption with per-token log-probabilities.
///
/// When `terminated` is set the last token is the end marker. It is kept so
/// its log-probability can take part in scoring; [`ScoredCaption::body`]
/// leaves it out.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCaption {
    pub sample_id: String,
    pub set_id: String,
    pub tokens: Vec<TokenRecord>,
    pub terminated: bool,
}

impl ScoredCaption {
    /// Caption tokens without the trailing end marker.
    pub fn body(&self) -> &[TokenRecord] {
        if self.terminated && !self.tokens.is_empty() {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn body_ids(&self) -> Vec<TokenId> {
        self.body().iter().map(|t| t.token_id).collect()
    }

    /// Fills tags missing inline from `lexicon`. Inline tags are kept.
    pub fn resolve_pos(&mut self, vocab: &Vocabulary, lexicon: &PosLexicon) {
        for tok in &mut self.tokens {
            if tok.pos.is_none() {
                tok.pos = Some(vocab.token(tok.token_id).map_or(PosTag::Other, |t| lexicon.lookup(t)));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetLabel {
    #[serde(rename = "IN")]
    In,
    #[serde(rename = "OUT")]
    Out,
}

impl fmt::Display for SetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetLabel::In => "IN",
            SetLabel::Out => "OUT",
        })
    }
}

/// Detector score for one sample; higher means more in-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub set_id: String,
    pub score: f64,
    pub label: SetLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbRecord {
    pub sample_id: String,
    pub probs: Vec<f64>,
}

/// Parsed token records plus how many tokens fell back to the unknown id.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub captions: Vec<ScoredCaption>,
    pub unknown_tokens: usize,
}

pub fn load_records(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<ScoredCaption>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ingested = parse_records(&text, vocab)?;
    if ingested.unknown_tokens > 0 {
        log::warn!(
            "{}: {} token(s) not in vocabulary, mapped to {}",
            path.display(),
            ingested.unknown_tokens,
            vocab.token(vocab.unk()).unwrap_or("<unk>")
        );
    }
    Ok(ingested.captions)
}

pub fn parse_records(text: &str, vocab: &Vocabulary) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let caption = parse_record_line(raw, line, vocab, &mut out.unknown_tokens)?;
        if !seen.insert((caption.set_id.clone(), caption.sample_id.clone())) {
            return Err(Error::line(
                line,
                "sample_id",
                format!("duplicate sample `{}` in set `{}`", caption.sample_id, caption.set_id),
            ));
        }
        out.captions.push(caption);
    }
    Ok(out)
}

fn parse_object(raw: &str, line: usize) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::line(line, "record", "expected a JSON object")),
        Err(e) => Err(Error::line(line, "record", e.to_string())),
    }
}

fn str_field(map: &Map<String, Value>, line: usize, field: &'static str) -> Result<String> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::line(line, field, "expected a string")),
        None => Err(Error::line(line, field, "missing")),
    }
}

fn parse_record_line(
    raw: &str,
    line: usize,
    vocab: &Vocabulary,
    unknown: &mut usize,
) -> Result<ScoredCaption> {
    let map = parse_object(raw, line)?;
    let sample_id = str_field(&map, line, "sample_id")?;
    let set_id = str_field(&map, line, "set_id")?;
    let terminated = match map.get("terminated") {
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(Error::line(line, "terminated", "expected a boolean")),
        None => return Err(Error::line(line, "terminated", "missing")),
    };
    let items = match map.get("tokens") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(Error::line(line, "tokens", "expected an array")),
        None => return Err(Error::line(line, "tokens", "missing")),
    };
    if items.is_empty() {
        return Err(Error::line(line, "tokens", "caption has no tokens"));
    }

    let mut tokens = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let Value::Object(tok) = item else {
            return Err(Error::line(line, "tokens", format!("token {k} is not an object")));
        };
        let token_id = match tok.get("t") {
            Some(Value::String(s)) => match vocab.id(s) {
                Some(id) => id,
                None => {
                    *unknown += 1;
                    vocab.unk()
                }
            },
            Some(Value::Number(n)) => match n.as_u64() {
                Some(id) if id < vocab.len() as u64 => id as TokenId,
                _ => return Err(Error::line(line, "t", format!("token {k}: unknown token id {n}"))),
            },
            _ => return Err(Error::line(line, "t", format!("token {k}: expected string or integer"))),
        };
        let logprob = match tok.get("lp").and_then(Value::as_f64) {
            Some(lp) if lp.is_finite() && lp <= 0.0 => lp,
            Some(lp) => {
                return Err(Error::line(
                    line,
                    "lp",
                    format!("token {k}: log-probability {lp} must be finite and <= 0"),
                ))
            }
            None => return Err(Error::line(line, "lp", format!("token {k}: missing or not a number"))),
        };
        let pos = match tok.get("pos") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(
                s.parse::<PosTag>()
                    .map_err(|m| Error::line(line, "pos", format!("token {k}: {m}")))?,
            ),
            Some(_) => return Err(Error::line(line, "pos", format!("token {k}: expected a string"))),
        };
        tokens.push(TokenRecord {
            token_id,
            logprob,
            pos,
        });
    }
    if terminated && tokens.last().map(|t| t.token_id) != Some(vocab.eos()) {
        return Err(Error::line(
            line,
            "terminated",
            "terminated caption must end with the end-of-sentence token",
        ));
    }
    Ok(ScoredCaption {
        sample_id,
        set_id,
        tokens,
        terminated,
    })
}

/// Serializes one caption as a token-record line (no trailing newline).
/// Tokens are written by surface string.
pub fn record_line(caption: &ScoredCaption, vocab: &Vocabulary) -> String {
    let tokens: Vec<Value> = caption
        .tokens
        .iter()
        .map(|t| {
            let mut obj = Map::new();
            let text = vocab.token(t.token_id).map(str::to_owned);
            obj.insert(
                "t".into(),
                text.map_or_else(|| Value::from(t.token_id), Value::String),
            );
            obj.insert("lp".into(), Value::from(t.logprob));
            if let Some(pos) = t.pos {
                obj.insert("pos".into(), Value::String(pos.as_str().into()));
            }
            Value::Object(obj)
        })
        .collect();
    let mut obj = Map::new();
    obj.insert("sample_id".into(), Value::String(caption.sample_id.clone()));
    obj.insert("set_id".into(), Value::String(caption.set_id.clone()));
    obj.insert("tokens".into(), Value::Array(tokens));
    obj.insert("terminated".into(), Value::Bool(caption.terminated));
    Value::Object(obj).to_string()
}

pub fn write_records<W: Write>(mut out: W, captions: &[ScoredCaption], vocab: &Vocabulary) -> std::io::Result<()> {
    for c in captions {
        writeln!(out, "{}", record_line(c, vocab))?;
    }
    Ok(())
}

pub fn save_records(path: impl AsRef<Path>, captions: &[ScoredCaption], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_records(&mut buf, captions, vocab).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_class_probs(path: impl AsRef<Path>) -> Result<Vec<ClassProbRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_class_probs(&text)
}

pub fn parse_class_probs(text: &str) -> Result<Vec<ClassProbRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let map = parse_object(raw, line)?;
        let sample_id = str_field(&map, line, "sample_id")?;
        let probs = match map.get("probs") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::line(line, "probs", "expected numbers")))
                .collect::<Result<Vec<f64>>>()?,
            _ => return Err(Error::line(line, "probs", "missing or not an array")),
        };
        if probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::line(line, "probs", "entries must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if !probs.is_empty() && (total - 1.0).abs() > 1e-6 {
            return Err(Error::line(line, "probs", format!("entries sum to {total}, not 1")));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::line(line, "sample_id", format!("duplicate sample `{sample_id}`")));
        }
        out.push(ClassProbRecord { sample_id, probs });
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<SampleScore>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text)
}

pub fn parse_scores(text: &str) -> Result<Vec<SampleScore>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let score: SampleScore =
            serde_json::from_str(raw).map_err(|e| Error::line(line, "record", e.to_string()))?;
        if !score.score.is_finite() {
            return Err(Error::line(line, "score", "must be finite"));
        }
        out.push(score);
    }
    Ok(out)
}

pub fn save_scores(path: impl AsRef<Path>, scores: &[SampleScore]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for s in scores {
        buf.push_str(&serde_json::to_string(s)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_specials(&["a", "dog", "runs"]).unwrap()
    }

    const TWO: &str = r#"{"sample_id":"1","set_id":"in","tokens":[{"t":"a","lp":-0.1},{"t":"dog","lp":-0.5,"pos":"NOUN"},{"t":"</s>","lp":-0.2}],"terminated":true}
{"sample_id":"2","set_id":"in","tokens":[{"t":3,"lp":0.0}],"terminated":false}
"#;

    #[test]
    fn parses_valid_lines() {
        let got = parse_records(TWO, &vocab()).unwrap();
        assert_eq!(got.captions.len(), 2);
        assert_eq!(got.unknown_tokens, 0);
        let first = &got.captions[0];
        assert_eq!(first.body_ids(), vec![3, 4]);
        assert_eq!(first.tokens[1].pos, Some(PosTag::Noun));
        assert_eq!(got.captions[1].tokens[0].token_id, 3);
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_records("", &vocab()).unwrap().captions.is_empty());
    }

    #[test]
    fn positive_logprob_names_line_and_field() {
        let text = format!(
            "{}\n{}\n",
            TWO.lines().next().unwrap(),
            r#"{"sample_id":"x","set_id":"in","tokens":[{"t":"a","lp":0.1}],"terminated":false}"#
        );
        let err = parse_records(&text, &vocab()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, field: "lp", .. }), "{err}");
    }

    #[test]
    fn unknown_strings_map_to_unk_but_ids_must_exist() {
        let v = vocab();
        let got = parse_records(
            r#"{"sample_id":"1","set_id":"s","tokens":[{"t":"cat","lp":-1}],"terminated":false}"#,
            &v,
        )
        .unwrap();
        assert_eq!(got.unknown_tokens, 1);
        assert_eq!(got.captions[0].tokens[0].token_id, v.unk());

        let err = parse_records(
            r#"{"sample_id":"1","set_id":"s","tokens":[{"t":99,"lp":-1}],"terminated":false}"#,
            &v,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Line { field: "t", .. }));
    }

    #[test]
    fn structural_errors() {
        let v = vocab();
        for (text, field) in [
            ("not json", "record"),
            (r#"{"set_id":"s","tokens":[],"terminated":false}"#, "sample_id"),
            (r#"{"sample_id":"1","set_id":"s","tokens":[],"terminated":false}"#, "tokens"),
            (
                r#"{"sample_id":"1","set_id":"s","tokens":[{"t":"a","lp":-1,"pos":"PRON"}],"terminated":false}"#,
                "pos",
            ),
            (
                r#"{"sample_id":"1","set_id":"s","tokens":[{"t":"a","lp":-1}],"terminated":true}"#,
                "terminated",
            ),
        ] {
            match parse_records(text, &v) {
                Err(Error::Line { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_sample_in_set_rejected() {
        let line = r#"{"sample_id":"1","set_id":"s","tokens":[{"t":"a","lp":-1}],"terminated":false}"#;
        let err = parse_records(&format!("{line}\n{line}\n"), &vocab()).unwrap_err();
        assert!(matches!(err, Error::Line { line: 2, field: "sample_id", .. }));
    }

    #[test]
    fn class_probs_validated() {
        let ok = parse_class_probs(r#"{"sample_id":"a","probs":[0.25,0.75]}"#).unwrap();
        assert_eq!(ok[0].probs, vec![0.25, 0.75]);
        assert!(parse_class_probs(r#"{"sample_id":"a","probs":[0.5,0.6]}"#).is_err());
        assert!(parse_class_probs(r#"{"sample_id":"a","probs":[-0.5,1.5]}"#).is_err());
    }

    #[test]
    fn score_lines_roundtrip() {
        let scores = vec![SampleScore {
            sample_id: "1".into(),
            set_id: "in".into(),
            score: -1.5,
            label: SetLabel::In,
        }];
        let line = serde_json::to_string(&scores[0]).unwrap();
        assert_eq!(line, r#"{"sample_id":"1","set_id":"in","score":-1.5,"label":"IN"}"#);
        assert_eq!(parse_scores(&line).unwrap(), scores);
    }

    #[test]
    fn lexicon_fills_only_missing_tags() {
        let v = vocab();
        let mut lex = PosLexicon::new();
        lex.insert("dog", PosTag::Verb).unwrap();
        lex.insert("a", PosTag::Det).unwrap();
        let mut c = parse_records(TWO, &v).unwrap().captions.remove(0);
        c.resolve_pos(&v, &lex);
        assert_eq!(c.tokens[0].pos, Some(PosTag::Det));
        assert_eq!(c.tokens[1].pos, Some(PosTag::Noun));
        assert_eq!(c.tokens[2].pos, Some(PosTag::Other));
    }
}

//! Detector scores: caption log-likelihood, max class probability, the
//! fixed-threshold accept rule and per-POS probability profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pos::{PosLexicon, PosTag};
use crate::records::{ClassProbRecord, SampleScore, ScoredCaption, SetLabel, TokenRecord};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Sum of token log-probabilities.
    #[default]
    Sum,
    /// Sum divided by the number of scored tokens.
    Mean,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Sum => "sum",
            Normalization::Mean => "mean",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Normalization::Sum),
            "mean" => Ok(Normalization::Mean),
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default)]
    pub normalization: Normalization,
    /// Count the end marker's log-probability in the score.
    #[serde(default = "yes")]
    pub include_eos: bool,
}

fn yes() -> bool {
    true
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            normalization: Normalization::Sum,
            include_eos: true,
        }
    }
}

fn scored_tokens<'a>(caption: &'a ScoredCaption, cfg: &ScoreConfig) -> &'a [TokenRecord] {
    if cfg.include_eos {
        &caption.tokens
    } else {
        caption.body()
    }
}

/// Log-likelihood score of a caption under `cfg`.
pub fn caption_loglik(caption: &ScoredCaption, cfg: &ScoreConfig) -> Result<f64> {
    let tokens = scored_tokens(caption, cfg);
    if tokens.is_empty() {
        return Err(Error::DegenerateCaption {
            sample_id: caption.sample_id.clone(),
        });
    }
    let total: f64 = tokens.iter().map(|t| t.logprob).sum();
    let score = match cfg.normalization {
        Normalization::Sum => total,
        Normalization::Mean => total / tokens.len() as f64,
    };
    if !score.is_finite() {
        return Err(Error::DegenerateCaption {
            sample_id: caption.sample_id.clone(),
        });
    }
    Ok(score)
}

pub fn caption_score(caption: &ScoredCaption, cfg: &ScoreConfig, label: SetLabel) -> Result<SampleScore> {
    Ok(SampleScore {
        sample_id: caption.sample_id.clone(),
        set_id: caption.set_id.clone(),
        score: caption_loglik(caption, cfg)?,
        label,
    })
}

/// Maximum class probability.
pub fn msp_score(record: &ClassProbRecord, set_id: &str, label: SetLabel) -> Result<SampleScore> {
    let score = record
        .probs
        .iter()
        .copied()
        .max_by(f64::total_cmp)
        .ok_or_else(|| Error::Config(format!("sample `{}` has an empty probability vector", record.sample_id)))?;
    Ok(SampleScore {
        sample_id: record.sample_id.clone(),
        set_id: set_id.to_owned(),
        score,
        label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub true_in: usize,
    pub false_in: usize,
    pub true_out: usize,
    pub false_out: usize,
}

impl Confusion {
    fn rate(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    /// Fraction of IN samples accepted.
    pub fn tpr(&self) -> f64 {
        Self::rate(self.true_in, self.true_in + self.false_out)
    }

    /// Fraction of OUT samples accepted.
    pub fn fpr(&self) -> f64 {
        Self::rate(self.false_in, self.false_in + self.true_out)
    }

    pub fn tnr(&self) -> f64 {
        Self::rate(self.true_out, self.false_in + self.true_out)
    }

    pub fn fnr(&self) -> f64 {
        Self::rate(self.false_out, self.true_in + self.false_out)
    }
}

/// Accept-as-IN decisions for a fixed threshold: IN iff `score >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDecision {
    pub threshold: f64,
    pub decisions: Vec<SetLabel>,
    pub confusion: Confusion,
}

pub fn decide(score: f64, threshold: f64) -> SetLabel {
    if score >= threshold {
        SetLabel::In
    } else {
        SetLabel::Out
    }
}

pub fn apply_threshold(scores: &[SampleScore], threshold: f64) -> ThresholdDecision {
    let mut confusion = Confusion::default();
    let decisions = scores
        .iter()
        .map(|s| {
            let d = decide(s.score, threshold);
            match (s.label, d) {
                (SetLabel::In, SetLabel::In) => confusion.true_in += 1,
                (SetLabel::In, SetLabel::Out) => confusion.false_out += 1,
                (SetLabel::Out, SetLabel::In) => confusion.false_in += 1,
                (SetLabel::Out, SetLabel::Out) => confusion.true_out += 1,
            }
            d
        })
        .collect();
    ThresholdDecision {
        threshold,
        decisions,
        confusion,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PosGroup {
    pub mean_prob: f64,
    pub count: usize,
}

/// Mean predicted token probability per POS group, pooled over all tokens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosProfile {
    pub groups: BTreeMap<PosTag, PosGroup>,
}

impl PosProfile {
    pub fn get(&self, tag: PosTag) -> PosGroup {
        self.groups.get(&tag).copied().unwrap_or_default()
    }

    pub fn total_count(&self) -> usize {
        self.groups.values().map(|g| g.count).sum()
    }

    /// Pooled mean over the given tags.
    pub fn mean_of(&self, tags: &[PosTag]) -> Option<f64> {
        let (sum, n) = tags.iter().fold((0.0, 0usize), |(s, n), &t| {
            let g = self.get(t);
            (s + g.mean_prob * g.count as f64, n + g.count)
        });
        (n > 0).then(|| sum / n as f64)
    }

    pub fn overall_mean(&self) -> Option<f64> {
        self.mean_of(&PosTag::ALL)
    }
}

/// How per-group means are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosPooling {
    /// Every token counts once across the whole corpus.
    #[default]
    Tokens,
    /// Each caption's group mean counts once.
    Captions,
}

/// Profiles caption bodies (the end marker is not a word). Inline tags take
/// precedence over the lexicon; tokens neither knows are OTHER.
pub fn pos_profile(captions: &[ScoredCaption], vocab: &Vocabulary, lexicon: &PosLexicon) -> PosProfile {
    pos_profile_with(captions, vocab, lexicon, PosPooling::Tokens)
}

pub fn pos_profile_with(
    captions: &[ScoredCaption],
    vocab: &Vocabulary,
    lexicon: &PosLexicon,
    pooling: PosPooling,
) -> PosProfile {
    let tag_of = |t: &TokenRecord| {
        t.pos
            .unwrap_or_else(|| vocab.token(t.token_id).map_or(PosTag::Other, |s| lexicon.lookup(s)))
    };
    let mut sums: BTreeMap<PosTag, (f64, usize)> = BTreeMap::new();
    for caption in captions {
        let mut local: BTreeMap<PosTag, (f64, usize)> = BTreeMap::new();
        for tok in caption.body() {
            let e = local.entry(tag_of(tok)).or_default();
            e.0 += tok.prob();
            e.1 += 1;
        }
        for (tag, (sum, n)) in local {
            let e = sums.entry(tag).or_default();
            match pooling {
                PosPooling::Tokens => {
                    e.0 += sum;
                    e.1 += n;
                }
                PosPooling::Captions => {
                    e.0 += sum / n as f64;
                    e.1 += 1;
                }
            }
        }
    }
    PosProfile {
        groups: sums
            .into_iter()
            .map(|(tag, (sum, n))| {
                (
                    tag,
                    PosGroup {
                        mean_prob: sum / n as f64,
                        count: n,
                    },
                )
            })
            .collect(),
    }
}

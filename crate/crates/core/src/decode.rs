//! Caption decoding over any conditional next-token distribution.
//!
//! Hypotheses are ranked by the plain sum of token log-probabilities.
//! Ties go to the lower token id (or the lexicographically smaller id
//! sequence for beams), which makes every strategy deterministic given the
//! provider, the configuration and the seed.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{ScoredCaption, TokenRecord};
use crate::rng::SeededRng;
use crate::vocab::{TokenId, Vocabulary};

const SUM_TOLERANCE: f64 = 1e-6;
/// Slack when comparing cumulative nucleus mass against `p`.
const MASS_EPSILON: f64 = 1e-12;

/// A conditional next-token distribution `P(w_t | w_1..w_{t-1}, context)`.
///
/// `prefix` always starts with the begin marker. The returned vector has one
/// entry per vocabulary token, is non-negative and sums to one. Identical
/// inputs must give identical outputs.
pub trait DistributionProvider {
    type Context: ?Sized;

    fn vocab(&self) -> &Vocabulary;

    fn next_distribution(&self, prefix: &[TokenId], context: &Self::Context) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Beam { k: usize },
    TopK { k: usize },
    Nucleus { p: f64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => write!(f, "greedy"),
            Strategy::Beam { k } => write!(f, "beam:{k}"),
            Strategy::TopK { k } => write!(f, "topk:{k}"),
            Strategy::Nucleus { p } => write!(f, "nucleus:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `greedy`, `beam:K`, `topk:K` or `nucleus:P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized decoding strategy `{s}`"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let strategy = match (name, arg) {
            ("greedy", None) => Strategy::Greedy,
            ("beam", Some(a)) => Strategy::Beam {
                k: a.parse().map_err(|_| bad())?,
            },
            ("topk", Some(a)) => Strategy::TopK {
                k: a.parse().map_err(|_| bad())?,
            },
            ("nucleus", Some(a)) => Strategy::Nucleus {
                p: a.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Beam { k } | Strategy::TopK { k } if k == 0 => {
                Err(Error::Config("K must be at least 1".into()))
            }
            Strategy::Nucleus { p } if !(p > 0.0 && p <= 1.0) => {
                Err(Error::Config(format!("nucleus p = {p} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            max_len: 16,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        self.strategy.validate()
    }
}

/// Output of a decoder: emitted tokens (including a final end marker when
/// `terminated`) with their model log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenRecord>,
    pub terminated: bool,
}

impl Decoded {
    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.token_id).collect()
    }

    pub fn total_logprob(&self) -> f64 {
        self.tokens.iter().map(|t| t.logprob).sum()
    }

    pub fn into_caption(self, sample_id: impl Into<String>, set_id: impl Into<String>) -> ScoredCaption {
        ScoredCaption {
            sample_id: sample_id.into(),
            set_id: set_id.into(),
            tokens: self.tokens,
            terminated: self.terminated,
        }
    }
}

pub fn decode<P: DistributionProvider>(provider: &P, context: &P::Context, cfg: &DecodeConfig) -> Result<Decoded> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Greedy => decode_greedy(provider, context, cfg.max_len),
        Strategy::Beam { k } => decode_beam(provider, context, k, cfg.max_len),
        Strategy::TopK { k } => decode_topk(provider, context, k, cfg.max_len, cfg.seed),
        Strategy::Nucleus { p } => decode_nucleus(provider, context, p, cfg.max_len, cfg.seed),
    }
}

fn checked_distribution<P: DistributionProvider>(
    provider: &P,
    prefix: &[TokenId],
    context: &P::Context,
    step: usize,
) -> Result<Vec<f64>> {
    let dist = provider.next_distribution(prefix, context);
    let expected = provider.vocab().len();
    if dist.len() != expected {
        return Err(Error::Distribution {
            step,
            message: format!("{} entries for a vocabulary of {expected}", dist.len()),
        });
    }
    if let Some((i, p)) = dist.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Distribution {
            step,
            message: format!("entry {i} is {p}"),
        });
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Distribution {
            step,
            message: format!("probabilities sum to {total}"),
        });
    }
    Ok(dist)
}

/// Token ids ordered by descending probability, ties by ascending id.
fn ranked(dist: &[f64]) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    order.sort_by(|&a, &b| dist[b as usize].total_cmp(&dist[a as usize]).then(a.cmp(&b)));
    order
}

/// Runs `pick` once per step until the end marker or `max_len`.
fn step_decode<P, F>(provider: &P, context: &P::Context, max_len: usize, mut pick: F) -> Result<Decoded>
where
    P: DistributionProvider,
    F: FnMut(&[f64]) -> TokenId,
{
    let vocab = provider.vocab();
    let mut prefix = vec![vocab.bos()];
    let mut tokens = Vec::new();
    for step in 0..max_len {
        let dist = checked_distribution(provider, &prefix, context, step)?;
        let id = pick(&dist);
        tokens.push(TokenRecord::new(id, dist[id as usize].ln()));
        if id == vocab.eos() {
            return Ok(Decoded {
                tokens,
                terminated: true,
            });
        }
        prefix.push(id);
    }
    Ok(Decoded {
        tokens,
        terminated: false,
    })
}

pub fn decode_greedy<P: DistributionProvider>(provider: &P, context: &P::Context, max_len: usize) -> Result<Decoded> {
    step_decode(provider, context, max_len, |dist| ranked(dist)[0])
}

/// Draws from `pool` with weights proportional to their probabilities.
fn sample_pool(pool: &[TokenId], dist: &[f64], rng: &mut SeededRng) -> TokenId {
    let total: f64 = pool.iter().map(|&id| dist[id as usize]).sum();
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    for &id in pool {
        acc += dist[id as usize];
        if acc > target {
            return id;
        }
    }
    // Rounding can leave `target` a hair above the last partial sum.
    *pool
        .iter()
        .rev()
        .find(|&&id| dist[id as usize] > 0.0)
        .expect("pool has positive mass")
}

pub fn decode_topk<P: DistributionProvider>(
    provider: &P,
    context: &P::Context,
    k: usize,
    max_len: usize,
    seed: u64,
) -> Result<Decoded> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    step_decode(provider, context, max_len, |dist| {
        let order = ranked(dist);
        let pool = &order[..k.min(order.len())];
        sample_pool(pool, dist, &mut rng)
    })
}

pub fn decode_nucleus<P: DistributionProvider>(
    provider: &P,
    context: &P::Context,
    p: f64,
    max_len: usize,
    seed: u64,
) -> Result<Decoded> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("nucleus p = {p} outside (0, 1]")));
    }
    let mut rng = SeededRng::new(seed);
    step_decode(provider, context, max_len, |dist| {
        let pool = nucleus_pool(dist, p);
        sample_pool(&pool, dist, &mut rng)
    })
}

/// Smallest probability-ranked prefix whose mass reaches `p`.
pub fn nucleus_pool(dist: &[f64], p: f64) -> Vec<TokenId> {
    let order = ranked(dist);
    let mut mass = 0.0;
    for (i, &id) in order.iter().enumerate() {
        mass += dist[id as usize];
        if mass >= p - MASS_EPSILON {
            return order[..=i].to_vec();
        }
    }
    order
}

#[derive(Debug, Clone)]
struct Hypothesis {
    ids: Vec<TokenId>,
    logprobs: Vec<f64>,
    score: f64,
}

impl Hypothesis {
    /// Higher score first, then the lexicographically smaller sequence.
    fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
        b.score.total_cmp(&a.score).then_with(|| a.ids.cmp(&b.ids))
    }

    fn into_decoded(self, terminated: bool) -> Decoded {
        Decoded {
            tokens: self
                .ids
                .into_iter()
                .zip(self.logprobs)
                .map(|(id, lp)| TokenRecord::new(id, lp))
                .collect(),
            terminated,
        }
    }
}

pub fn decode_beam<P: DistributionProvider>(
    provider: &P,
    context: &P::Context,
    k: usize,
    max_len: usize,
) -> Result<Decoded> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let vocab = provider.vocab();
    let k = if k > vocab.len() {
        log::warn!("beam width {k} exceeds vocabulary size {}, clamping", vocab.len());
        vocab.len()
    } else {
        k
    };

    let mut alive = vec![Hypothesis {
        ids: Vec::new(),
        logprobs: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let mut candidates = Vec::with_capacity(alive.len() * vocab.len());
        for hyp in &alive {
            let mut prefix = Vec::with_capacity(hyp.ids.len() + 1);
            prefix.push(vocab.bos());
            prefix.extend_from_slice(&hyp.ids);
            let dist = checked_distribution(provider, &prefix, context, step)?;
            for (id, &p) in dist.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let lp = p.ln();
                let mut ids = hyp.ids.clone();
                ids.push(id as TokenId);
                let mut logprobs = hyp.logprobs.clone();
                logprobs.push(lp);
                candidates.push(Hypothesis {
                    ids,
                    logprobs,
                    score: hyp.score + lp,
                });
            }
        }
        candidates.sort_by(Hypothesis::rank);
        candidates.truncate(k);

        alive.clear();
        for hyp in candidates {
            if hyp.ids.last() == Some(&vocab.eos()) {
                finished.push(hyp);
            } else {
                alive.push(hyp);
            }
        }
        if alive.is_empty() {
            break;
        }
    }

    if let Some(best) = finished.into_iter().min_by(Hypothesis::rank) {
        return Ok(best.into_decoded(true));
    }
    let best = alive
        .into_iter()
        .min_by(Hypothesis::rank)
        .expect("beam keeps at least one hypothesis");
    Ok(best.into_decoded(false))
}

#![allow(dead_code)]

use capscore_core::rng::SeededRng;
use capscore_core::{DistributionProvider, TokenId, Vocabulary};

pub fn word_vocab(n_words: usize) -> Vocabulary {
    let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    Vocabulary::with_specials(&words).unwrap()
}

fn hash_prefix(seed: u64, prefix: &[TokenId]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &t in prefix {
        h = SeededRng::derive(h, u64::from(t) + 1).next_u64();
    }
    h
}

/// Dense random distributions: every token except the begin marker gets
/// positive mass, fixed by `(seed, prefix)`.
pub struct HashProvider {
    pub vocab: Vocabulary,
    pub seed: u64,
}

impl DistributionProvider for HashProvider {
    type Context = ();

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId], _: &()) -> Vec<f64> {
        let mut rng = SeededRng::new(hash_prefix(self.seed, prefix));
        let bos = self.vocab.bos() as usize;
        let mut w: Vec<f64> = (0..self.vocab.len())
            .map(|i| if i == bos { 0.0 } else { 0.05 + rng.next_f64() })
            .collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|p| *p /= z);
        w
    }
}

/// Mass only along a handful of complete paths, so at most `paths.len()`
/// prefixes are ever alive at once.
pub struct PathProvider {
    pub vocab: Vocabulary,
    pub paths: Vec<Vec<TokenId>>,
    pub seed: u64,
}

impl PathProvider {
    /// `n_paths` random paths of 1..=max_len tokens, each ending in the end
    /// marker, over a vocabulary of `n_words` words plus markers.
    pub fn random(rng: &mut SeededRng, n_words: usize, max_len: usize, n_paths: usize) -> Self {
        let vocab = word_vocab(n_words);
        let words: Vec<TokenId> = (0..vocab.len() as TokenId).filter(|&t| !vocab.is_special(t)).collect();
        let mut paths: Vec<Vec<TokenId>> = Vec::new();
        for _ in 0..n_paths {
            let len = 1 + rng.below(max_len as u64) as usize;
            let mut p: Vec<TokenId> = (0..len - 1).map(|_| words[rng.below(words.len() as u64) as usize]).collect();
            p.push(vocab.eos());
            if !paths.contains(&p) {
                paths.push(p);
            }
        }
        PathProvider {
            vocab,
            paths,
            seed: rng.next_u64(),
        }
    }
}

impl DistributionProvider for PathProvider {
    type Context = ();

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId], _: &()) -> Vec<f64> {
        let body = &prefix[1..];
        let mut next: Vec<TokenId> = self
            .paths
            .iter()
            .filter(|p| p.len() > body.len() && p.starts_with(body))
            .map(|p| p[body.len()])
            .collect();
        next.sort_unstable();
        next.dedup();
        let mut dist = vec![0.0; self.vocab.len()];
        if next.is_empty() {
            dist[self.vocab.eos() as usize] = 1.0;
            return dist;
        }
        let mut rng = SeededRng::new(hash_prefix(self.seed, prefix));
        for &t in &next {
            dist[t as usize] = 0.05 + rng.next_f64();
        }
        let z: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= z);
        dist
    }
}

/// Highest-scoring completed path of at most `max_len` tokens by depth-first
/// enumeration of every token at every step. Ties go to the
/// lexicographically smaller sequence.
pub fn exhaustive_best<P: DistributionProvider<Context = ()>>(p: &P, max_len: usize) -> Option<(Vec<TokenId>, f64)> {
    fn walk<P: DistributionProvider<Context = ()>>(
        p: &P,
        prefix: &mut Vec<TokenId>,
        score: f64,
        left: usize,
        best: &mut Option<(Vec<TokenId>, f64)>,
    ) {
        if left == 0 {
            return;
        }
        let dist = p.next_distribution(prefix, &());
        for (t, &q) in dist.iter().enumerate() {
            let s = score + q.ln();
            if s == f64::NEG_INFINITY {
                continue;
            }
            prefix.push(t as TokenId);
            if t as TokenId == p.vocab().eos() {
                let seq = prefix[1..].to_vec();
                let better = match best {
                    None => true,
                    Some((b, bs)) => s > *bs || (s == *bs && seq < *b),
                };
                if better {
                    *best = Some((seq, s));
                }
            } else {
                walk(p, prefix, s, left - 1, best);
            }
            prefix.pop();
        }
    }
    let mut best = None;
    walk(p, &mut vec![p.vocab().bos()], 0.0, max_len, &mut best);
    best
}

/// Fraction of (in, out) pairs ranked correctly, ties counting one half.
pub fn brute_auroc(ins: &[f64], outs: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in ins {
        for &b in outs {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (ins.len() * outs.len()) as f64
}

/// Scores drawn from a small grid so ties are common.
pub fn tied_scores(rng: &mut SeededRng, n: usize, levels: u64) -> Vec<f64> {
    (0..n).map(|_| rng.below(levels) as f64 * 0.25 - 3.0).collect()
}

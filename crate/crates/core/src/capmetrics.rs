//! Corpus BLEU-4 and sentence-averaged ROUGE-L against reference captions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::ScoredCaption;
use crate::vocab::Vocabulary;

/// Reference token sequences per sample id.
pub type ReferenceSet = BTreeMap<String, Vec<Vec<String>>>;

/// Candidate token sequence per sample id.
pub type Candidates = BTreeMap<String, Vec<String>>;

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BleuConfig {
    /// Add one to matched and total counts for n >= 2.
    pub smoothing: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig { smoothing: true }
    }
}

#[derive(Serialize, Deserialize)]
struct ReferenceLine {
    sample_id: String,
    refs: Vec<Vec<String>>,
}

/// Reads `{"sample_id": str, "refs": [[str]]}` lines.
pub fn load_references(path: impl AsRef<Path>) -> Result<ReferenceSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut refs = ReferenceSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ReferenceLine =
            serde_json::from_str(raw).map_err(|e| Error::line(i + 1, "record", e.to_string()))?;
        if line.refs.is_empty() {
            return Err(Error::line(i + 1, "refs", "at least one reference is required"));
        }
        if refs.insert(line.sample_id.clone(), line.refs).is_some() {
            return Err(Error::line(i + 1, "sample_id", format!("duplicate sample `{}`", line.sample_id)));
        }
    }
    Ok(refs)
}

pub fn save_references(path: impl AsRef<Path>, refs: &ReferenceSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, r) in refs {
        out.push_str(&serde_json::to_string(&ReferenceLine {
            sample_id: id.clone(),
            refs: r.clone(),
        })?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Caption bodies as surface tokens, keyed by sample id.
pub fn candidates_from(captions: &[ScoredCaption], vocab: &Vocabulary) -> Candidates {
    captions
        .iter()
        .map(|c| {
            let toks = c
                .body()
                .iter()
                .map(|t| vocab.token(t.token_id).unwrap_or("<unk>").to_owned())
                .collect();
            (c.sample_id.clone(), toks)
        })
        .collect()
}

fn references_for<'a>(refs: &'a ReferenceSet, sample_id: &str) -> Result<&'a [Vec<String>]> {
    match refs.get(sample_id) {
        Some(r) if !r.is_empty() => Ok(r),
        _ => Err(Error::MissingReferences(sample_id.to_owned())),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights over 1..=4-grams, clipped counts,
/// closest-reference-length brevity penalty.
pub fn bleu4(candidates: &Candidates, refs: &ReferenceSet, cfg: BleuConfig) -> Result<f64> {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for (id, cand) in candidates {
        let references = references_for(refs, id)?;
        cand_len += cand.len();
        // Closest reference length, shorter on ties.
        ref_len += references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(cand.len()), r))
            .expect("non-empty references");

        for n in 1..=4 {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in references {
                for (gram, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (gram, c) in &cand_counts {
                matched[n - 1] += (*c).min(max_ref.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += cand_counts.values().sum::<usize>();
        }
    }

    let mut log_sum = 0.0;
    for n in 0..4 {
        let (mut m, mut t) = (matched[n] as f64, total[n] as f64);
        if cfg.smoothing && n >= 1 {
            m += 1.0;
            t += 1.0;
        }
        if m == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        log_sum += (m / t).ln() / 4.0;
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len <= ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_sum.exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based F-measure of one candidate against one reference.
pub fn rouge_l_pair(cand: &[String], reference: &[String], beta: f64) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// Per-sample best ROUGE-L over references, averaged over samples.
pub fn rouge_l(candidates: &Candidates, refs: &ReferenceSet) -> Result<f64> {
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (id, cand) in candidates {
        let best = references_for(refs, id)?
            .iter()
            .map(|r| rouge_l_pair(cand, r, ROUGE_BETA))
            .fold(0.0, f64::max);
        sum += best;
    }
    Ok(sum / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn single(cand: &str, refs: &[&str]) -> (Candidates, ReferenceSet) {
        let c = Candidates::from([("x".to_owned(), toks(cand))]);
        let r = ReferenceSet::from([("x".to_owned(), refs.iter().map(|r| toks(r)).collect())]);
        (c, r)
    }

    #[test]
    fn identical_is_one() {
        let (c, r) = single("a red circle and a blue square", &["a red circle and a blue square"]);
        assert!((bleu4(&c, &r, BleuConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        assert!((bleu4(&c, &r, BleuConfig { smoothing: false }).unwrap() - 1.0).abs() < 1e-12);
        assert!((rouge_l(&c, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let (c, r) = single("x y z w", &["a b c d"]);
        assert_eq!(bleu4(&c, &r, BleuConfig::default()).unwrap(), 0.0);
        assert_eq!(rouge_l(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn cat_on_the_mat() {
        // Clipped precisions 5/6, 3/5, 1/4, 0/3 with equal lengths.
        let (c, r) = single("the cat sat on the mat", &["the cat is on the mat"]);
        assert_eq!(bleu4(&c, &r, BleuConfig { smoothing: false }).unwrap(), 0.0);
        // Smoothed: 5/6 * 4/6 * 2/5 * 1/4 = 1/18.
        let smoothed = bleu4(&c, &r, BleuConfig::default()).unwrap();
        assert!((smoothed - (1.0f64 / 18.0).powf(0.25)).abs() < 1e-12, "{smoothed}");
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let (c, r) = single("a b c d", &["a b c d e f g h", "a b c d e"]);
        let got = bleu4(&c, &r, BleuConfig::default()).unwrap();
        assert!((got - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_lcs_example() {
        let (c, r) = single("a b c d", &["a c d e"]);
        assert!((rouge_l(&c, &r).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(lcs_len(&toks("a b c d"), &toks("a c d e")), 3);
    }

    #[test]
    fn rouge_l_takes_best_reference() {
        let (c, r) = single("a b c d", &["x y", "a b c d"]);
        assert!((rouge_l(&c, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_references_is_an_error() {
        let c = Candidates::from([("x".to_owned(), toks("a"))]);
        let r = ReferenceSet::new();
        assert!(matches!(bleu4(&c, &r, BleuConfig::default()), Err(Error::MissingReferences(_))));
        assert!(matches!(rouge_l(&c, &r), Err(Error::MissingReferences(_))));
    }
}

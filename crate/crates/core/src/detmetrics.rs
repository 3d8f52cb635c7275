//! Separation metrics between an in-distribution and an out-of-distribution
//! score group. IN is the positive class unless stated otherwise; higher
//! scores mean "more in-distribution".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::SetLabel;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroup {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl ScoreGroup {
    /// Fails on an empty side or a non-finite score.
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        if in_scores.is_empty() {
            return Err(Error::EmptyGroup("in-distribution"));
        }
        if out_scores.is_empty() {
            return Err(Error::EmptyGroup("out-of-distribution"));
        }
        if in_scores.iter().chain(&out_scores).any(|s| !s.is_finite()) {
            return Err(Error::Config("detector scores must be finite".into()));
        }
        Ok(ScoreGroup { in_scores, out_scores })
    }

    /// IN and OUT exchanged.
    pub fn swapped(&self) -> ScoreGroup {
        ScoreGroup {
            in_scores: self.out_scores.clone(),
            out_scores: self.in_scores.clone(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.in_scores.len()
    }

    pub fn n_out(&self) -> usize {
        self.out_scores.len()
    }

    /// Distinct score levels from highest to lowest, with the number of IN
    /// and OUT samples at each level.
    fn levels(&self) -> Vec<(f64, usize, usize)> {
        let mut all: Vec<(f64, bool)> = self
            .in_scores
            .iter()
            .map(|&s| (s, true))
            .chain(self.out_scores.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut levels: Vec<(f64, usize, usize)> = Vec::new();
        for (s, is_in) in all {
            match levels.last_mut() {
                Some(last) if last.0 == s => {}
                _ => levels.push((s, 0, 0)),
            }
            let last = levels.last_mut().expect("just pushed");
            if is_in {
                last.1 += 1;
            } else {
                last.2 += 1;
            }
        }
        levels
    }
}

/// Probability that an IN score beats an OUT score, ties counted half.
///
/// Computed from mid-ranks of the pooled sample (Mann-Whitney U).
pub fn auroc(g: &ScoreGroup) -> f64 {
    let mut rank_sum = 0.0;
    // Walk ascending so ranks start at 1.
    let mut below = 0usize;
    for &(_, n_in, n_out) in g.levels().iter().rev() {
        let n = n_in + n_out;
        let mid_rank = below as f64 + (n as f64 + 1.0) / 2.0;
        rank_sum += mid_rank * n_in as f64;
        below += n;
    }
    let (n_in, n_out) = (g.n_in() as f64, g.n_out() as f64);
    let u = rank_sum - n_in * (n_in + 1.0) / 2.0;
    u / (n_in * n_out)
}

/// `(FPR, TPR)` after each distinct threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(g: &ScoreGroup) -> Vec<(f64, f64)> {
    let (n_in, n_out) = (g.n_in() as f64, g.n_out() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, i, o) in g.levels() {
        tp += i;
        fp += o;
        points.push((fp as f64 / n_out, tp as f64 / n_in));
    }
    points
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// `(recall, precision)` after each distinct threshold with `positive` as
/// the positive class. For OUT, lower scores rank first.
pub fn pr_curve(g: &ScoreGroup, positive: SetLabel) -> Vec<(f64, f64)> {
    let g = oriented(g, positive);
    let n_pos = g.n_in() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    g.levels()
        .into_iter()
        .map(|(_, i, o)| {
            tp += i;
            fp += o;
            (tp as f64 / n_pos, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over distinct thresholds.
pub fn aupr(g: &ScoreGroup, positive: SetLabel) -> f64 {
    let g = oriented(g, positive);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut weighted = 0.0;
    for (_, i, o) in g.levels() {
        tp += i;
        fp += o;
        // Recall steps are i / n_pos; dividing once at the end keeps the
        // all-precision-one case exact.
        weighted += i as f64 * (tp as f64 / (tp + fp) as f64);
    }
    weighted / g.n_in() as f64
}

/// Group with the positive class in `in_scores`, scores negated for OUT.
fn oriented(g: &ScoreGroup, positive: SetLabel) -> ScoreGroup {
    match positive {
        SetLabel::In => g.clone(),
        SetLabel::Out => ScoreGroup {
            in_scores: g.out_scores.iter().map(|s| -s).collect(),
            out_scores: g.in_scores.iter().map(|s| -s).collect(),
        },
    }
}

fn bin_counts(scores: &[f64], lo: f64, width: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &s in scores {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    h
}

/// Normalized equal-width histograms of both sides over the pooled range.
/// `None` when every score is identical.
pub fn histograms(g: &ScoreGroup, bins: usize) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
    let pooled = g.in_scores.iter().chain(&g.out_scores);
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let width = (hi - lo) / bins as f64;
    let hist = |scores: &[f64]| {
        let n = scores.len() as f64;
        bin_counts(scores, lo, width, bins).into_iter().map(|c| c / n).collect::<Vec<f64>>()
    };
    Some((hist(&g.in_scores), hist(&g.out_scores), lo, hi))
}

/// `-ln sum_b sqrt(p_b q_b)` over `bins` equal-width bins; infinite when the
/// histograms share no bin.
pub fn bhattacharyya(g: &ScoreGroup, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 histogram bins, got {bins}")));
    }
    let Some((_, _, lo, hi)) = histograms(g, bins) else {
        log::warn!("all scores identical; Bhattacharyya distance defined as 0");
        return Ok(0.0);
    };
    // Work on raw counts so identical histograms give a coefficient of exactly 1.
    let width = (hi - lo) / bins as f64;
    let p = bin_counts(&g.in_scores, lo, width, bins);
    let q = bin_counts(&g.out_scores, lo, width, bins);
    let overlap: f64 = p.iter().zip(&q).map(|(a, b)| (a * b).sqrt()).sum();
    if overlap <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let bc = overlap / (g.n_in() as f64 * g.n_out() as f64).sqrt();
    Ok(if bc >= 1.0 { 0.0 } else { -bc.ln() })
}

/// All four separation metrics for one (IN, OUT) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub pr_in: f64,
    pub pr_out: f64,
    #[serde(with = "extended_real")]
    pub bd: f64,
    pub bins: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

impl DetectionReport {
    pub fn compute(g: &ScoreGroup, bins: usize) -> Result<Self> {
        Ok(DetectionReport {
            auroc: auroc(g),
            pr_in: aupr(g, SetLabel::In),
            pr_out: aupr(g, SetLabel::Out),
            bd: bhattacharyya(g, bins)?,
            bins,
            n_in: g.n_in(),
            n_out: g.n_out(),
            roc_points: roc_curve(g),
            pr_points: pr_curve(g, SetLabel::In),
        })
    }
}

/// Formats a metric for tables; infinity becomes `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_owned()
    } else {
        format!("{v:.4}")
    }
}

/// Serializes `+inf` as the string `"inf"`, finite values as numbers.
pub mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s}"))),
        }
    }
}

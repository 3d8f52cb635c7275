//! Scores every set of a manifest, compares each OOD set (and their union)
//! against the in-distribution set, and writes tables and plots.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use capscore_core::capmetrics::{bleu4, candidates_from, load_references, rouge_l, BleuConfig};
use capscore_core::detmetrics::{extended_real, format_metric, DetectionReport};
use capscore_core::pos::load_pos_lexicon;
use capscore_core::records::{load_class_probs, load_records, load_scores, save_records, save_scores};
use capscore_core::score::{caption_score, msp_score, pos_profile};
use capscore_core::toy::{caption_images, ToyCaptioner};
use capscore_core::{Normalization, PosTag, SampleScore, ScoreGroup, ScoredCaption, SetLabel, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::imageset::{load_images, noise_images};
use crate::manifest::{ExperimentManifest, ScoreKind, SetSource, SetSpec, AGGREGATE};
use crate::plot::render_plots;

/// Scores (and captions, when the set produced them) for one set.
#[derive(Debug, Clone)]
pub struct EvaluatedSet {
    pub name: String,
    pub label: SetLabel,
    pub kind: ScoreKind,
    pub scores: Vec<SampleScore>,
    pub captions: Option<(Vec<ScoredCaption>, Vocabulary)>,
}

/// Detection metrics for the in-distribution set against one OOD set.
#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub in_set: String,
    pub out_set: String,
    pub kind: ScoreKind,
    /// Likelihood normalization; `None` for MSP scores.
    pub normalization: Option<Normalization>,
    pub include_eos: Option<bool>,
    pub report: DetectionReport,
}

/// The structured line written per comparison.
#[derive(Serialize)]
struct ReportLine<'a> {
    in_set: &'a str,
    out_set: &'a str,
    score_kind: &'static str,
    normalization: Option<Normalization>,
    include_eos: Option<bool>,
    bins: usize,
    n_in: usize,
    n_out: usize,
    auroc: f64,
    pr_in: f64,
    pr_out: f64,
    #[serde(with = "extended_real")]
    bd: f64,
}

impl PairReport {
    fn line(&self) -> ReportLine<'_> {
        ReportLine {
            in_set: &self.in_set,
            out_set: &self.out_set,
            score_kind: self.kind.as_str(),
            normalization: self.normalization,
            include_eos: self.include_eos,
            bins: self.report.bins,
            n_in: self.report.n_in,
            n_out: self.report.n_out,
            auroc: self.report.auroc,
            pr_in: self.report.pr_in,
            pr_out: self.report.pr_out,
            bd: self.report.bd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub sets: Vec<EvaluatedSet>,
    pub per_set: Vec<PairReport>,
    /// In-distribution set against the union of all OOD sets, unweighted.
    pub aggregate: PairReport,
    pub files: Vec<PathBuf>,
}

struct Resources {
    model: Option<ToyCaptioner>,
    record_vocab: Option<Vocabulary>,
}

impl Resources {
    fn load(m: &ExperimentManifest) -> Result<Self> {
        let needs_model = m.sets().map(SetSpec::source).collect::<Result<Vec<_>>>()?.iter().any(SetSource::needs_model);
        let model = match (&m.model, needs_model || m.vocab.is_none()) {
            (Some(p), true) => Some(ToyCaptioner::load(p)?),
            _ => None,
        };
        let record_vocab = match &m.vocab {
            Some(p) => Some(Vocabulary::load(p)?),
            None => model.as_ref().map(|md| md.vocab().clone()),
        };
        Ok(Resources { model, record_vocab })
    }
}

fn evaluate_set(m: &ExperimentManifest, spec: &SetSpec, label: SetLabel, res: &Resources) -> Result<EvaluatedSet> {
    let source = spec.source()?;
    let kind = source.kind();
    let name = &spec.name;
    let model = || res.model.as_ref().expect("validated: model present");

    let captions = match &source {
        SetSource::Records(path) => {
            let vocab = res.record_vocab.clone().expect("validated: vocabulary present");
            let mut caps = load_records(path, &vocab)?;
            caps.iter_mut().for_each(|c| c.set_id = name.clone());
            Some((caps, vocab))
        }
        SetSource::Images(dir, corruption) => {
            let imgs = load_images(dir, corruption.map(|c| (c.corruption, c.seed)))?;
            Some((caption_images(model(), &imgs, name, &m.decode)?, model().vocab().clone()))
        }
        SetSource::Noise(n) => Some((
            caption_images(model(), &noise_images(n), name, &m.decode)?,
            model().vocab().clone(),
        )),
        SetSource::Scores(..) | SetSource::ClassProbs(_) => None,
    };

    let scores: Vec<SampleScore> = match (&source, &captions) {
        (_, Some((caps, _))) => caps
            .par_iter()
            .map(|c| caption_score(c, &m.score, label))
            .collect::<capscore_core::Result<_>>()?,
        (SetSource::Scores(path, _), None) => load_scores(path)?
            .into_iter()
            .map(|s| SampleScore {
                set_id: name.clone(),
                label,
                ..s
            })
            .collect(),
        (SetSource::ClassProbs(path), None) => load_class_probs(path)?
            .iter()
            .map(|r| msp_score(r, name, label))
            .collect::<capscore_core::Result<_>>()?,
        _ => unreachable!("caption sources always produce captions"),
    };

    if scores.is_empty() {
        return Err(CliError::EmptySet(name.clone()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = scores.iter().find(|s| !seen.insert(s.sample_id.as_str())) {
        return Err(CliError::DuplicateSample {
            set: name.clone(),
            sample_id: dup.sample_id.clone(),
        });
    }
    log::info!("set `{name}`: {} {} scores", scores.len(), kind.as_str());
    Ok(EvaluatedSet {
        name: name.clone(),
        label,
        kind,
        scores,
        captions,
    })
}

/// Scores every set and computes all reports without writing anything.
pub fn evaluate(m: &ExperimentManifest) -> Result<(Vec<EvaluatedSet>, Vec<PairReport>, PairReport)> {
    m.validate()?;
    let res = Resources::load(m)?;
    let specs: Vec<(&SetSpec, SetLabel)> = std::iter::once((&m.in_set, SetLabel::In))
        .chain(m.ood_sets.iter().map(|s| (s, SetLabel::Out)))
        .collect();
    let sets: Vec<EvaluatedSet> = specs
        .par_iter()
        .map(|(spec, label)| evaluate_set(m, spec, *label, &res))
        .collect::<Result<_>>()?;

    let (in_set, ood) = sets.split_first().expect("in-distribution set is first");
    for s in ood {
        if s.kind != in_set.kind {
            return Err(CliError::MixedScoreKinds {
                set: s.name.clone(),
                kind: s.kind.as_str(),
                expected: in_set.kind.as_str(),
            });
        }
    }

    let in_scores: Vec<f64> = in_set.scores.iter().map(|s| s.score).collect();
    let pair = |out_set: &str, out_scores: Vec<f64>| -> Result<PairReport> {
        let g = ScoreGroup::new(in_scores.clone(), out_scores)?;
        let likelihood = in_set.kind == ScoreKind::Likelihood;
        Ok(PairReport {
            in_set: in_set.name.clone(),
            out_set: out_set.to_owned(),
            kind: in_set.kind,
            normalization: likelihood.then_some(m.score.normalization),
            include_eos: likelihood.then_some(m.score.include_eos),
            report: DetectionReport::compute(&g, m.metrics.bins)?,
        })
    };
    let per_set = ood
        .iter()
        .map(|s| pair(&s.name, s.scores.iter().map(|x| x.score).collect()))
        .collect::<Result<Vec<_>>>()?;
    let union: Vec<f64> = ood.iter().flat_map(|s| s.scores.iter().map(|x| x.score)).collect();
    let aggregate = pair(AGGREGATE, union)?;
    Ok((sets, per_set, aggregate))
}

/// Runs the whole protocol and writes, under the manifest's output
/// directory: per-set score (and caption) lines, `reports.jsonl`,
/// `report.csv`, histogram and ROC plots per comparison, and the optional
/// POS and caption-quality tables.
pub fn run_experiment(m: &ExperimentManifest) -> Result<ExperimentOutcome> {
    let (sets, per_set, aggregate) = evaluate(m)?;
    let files = write_outputs(m, &sets, &per_set, &aggregate)?;
    Ok(ExperimentOutcome {
        sets,
        per_set,
        aggregate,
        files,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_outputs(
    m: &ExperimentManifest,
    sets: &[EvaluatedSet],
    per_set: &[PairReport],
    aggregate: &PairReport,
) -> Result<Vec<PathBuf>> {
    let out = &m.output_dir;
    let mut files = Vec::new();
    create_dir(&out.join("scores"))?;
    for s in sets {
        let path = out.join("scores").join(format!("{}.jsonl", s.name));
        save_scores(&path, &s.scores)?;
        files.push(path);
        if let Some((caps, vocab)) = &s.captions {
            create_dir(&out.join("captions"))?;
            let path = out.join("captions").join(format!("{}.jsonl", s.name));
            save_records(&path, caps, vocab)?;
            files.push(path);
        }
    }

    let all: Vec<&PairReport> = per_set.iter().chain([aggregate]).collect();
    let path = out.join("reports.jsonl");
    let mut text = String::new();
    for r in &all {
        text.push_str(&serde_json::to_string(&r.line()).map_err(capscore_core::Error::from)?);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    files.push(path);

    let path = out.join("report.csv");
    write_report_csv(&path, &all)?;
    files.push(path);

    let in_set = &sets[0];
    let in_scores: Vec<f64> = in_set.scores.iter().map(|s| s.score).collect();
    let union: Vec<f64> = sets[1..].iter().flat_map(|s| s.scores.iter().map(|x| x.score)).collect();
    for r in &all {
        let out_scores = if r.out_set == AGGREGATE {
            union.clone()
        } else {
            let s = sets.iter().find(|s| s.name == r.out_set).expect("report per set");
            s.scores.iter().map(|x| x.score).collect()
        };
        let g = ScoreGroup::new(in_scores.clone(), out_scores)?;
        let plots = render_plots(&r.report, &g, &r.in_set, &r.out_set, &out.join("plots"), &r.out_set)?;
        files.extend([plots.histogram, plots.roc]);
    }

    if let Some(lex_path) = &m.lexicon {
        let lexicon = load_pos_lexicon(lex_path)?;
        let path = out.join("pos.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["set", "tag", "mean_prob", "count"])?;
        for s in sets {
            if let Some((caps, vocab)) = &s.captions {
                let profile = pos_profile(caps, vocab, &lexicon);
                for tag in PosTag::ALL {
                    let g = profile.get(tag);
                    if g.count > 0 {
                        w.write_record([s.name.as_str(), tag.as_str(), &format!("{:.4}", g.mean_prob), &g.count.to_string()])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }

    let with_refs: Vec<(&EvaluatedSet, &Path)> = m
        .sets()
        .zip(sets)
        .filter_map(|(spec, s)| spec.refs.as_deref().map(|r| (s, r)))
        .collect();
    if !with_refs.is_empty() {
        let path = out.join("quality.csv");
        let mut rows = Vec::new();
        for (s, refs_path) in with_refs {
            let Some((caps, vocab)) = &s.captions else {
                return Err(CliError::Manifest(format!("set `{}` has `refs` but no captions", s.name)));
            };
            let (bleu, rouge) = caption_quality(caps, vocab, refs_path)?;
            rows.push((s.name.clone(), bleu, rouge));
        }
        fs::write(&path, quality_csv(&rows)?).map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}

/// Caption-quality table, one row per `(set, BLEU-4, ROUGE-L)`. CIDEr is
/// not computed; its column is kept as `n/a`.
pub fn quality_csv(rows: &[(String, f64, f64)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["set", "BLEU-4", "ROUGE-L", "CIDEr"])?;
    for (set, bleu, rouge) in rows {
        w.write_record([set.as_str(), &format!("{bleu:.4}"), &format!("{rouge:.4}"), "n/a"])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("fields are UTF-8"))
}

/// Corpus BLEU-4 (smoothed) and mean ROUGE-L of captions against a
/// reference file.
pub fn caption_quality(caps: &[ScoredCaption], vocab: &Vocabulary, refs_path: &Path) -> Result<(f64, f64)> {
    let refs = load_references(refs_path)?;
    let cands = candidates_from(caps, vocab);
    Ok((bleu4(&cands, &refs, BleuConfig::default())?, rouge_l(&cands, &refs)?))
}

/// Rows are OOD sets (last row the union), columns the four metrics plus
/// the settings needed to compare runs.
fn write_report_csv(path: &Path, reports: &[&PairReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "ood_set", "ROC", "PRin", "PRout", "BD", "n_in", "n_out", "bins", "score", "normalization", "include_eos",
    ])?;
    for r in reports {
        let d = &r.report;
        w.write_record([
            r.out_set.clone(),
            format_metric(d.auroc),
            format_metric(d.pr_in),
            format_metric(d.pr_out),
            format_metric(d.bd),
            d.n_in.to_string(),
            d.n_out.to_string(),
            d.bins.to_string(),
            r.kind.as_str().to_owned(),
            r.normalization.map_or(String::new(), |n| n.to_string()),
            r.include_eos.map_or(String::new(), |b| b.to_string()),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Fixed-width text rendering of the report table.
pub fn format_table(per_set: &[PairReport], aggregate: &PairReport) -> String {
    let mut s = format!(
        "{:<20} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}\n",
        "ood_set", "ROC", "PRin", "PRout", "BD", "n_in", "n_out"
    );
    for r in per_set.iter().chain([aggregate]) {
        let d = &r.report;
        s.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}\n",
            r.out_set,
            format_metric(d.auroc),
            format_metric(d.pr_in),
            format_metric(d.pr_out),
            format_metric(d.bd),
            d.n_in,
            d.n_out
        ));
    }
    s
}

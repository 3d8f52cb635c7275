//! Experiment manifests: one in-distribution set, any number of OOD sets,
//! and the score, decoding and metric settings shared by all of them.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use capscore_core::corrupt::CorruptionSpec;
use capscore_core::detmetrics::DEFAULT_BINS;
use capscore_core::{DecodeConfig, ScoreConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Name of the union-of-OOD-sets row; not available for user sets.
pub const AGGREGATE: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub output_dir: PathBuf,
    /// Toy captioner used for `images` and `noise` sets.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Vocabulary for `records` sets; defaults to the model's.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    /// When present, a POS profile is written for every captioned set.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    pub in_set: SetSpec,
    pub ood_sets: Vec<SetSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Likelihood,
    Msp,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Likelihood => "likelihood",
            ScoreKind::Msp => "msp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub count: usize,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_side() -> u32 {
    64
}

/// One evaluation set. Exactly one of `records`, `scores`, `class_probs`,
/// `images` or `noise` names its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub name: String,
    /// Token-record lines.
    #[serde(default)]
    pub records: Option<PathBuf>,
    /// Precomputed score lines; `kind` says what they measure.
    #[serde(default)]
    pub scores: Option<PathBuf>,
    #[serde(default)]
    pub kind: Option<ScoreKind>,
    /// Classifier probability lines, scored with MSP.
    #[serde(default)]
    pub class_probs: Option<PathBuf>,
    /// Image directory, captioned by the toy model.
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// Applied to every image of an `images` set before captioning.
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Reference captions; enables the BLEU-4 / ROUGE-L table for this set.
    #[serde(default)]
    pub refs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetSource {
    Records(PathBuf),
    Scores(PathBuf, ScoreKind),
    ClassProbs(PathBuf),
    Images(PathBuf, Option<CorruptionSpec>),
    Noise(NoiseSpec),
}

impl SetSource {
    pub fn kind(&self) -> ScoreKind {
        match self {
            SetSource::Scores(_, k) => *k,
            SetSource::ClassProbs(_) => ScoreKind::Msp,
            _ => ScoreKind::Likelihood,
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, SetSource::Images(..) | SetSource::Noise(_))
    }
}

impl SetSpec {
    pub fn source(&self) -> Result<SetSource> {
        let bad = |msg: &str| CliError::Manifest(format!("set `{}`: {msg}", self.name));
        let given = [
            self.records.is_some(),
            self.scores.is_some(),
            self.class_probs.is_some(),
            self.images.is_some(),
            self.noise.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(bad("give exactly one of records, scores, class_probs, images, noise"));
        }
        if self.kind.is_some() && self.scores.is_none() {
            return Err(bad("`kind` only applies to `scores`"));
        }
        if self.corruption.is_some() && self.images.is_none() {
            return Err(bad("`corruption` only applies to `images`"));
        }
        Ok(if let Some(p) = &self.records {
            SetSource::Records(p.clone())
        } else if let Some(p) = &self.scores {
            SetSource::Scores(p.clone(), self.kind.unwrap_or_default())
        } else if let Some(p) = &self.class_probs {
            SetSource::ClassProbs(p.clone())
        } else if let Some(p) = &self.images {
            SetSource::Images(p.clone(), self.corruption)
        } else {
            SetSource::Noise(self.noise.expect("counted above"))
        })
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.records,
            &mut self.scores,
            &mut self.class_probs,
            &mut self.images,
            &mut self.refs,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl ExperimentManifest {
    /// Parses a TOML manifest; relative paths are taken from the manifest's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m = Self::parse(&text)?;
        m.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: ExperimentManifest = toml::from_str(text).map_err(|e| CliError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.model, &mut self.vocab, &mut self.lexicon].into_iter().flatten() {
            *p = base.join(&*p);
        }
        self.output_dir = base.join(&self.output_dir);
        self.in_set.resolve(base);
        for s in &mut self.ood_sets {
            s.resolve(base);
        }
    }

    pub fn sets(&self) -> impl Iterator<Item = &SetSpec> {
        std::iter::once(&self.in_set).chain(&self.ood_sets)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ood_sets.is_empty() {
            return Err(CliError::Manifest("at least one entry in `ood_sets` is required".into()));
        }
        if self.metrics.bins < 2 {
            return Err(CliError::Manifest(format!("metrics.bins must be at least 2, got {}", self.metrics.bins)));
        }
        self.decode.validate()?;
        let mut seen = HashSet::new();
        for s in self.sets() {
            if !valid_name(&s.name) {
                return Err(CliError::Manifest(format!(
                    "set name `{}` may only use letters, digits, `_`, `-` and `.`",
                    s.name
                )));
            }
            if s.name == AGGREGATE {
                return Err(CliError::Manifest(format!("set name `{AGGREGATE}` is reserved")));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::Manifest(format!("set name `{}` is used twice", s.name)));
            }
            let source = s.source()?;
            if let SetSource::Images(_, Some(c)) = &source {
                c.corruption.validate()?;
            }
            if let SetSource::Noise(n) = &source {
                if n.count == 0 || n.width == 0 || n.height == 0 {
                    return Err(CliError::Manifest(format!("set `{}`: noise needs positive count and size", s.name)));
                }
            }
            if s.refs.is_some() && !matches!(source, SetSource::Records(_) | SetSource::Images(..)) {
                return Err(CliError::Manifest(format!("set `{}`: `refs` needs captions (records or images)", s.name)));
            }
            if source.needs_model() && self.model.is_none() {
                return Err(CliError::Manifest(format!("set `{}` needs `model`", s.name)));
            }
            if matches!(source, SetSource::Records(_)) && self.model.is_none() && self.vocab.is_none() {
                return Err(CliError::Manifest(format!("set `{}` needs `vocab` or `model`", s.name)));
            }
        }
        Ok(())
    }
}

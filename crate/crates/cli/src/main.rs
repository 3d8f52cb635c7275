use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capscore_cli::experiment::{caption_quality, format_table, quality_csv};
use capscore_cli::imageset::{corrupt_tree, image_seed, load_images, noise_images};
use capscore_cli::manifest::NoiseSpec;
use capscore_cli::{run_experiment, CliError, ExperimentManifest, Result};
use capscore_core::corrupt::Corruption;
use capscore_core::records::{load_class_probs, load_records, load_scores, save_records, save_scores};
use capscore_core::score::{apply_threshold, caption_score, msp_score};
use capscore_core::toy::{
    caption_images, generate_world_with, toy_lexicon, toy_vocabulary, train_mle, Shape, ToyCaptioner, ToyDataset,
    TrainConfig, WorldConfig,
};
use capscore_core::{DecodeConfig, Normalization, SampleScore, ScoreConfig, SetLabel, Strategy, Vocabulary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "capscore", version, about = "Caption-likelihood out-of-distribution detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one corruption to every image under a directory.
    Corrupt(CorruptArgs),
    /// Generate a toy world: training, in-distribution test and held-out-shape sets.
    ToyGen(ToyGenArgs),
    /// Train the toy captioner on a generated dataset directory.
    ToyTrain(ToyTrainArgs),
    /// Caption an image directory with a toy model, writing token records.
    Decode(DecodeArgs),
    /// Turn token records or class probabilities into detector scores.
    Score(ScoreArgs),
    /// Apply a fixed threshold to scores: IN iff score >= T.
    Detect(DetectArgs),
    /// Run a manifest: per-set and aggregate reports, tables and plots.
    Report(ReportArgs),
    /// BLEU-4 / ROUGE-L of token records against reference captions.
    Quality(QualityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SaltPepper,
    Jpeg,
    Snow,
    Cartoon,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Salt-and-pepper pixel fraction.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// JPEG quality, 1-100.
    #[arg(long, default_value_t = 10)]
    quality: u8,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long, default_value_t = 2)]
    blur_radius: u32,
    #[arg(long, default_value_t = 0.2)]
    brightness_lift: f64,
    #[arg(long, default_value_t = 6)]
    levels: u32,
    #[arg(long, default_value_t = 3)]
    smooth_iters: u32,
    #[arg(long, default_value_t = 0.25)]
    edge_threshold: f64,
}

impl CorruptArgs {
    fn corruption(&self) -> Corruption {
        match self.kind {
            Kind::SaltPepper => Corruption::SaltPepper { p: self.p },
            Kind::Jpeg => Corruption::Jpeg { quality: self.quality },
            Kind::Snow => Corruption::Snow {
                density: self.density,
                blur_radius: self.blur_radius,
                brightness_lift: self.brightness_lift,
            },
            Kind::Cartoon => Corruption::Cartoon {
                levels: self.levels,
                smooth_iters: self.smooth_iters,
                edge_threshold: self.edge_threshold,
            },
        }
    }
}

#[derive(Args)]
struct ToyGenArgs {
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    /// Size of the held-out-shape set; defaults to --n-test.
    #[arg(long)]
    n_ood: Option<usize>,
    /// Shapes kept out of training, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "triangle")]
    holdout: Vec<Shape>,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write this many uniform-noise images to `noise/`.
    #[arg(long, default_value_t = 0)]
    noise: usize,
}

#[derive(Args)]
struct ToyTrainArgs {
    /// Dataset directory with images and `refs.jsonl`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    set_id: String,
    /// greedy, beam:K, topk:K or nucleus:P.
    #[arg(long, default_value = "greedy")]
    strategy: Strategy,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Label {
    In,
    Out,
}

impl From<Label> for SetLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::In => SetLabel::In,
            Label::Out => SetLabel::Out,
        }
    }
}

#[derive(Args)]
struct VocabArgs {
    /// Vocabulary file, one token per line.
    #[arg(long, conflicts_with = "model")]
    vocab: Option<PathBuf>,
    /// Toy model whose vocabulary to use.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl VocabArgs {
    fn load(&self) -> Result<Vocabulary> {
        match (&self.vocab, &self.model) {
            (Some(v), _) => Ok(Vocabulary::load(v)?),
            (None, Some(m)) => Ok(ToyCaptioner::load(m)?.vocab().clone()),
            (None, None) => Err(CliError::Usage("give --vocab or --model".into())),
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, required_unless_present = "class_probs", conflicts_with = "class_probs")]
    records: Option<PathBuf>,
    #[arg(long)]
    class_probs: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long, value_enum)]
    label: Label,
    /// Overrides the set id (required with --class-probs).
    #[arg(long)]
    set_id: Option<String>,
    #[arg(long, default_value = "sum")]
    normalization: Normalization,
    /// Leave the end marker's log-probability out of the score.
    #[arg(long)]
    exclude_eos: bool,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    threshold: f64,
    /// Per-sample decisions as JSON lines.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QualityArgs {
    #[arg(long)]
    refs: PathBuf,
    /// Token-record files; one row per set id.
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
    /// CSV destination; printed to stdout when absent.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn corrupt(a: CorruptArgs) -> Result<()> {
    let n = corrupt_tree(&a.input, &a.output, a.corruption(), a.seed)?;
    println!("wrote {n} corrupted images to {}", a.output.display());
    Ok(())
}

fn toy_gen(a: ToyGenArgs) -> Result<()> {
    let cfg = WorldConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        n_ood: a.n_ood,
        holdout_shapes: a.holdout,
        image_size: a.image_size,
        seed: a.seed,
    };
    let world = generate_world_with(&cfg)?;
    for (name, ds) in [
        ("train", &world.train),
        ("in_test", &world.in_test),
        ("ood_unknown", &world.ood_unknown),
    ] {
        ds.save(&a.output.join(name))?;
    }
    world.train.vocab.save(a.output.join("vocab.txt"))?;
    write_file(&a.output.join("lexicon.tsv"), &world.train.lexicon.to_tsv())?;
    let cfg_json = serde_json::to_string_pretty(&cfg).map_err(capscore_core::Error::from)?;
    write_file(&a.output.join("world.json"), &(cfg_json + "\n"))?;
    if a.noise > 0 {
        let spec = NoiseSpec {
            count: a.noise,
            width: a.image_size,
            height: a.image_size,
            seed: image_seed(a.seed, usize::MAX),
        };
        let dir = a.output.join("noise");
        fs::create_dir_all(&dir).map_err(|e| CliError::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (id, img) in noise_images(&spec) {
            img.save(dir.join(format!("{id}.png")))?;
        }
    }
    println!(
        "wrote {} training, {} test and {} held-out-shape scenes to {}",
        world.train.len(),
        world.in_test.len(),
        world.ood_unknown.len(),
        a.output.display()
    );
    Ok(())
}

fn toy_train(a: ToyTrainArgs) -> Result<()> {
    let ds = ToyDataset::load(&a.data, toy_vocabulary(), toy_lexicon())?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let trained = train_mle(&ds, &cfg)?;
    trained.model.save(&a.output)?;
    if let (Some(first), Some(last)) = (trained.trace.first(), trained.trace.last()) {
        println!("trained on {} scenes: mean token NLL {first:.4} -> {last:.4}", ds.len());
    }
    println!("model written to {}", a.output.display());
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let model = ToyCaptioner::load(&a.model)?;
    let cfg = DecodeConfig {
        strategy: a.strategy,
        max_len: a.max_len,
        seed: a.seed,
    };
    cfg.validate()?;
    let images = load_images(&a.images, None)?;
    let captions = caption_images(&model, &images, &a.set_id, &cfg)?;
    save_records(&a.output, &captions, model.vocab())?;
    println!("captioned {} images", captions.len());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let label = SetLabel::from(a.label);
    let scores: Vec<SampleScore> = if let Some(path) = &a.records {
        let vocab = a.vocab.load()?;
        let cfg = ScoreConfig {
            normalization: a.normalization,
            include_eos: !a.exclude_eos,
        };
        load_records(path, &vocab)?
            .iter()
            .map(|c| {
                let mut s = caption_score(c, &cfg, label)?;
                if let Some(id) = &a.set_id {
                    s.set_id = id.clone();
                }
                Ok(s)
            })
            .collect::<capscore_core::Result<_>>()?
    } else {
        let path = a.class_probs.as_ref().expect("clap requires one source");
        let set_id = a
            .set_id
            .as_deref()
            .ok_or_else(|| CliError::Usage("--set-id is required with --class-probs".into()))?;
        load_class_probs(path)?
            .iter()
            .map(|r| msp_score(r, set_id, label))
            .collect::<capscore_core::Result<_>>()?
    };
    save_scores(&a.output, &scores)?;
    println!("wrote {} scores", scores.len());
    Ok(())
}

#[derive(Serialize)]
struct DecisionLine<'a> {
    sample_id: &'a str,
    set_id: &'a str,
    score: f64,
    label: SetLabel,
    decision: SetLabel,
}

fn detect(a: DetectArgs) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let d = apply_threshold(&scores, a.threshold);
    let c = &d.confusion;
    println!("threshold {}: IN iff score >= threshold", a.threshold);
    println!(
        "TPR {:.4}  FPR {:.4}  TNR {:.4}  FNR {:.4}  (in accepted {}, in rejected {}, out accepted {}, out rejected {})",
        c.tpr(),
        c.fpr(),
        c.tnr(),
        c.fnr(),
        c.true_in,
        c.false_out,
        c.false_in,
        c.true_out
    );
    if let Some(out) = &a.output {
        let mut text = String::new();
        for (s, &decision) in scores.iter().zip(&d.decisions) {
            let line = DecisionLine {
                sample_id: &s.sample_id,
                set_id: &s.set_id,
                score: s.score,
                label: s.label,
                decision,
            };
            text.push_str(&serde_json::to_string(&line).map_err(capscore_core::Error::from)?);
            text.push('\n');
        }
        write_file(out, &text)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut m = ExperimentManifest::load(&a.manifest)?;
    if let Some(dir) = a.output_dir {
        m.output_dir = dir;
    }
    let outcome = run_experiment(&m)?;
    print!("{}", format_table(&outcome.per_set, &outcome.aggregate));
    println!("outputs in {}", m.output_dir.display());
    Ok(())
}

fn quality(a: QualityArgs) -> Result<()> {
    let vocab = a.vocab.load()?;
    let mut groups: Vec<(String, Vec<_>)> = Vec::new();
    for path in &a.records {
        for c in load_records(path, &vocab)? {
            match groups.iter_mut().find(|(id, _)| *id == c.set_id) {
                Some((_, caps)) => caps.push(c),
                None => groups.push((c.set_id.clone(), vec![c])),
            }
        }
    }
    let mut rows = Vec::new();
    for (set, caps) in &groups {
        let (bleu, rouge) = caption_quality(caps, &vocab, &a.refs)?;
        rows.push((set.clone(), bleu, rouge));
    }
    let text = quality_csv(&rows)?;
    match &a.output {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corrupt(a) => corrupt(a),
        Command::ToyGen(a) => toy_gen(a),
        Command::ToyTrain(a) => toy_train(a),
        Command::Decode(a) => decode(a),
        Command::Score(a) => score(a),
        Command::Detect(a) => detect(a),
        Command::Report(a) => report(a),
        Command::Quality(a) => quality(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

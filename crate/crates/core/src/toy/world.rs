//! Synthetic scenes of colored shapes with template captions.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::capmetrics::ReferenceSet;
use crate::corrupt::RasterImage;
use crate::error::{Error, Result};
use crate::pos::{PosLexicon, PosTag};
use crate::rng::SeededRng;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Bar,
    Cross,
    Ring,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Circle,
        Shape::Square,
        Shape::Bar,
        Shape::Cross,
        Shape::Ring,
        Shape::Triangle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Bar => "bar",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether offset `(dx, dy)` from the center lies inside a shape of
    /// half-extent `r`. Bars are horizontal unless `vertical`.
    pub(crate) fn contains(self, dx: f32, dy: f32, r: f32, vertical: bool) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        let t = r / 3.0;
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => ax <= 0.85 * r && ay <= 0.85 * r,
            Shape::Bar if vertical => ax <= t && ay <= r,
            Shape::Bar => ax <= r && ay <= t,
            Shape::Cross => (ax <= r && ay <= t) || (ay <= r && ax <= t),
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.25 * r * r
            }
            Shape::Triangle => ay <= r && ax <= (dy + r) / 2.0,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.word() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    White,
}

impl Color {
    pub const ALL: [Color; 5] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::White];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::White => "white",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 190, 60],
            Color::Blue => [50, 80, 230],
            Color::Yellow => [230, 215, 40],
            Color::White => [245, 245, 245],
        }
    }
}

/// Function words of the caption templates with their tags.
const FUNCTION_WORDS: [(&str, PosTag); 4] = [
    ("a", PosTag::Det),
    ("the", PosTag::Det),
    ("beside", PosTag::Adp),
    ("and", PosTag::Other),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyObject {
    pub shape: Shape,
    pub color: Color,
    pub cx: u32,
    pub cy: u32,
    /// Full extent in pixels.
    pub size: u32,
    pub vertical: bool,
}

impl ToyObject {
    fn bounds(&self) -> (i64, i64, i64, i64) {
        let h = i64::from(self.size / 2);
        let (cx, cy) = (i64::from(self.cx), i64::from(self.cy));
        (cx - h, cy - h, cx + h, cy + h)
    }

    fn overlaps(&self, other: &ToyObject, gap: i64) -> bool {
        let (ax0, ay0, ax1, ay1) = self.bounds();
        let (bx0, by0, bx1, by1) = other.bounds();
        ax0 <= bx1 + gap && bx0 <= ax1 + gap && ay0 <= by1 + gap && by0 <= ay1 + gap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScene {
    pub objects: Vec<ToyObject>,
    pub background: u8,
}

impl ToyScene {
    /// Objects in caption order: left to right, then top to bottom.
    pub fn ordered(&self) -> Vec<&ToyObject> {
        let mut objs: Vec<&ToyObject> = self.objects.iter().collect();
        objs.sort_by_key(|o| (o.cx, o.cy));
        objs
    }

    /// The two paraphrases: "a C S and a C S ..." and
    /// "the C S beside the C S ...".
    pub fn captions(&self) -> Vec<Vec<String>> {
        let objs = self.ordered();
        let mut listing = Vec::new();
        let mut relational = Vec::new();
        for (i, o) in objs.iter().enumerate() {
            if i > 0 {
                listing.push("and".to_owned());
                relational.push("beside".to_owned());
            }
            listing.extend(["a", o.color.word(), o.shape.word()].map(str::to_owned));
            relational.extend(["the", o.color.word(), o.shape.word()].map(str::to_owned));
        }
        vec![listing, relational]
    }

    pub fn render(&self, size: u32, grain_seed: u64) -> RasterImage {
        let bg = self.background;
        let mut img = RasterImage::filled(size, size, [bg, bg, bg]);
        for o in &self.objects {
            let r = o.size as f32 / 2.0;
            let (x0, y0, x1, y1) = o.bounds();
            for y in y0.max(0)..=y1.min(i64::from(size) - 1) {
                for x in x0.max(0)..=x1.min(i64::from(size) - 1) {
                    let dx = x as f32 - o.cx as f32;
                    let dy = y as f32 - o.cy as f32;
                    if o.shape.contains(dx, dy, r, o.vertical) {
                        img.put(x as u32, y as u32, o.color.rgb());
                    }
                }
            }
        }
        // Mild sensor grain so the pictures are not perfectly flat.
        let mut rng = SeededRng::new(grain_seed);
        for c in img.pixels_mut() {
            let delta = rng.below(13) as i16 - 6;
            *c = (i16::from(*c) + delta).clamp(0, 255) as u8;
        }
        img
    }
}

#[derive(Debug, Clone)]
pub struct ToySample {
    pub id: String,
    pub scene: ToyScene,
    pub image: RasterImage,
    pub captions: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub samples: Vec<ToySample>,
    pub vocab: Vocabulary,
    pub lexicon: PosLexicon,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn references(&self) -> ReferenceSet {
        self.samples.iter().map(|s| (s.id.clone(), s.captions.clone())).collect()
    }

    pub fn images(&self) -> Vec<(String, RasterImage)> {
        self.samples.iter().map(|s| (s.id.clone(), s.image.clone())).collect()
    }

    /// Writes `<id>.png` images plus `refs.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.samples {
            s.image.save(dir.join(format!("{}.png", s.id)))?;
        }
        crate::capmetrics::save_references(dir.join("refs.jsonl"), &self.references())
    }

    /// Reads a directory written by [`ToyDataset::save`].
    pub fn load(dir: &Path, vocab: Vocabulary, lexicon: PosLexicon) -> Result<Self> {
        let refs = crate::capmetrics::load_references(dir.join("refs.jsonl"))?;
        let mut samples = Vec::with_capacity(refs.len());
        for (id, captions) in refs {
            let image = RasterImage::load(dir.join(format!("{id}.png")))?;
            samples.push(ToySample {
                id,
                scene: ToyScene {
                    objects: Vec::new(),
                    background: 0,
                },
                image,
                captions,
            });
        }
        Ok(ToyDataset { samples, vocab, lexicon })
    }
}

pub fn toy_vocabulary() -> Vocabulary {
    let words: Vec<&str> = FUNCTION_WORDS
        .iter()
        .map(|(w, _)| *w)
        .chain(Color::ALL.iter().map(|c| c.word()))
        .chain(Shape::ALL.iter().map(|s| s.word()))
        .collect();
    Vocabulary::with_specials(&words).expect("static inventory is valid")
}

pub fn toy_lexicon() -> PosLexicon {
    let mut lex = PosLexicon::new();
    for (w, tag) in FUNCTION_WORDS {
        lex.insert(w, tag).expect("distinct");
    }
    for c in Color::ALL {
        lex.insert(c.word(), PosTag::Adj).expect("distinct");
    }
    for s in Shape::ALL {
        lex.insert(s.word(), PosTag::Noun).expect("distinct");
    }
    lex
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Size of the unknown-object set; defaults to `n_test`.
    pub n_ood: Option<usize>,
    pub holdout_shapes: Vec<Shape>,
    pub image_size: u32,
    pub seed: u64,
}

impl WorldConfig {
    pub fn new(n_train: usize, n_test: usize, holdout_shapes: &[Shape], seed: u64) -> Self {
        WorldConfig {
            n_train,
            n_test,
            n_ood: None,
            holdout_shapes: holdout_shapes.to_vec(),
            image_size: 64,
            seed,
        }
    }
}

/// Training set, in-distribution test set and unknown-object set.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub train: ToyDataset,
    pub in_test: ToyDataset,
    pub ood_unknown: ToyDataset,
}

pub fn generate_world(n_train: usize, n_test: usize, holdout_shapes: &[Shape], seed: u64) -> Result<ToyWorld> {
    generate_world_with(&WorldConfig::new(n_train, n_test, holdout_shapes, seed))
}

pub fn generate_world_with(cfg: &WorldConfig) -> Result<ToyWorld> {
    if cfg.n_train == 0 {
        return Err(Error::Config("n_train must be positive".into()));
    }
    if cfg.holdout_shapes.is_empty() {
        return Err(Error::Config("at least one held-out shape is required".into()));
    }
    let known: Vec<Shape> = Shape::ALL
        .into_iter()
        .filter(|s| !cfg.holdout_shapes.contains(s))
        .collect();
    if known.is_empty() {
        return Err(Error::Config("held-out shapes cover the whole inventory".into()));
    }
    if cfg.image_size < 32 {
        return Err(Error::Config("image_size must be at least 32".into()));
    }
    let holdout: Vec<Shape> = Shape::ALL
        .into_iter()
        .filter(|s| cfg.holdout_shapes.contains(s))
        .collect();

    let vocab = toy_vocabulary();
    let lexicon = toy_lexicon();
    let build = |stream: u64, prefix: &str, n: usize, required: &[Shape], allowed: &[Shape]| {
        let samples = (0..n)
            .map(|i| {
                let mut rng = SeededRng::derive(cfg.seed ^ stream.rotate_left(32), i as u64);
                let scene = random_scene(&mut rng, cfg.image_size, required, allowed);
                let image = scene.render(cfg.image_size, rng.next_u64());
                ToySample {
                    id: format!("{prefix}{i:05}"),
                    captions: scene.captions(),
                    scene,
                    image,
                }
            })
            .collect();
        ToyDataset {
            samples,
            vocab: vocab.clone(),
            lexicon: lexicon.clone(),
        }
    };
    Ok(ToyWorld {
        train: build(1, "train", cfg.n_train, &[], &known),
        in_test: build(2, "test", cfg.n_test, &[], &known),
        ood_unknown: build(3, "unknown", cfg.n_ood.unwrap_or(cfg.n_test), &holdout, &Shape::ALL),
    })
}

/// One to three non-overlapping objects; when `required` is non-empty the
/// first object takes one of those shapes.
fn random_scene(rng: &mut SeededRng, size: u32, required: &[Shape], allowed: &[Shape]) -> ToyScene {
    let count = rng.range_inclusive(1, 3) as usize;
    let background = rng.range_inclusive(30, 90) as u8;
    let (min_obj, max_obj) = (size * 7 / 32, size * 10 / 32);
    let mut objects: Vec<ToyObject> = Vec::with_capacity(count);
    for k in 0..count {
        let pool = if k == 0 && !required.is_empty() { required } else { allowed };
        let shape = pool[rng.below(pool.len() as u64) as usize];
        let color = Color::ALL[rng.below(Color::ALL.len() as u64) as usize];
        let vertical = rng.bernoulli(0.5);
        let obj_size = rng.range_inclusive(min_obj, max_obj);
        let half = obj_size / 2;
        for _attempt in 0..50 {
            let candidate = ToyObject {
                shape,
                color,
                cx: rng.range_inclusive(half + 1, size - half - 2),
                cy: rng.range_inclusive(half + 1, size - half - 2),
                size: obj_size,
                vertical,
            };
            if objects.iter().all(|o| !o.overlaps(&candidate, 2)) {
                objects.push(candidate);
                break;
            }
        }
    }
    ToyScene { objects, background }
}

//! Log-linear next-token captioner trained by maximum likelihood.
//!
//! `P(next | prefix, image) = softmax_next(W[prev][next] . f_s(image))` where
//! `prev` is the last token, `s` the number of objects the prefix has already
//! named (object-ending tokens seen so far) and `f_s` that object slot's fixed
//! feature vector from [`image_features`]. The begin and unknown markers are
//! never emitted.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::features::{image_features, ImageFeatures, FEATURE_COUNT, FEATURE_VERSION};
use super::world::ToyDataset;
use crate::corrupt::RasterImage;
use crate::decode::{decode, DecodeConfig, Decoded, DistributionProvider};
use crate::error::{Error, Result};
use crate::pos::{PosLexicon, PosTag};
use crate::records::ScoredCaption;
use crate::rng::SeededRng;
use crate::vocab::{TokenId, Vocabulary};

const MAGIC: &[u8; 8] = b"CAPSTOY\0";
const FORMAT_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCaptioner {
    vocab: Vocabulary,
    /// Tokens that finish naming an object and advance the slot.
    object_end: Vec<bool>,
    n_features: usize,
    /// Indexed `(prev * V + next) * F + feature`.
    weights: Vec<f64>,
}

impl ToyCaptioner {
    /// All-zero weights: uniform over the emittable tokens. Nouns in
    /// `lexicon` end an object.
    pub fn untrained(vocab: Vocabulary, lexicon: &PosLexicon) -> Self {
        let v = vocab.len();
        let object_end = vocab.tokens().iter().map(|t| lexicon.lookup(t) == PosTag::Noun).collect();
        ToyCaptioner {
            vocab,
            object_end,
            n_features: FEATURE_COUNT,
            weights: vec![0.0; v * v * FEATURE_COUNT],
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Object slot a prefix is describing.
    pub fn slot(&self, prefix: &[TokenId]) -> usize {
        prefix
            .iter()
            .filter(|&&t| self.object_end.get(t as usize).copied().unwrap_or(false))
            .count()
    }

    fn emittable(&self, id: usize) -> bool {
        id != self.vocab.bos() as usize && id != self.vocab.unk() as usize
    }

    fn block(&self, prev: TokenId, next: usize) -> &[f64] {
        let start = (prev as usize * self.vocab.len() + next) * self.n_features;
        &self.weights[start..start + self.n_features]
    }

    /// Next-token distribution after `prev` for an image with features `feats`.
    pub fn distribution(&self, prev: TokenId, feats: &[f64]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut logits = vec![f64::NEG_INFINITY; v];
        for (next, logit) in logits.iter_mut().enumerate() {
            if self.emittable(next) {
                *logit = self.block(prev, next).iter().zip(feats).map(|(w, x)| w * x).sum();
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        probs
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(64 + self.weights.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for tok in self.vocab.tokens() {
            buf.extend_from_slice(&(tok.len() as u32).to_le_bytes());
            buf.extend_from_slice(tok.as_bytes());
        }
        for id in [self.vocab.bos(), self.vocab.eos(), self.vocab.unk()] {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        buf.extend(self.object_end.iter().map(|&b| u8::from(b)));
        buf.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        buf.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let fv = r.u32()?;
        if fv != FEATURE_VERSION {
            return Err(Error::ModelFormat(format!(
                "model uses feature version {fv}, this build extracts version {FEATURE_VERSION}"
            )));
        }
        let n_tokens = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            tokens.push(
                String::from_utf8(raw.to_vec()).map_err(|_| Error::ModelFormat("token is not UTF-8".into()))?,
            );
        }
        let (bos, eos, unk) = (r.u32()?, r.u32()?, r.u32()?);
        let vocab = Vocabulary::new(tokens, bos, eos, unk)?;
        let object_end = r
            .take(vocab.len())?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::ModelFormat("bad object flag".into())),
            })
            .collect::<Result<Vec<bool>>>()?;
        let n_features = r.u32()? as usize;
        if n_features != FEATURE_COUNT {
            return Err(Error::ModelFormat(format!("expected {FEATURE_COUNT} features, found {n_features}")));
        }
        let n_weights = r.u64()? as usize;
        if n_weights != vocab.len() * vocab.len() * n_features {
            return Err(Error::ModelFormat("weight count does not match header".into()));
        }
        let mut weights = Vec::with_capacity(n_weights);
        for _ in 0..n_weights {
            weights.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        Ok(ToyCaptioner {
            vocab,
            object_end,
            n_features,
            weights,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl DistributionProvider for ToyCaptioner {
    type Context = ImageFeatures;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId], feats: &ImageFeatures) -> Vec<f64> {
        let prev = prefix.last().copied().unwrap_or(self.vocab.bos());
        self.distribution(prev, feats.slot(self.slot(prefix)))
    }
}

/// One supervised next-token prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEvent {
    pub image: usize,
    pub slot: usize,
    pub prev: TokenId,
    pub next: TokenId,
}

/// Features per image and every (prev, next) pair of every reference caption,
/// including the final transition to the end marker.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Vec<ImageFeatures>,
    pub events: Vec<TokenEvent>,
}

impl TrainingSet {
    /// Events for `model`'s vocabulary and slot rule.
    pub fn from_dataset(ds: &ToyDataset, model: &ToyCaptioner) -> Self {
        let vocab = model.vocab();
        let features = ds.samples.par_iter().map(|s| image_features(&s.image)).collect();
        let mut events = Vec::new();
        for (image, s) in ds.samples.iter().enumerate() {
            for caption in &s.captions {
                let mut prefix = vec![vocab.bos()];
                for tok in caption.iter().map(|t| vocab.id_or_unk(t)).chain([vocab.eos()]) {
                    events.push(TokenEvent {
                        image,
                        slot: model.slot(&prefix),
                        prev: *prefix.last().expect("non-empty"),
                        next: tok,
                    });
                    prefix.push(tok);
                }
            }
        }
        TrainingSet { features, events }
    }
}

impl ToyCaptioner {
    /// Adds `scale * d(-log p(next))/dW` for one event into `grad` and
    /// returns the event's negative log-likelihood.
    fn accumulate(&self, ev: &TokenEvent, feats: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let probs = self.distribution(ev.prev, feats);
        let v = self.vocab.len();
        let f = self.n_features;
        for (next, &p) in probs.iter().enumerate() {
            if !self.emittable(next) {
                continue;
            }
            let err = p - f64::from(u8::from(next == ev.next as usize));
            if err == 0.0 {
                continue;
            }
            let start = (ev.prev as usize * v + next) * f;
            for (g, x) in grad[start..start + f].iter_mut().zip(feats) {
                *g += scale * err * x;
            }
        }
        -probs[ev.next as usize].ln()
    }

    /// Mean negative log-likelihood over `set` and its exact gradient.
    pub fn loss_and_gradient(&self, set: &TrainingSet) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.weights.len()];
        let scale = 1.0 / set.events.len() as f64;
        let mut loss = 0.0;
        for ev in &set.events {
            loss += self.accumulate(ev, set.features[ev.image].slot(ev.slot), scale, &mut grad);
        }
        (loss * scale, grad)
    }

    pub fn mean_nll(&self, set: &TrainingSet) -> f64 {
        let total: f64 = set
            .events
            .iter()
            .map(|ev| -self.distribution(ev.prev, set.features[ev.image].slot(ev.slot))[ev.next as usize].ln())
            .sum();
        total / set.events.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.5,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ToyCaptioner,
    /// Mean training NLL seen during each epoch's pass.
    pub trace: Vec<f64>,
}

/// Minibatch gradient descent on the mean token cross-entropy, starting
/// from zero weights. Event order is reshuffled every epoch from `seed`.
pub fn train_mle(ds: &ToyDataset, cfg: &TrainConfig) -> Result<Trained> {
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let model = ToyCaptioner::untrained(ds.vocab.clone(), &ds.lexicon);
    let set = TrainingSet::from_dataset(ds, &model);
    train_on(model, &set, cfg)
}

pub fn train_on(mut model: ToyCaptioner, set: &TrainingSet, cfg: &TrainConfig) -> Result<Trained> {
    let v = model.vocab.len();
    let block = v * model.n_features;
    let mut grad = vec![0.0; model.weights.len()];
    let mut order: Vec<usize> = (0..set.events.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        SeededRng::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut touched: Vec<TokenId> = Vec::with_capacity(batch.len());
            for &i in batch {
                let ev = &set.events[i];
                epoch_loss += model.accumulate(ev, set.features[ev.image].slot(ev.slot), scale, &mut grad);
                touched.push(ev.prev);
            }
            touched.sort_unstable();
            touched.dedup();
            for &prev in &touched {
                let range = prev as usize * block..(prev as usize + 1) * block;
                for (w, g) in model.weights[range.clone()].iter_mut().zip(&mut grad[range]) {
                    *w -= cfg.lr * *g;
                    *g = 0.0;
                }
            }
        }
        let mean = epoch_loss / set.events.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: mean nll {mean:.5}");
        trace.push(mean);
    }
    Ok(Trained { model, trace })
}

pub fn caption_image(model: &ToyCaptioner, img: &RasterImage, cfg: &DecodeConfig) -> Result<Decoded> {
    decode(model, &image_features(img), cfg)
}

/// Captions every image in parallel. Sampling strategies use a per-image
/// seed derived from `cfg.seed` and the image's position.
pub fn caption_images(
    model: &ToyCaptioner,
    images: &[(String, RasterImage)],
    set_id: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<ScoredCaption>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, (id, img))| {
            let per_image = DecodeConfig {
                seed: SeededRng::derive(cfg.seed, i as u64).next_u64(),
                ..cfg.clone()
            };
            Ok(caption_image(model, img, &per_image)?.into_caption(id.clone(), set_id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::world::{generate_world, toy_lexicon, toy_vocabulary, Shape};

    #[test]
    fn untrained_is_uniform_over_emittable_tokens() {
        let m = ToyCaptioner::untrained(toy_vocabulary(), &toy_lexicon());
        let d = m.distribution(0, &[0.3; FEATURE_COUNT]);
        let v = m.vocab().len();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[2], 0.0);
        for (i, p) in d.iter().enumerate() {
            if i != 0 && i != 2 {
                assert!((p - 1.0 / (v - 2) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_roundtrip_and_corruption() {
        let w = generate_world(10, 1, &[Shape::Triangle], 1).unwrap();
        let trained = train_mle(
            &w.train,
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        trained.model.save(&path).unwrap();
        assert_eq!(ToyCaptioner::load(&path).unwrap(), trained.model);

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(ToyCaptioner::load(&path), Err(Error::ModelFormat(_))));
        fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(matches!(ToyCaptioner::load(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let w = generate_world(20, 1, &[Shape::Triangle], 2).unwrap();
        let t = train_mle(
            &w.train,
            &TrainConfig {
                epochs: 3,
                lr: 0.0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(t.trace.windows(2).all(|p| (p[0] - p[1]).abs() < 1e-12), "{:?}", t.trace);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut w = generate_world(1, 1, &[Shape::Triangle], 2).unwrap();
        w.train.samples.clear();
        assert!(train_mle(&w.train, &TrainConfig::default()).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let w = generate_world(30, 1, &[Shape::Triangle], 2).unwrap();
        let got = train_mle(
            &w.train,
            &TrainConfig {
                epochs: 5,
                lr: 1e300,
                ..TrainConfig::default()
            },
        );
        assert!(matches!(got, Err(Error::Diverged { .. })), "{got:?}");
    }
}

use capscore_core::decode::{decode_greedy, DistributionProvider};
use capscore_core::rng::SeededRng;
use capscore_core::toy::{
    generate_world, image_features, train_mle, train_on, Shape, ToyCaptioner, ToyDataset, TrainConfig, TrainingSet,
    FEATURE_COUNT, MAX_SLOTS,
};
use capscore_core::{toy, TokenId};
use proptest::prelude::*;

fn small_world(n_train: usize, seed: u64) -> toy::ToyWorld {
    generate_world(n_train, 20, &[Shape::Triangle], seed).unwrap()
}

/// Probability the model assigns to each token of `caption` (and the end
/// marker) under teacher forcing.
fn forced_probs(model: &ToyCaptioner, feats: &toy::ImageFeatures, caption: &[String]) -> Vec<f64> {
    let vocab = model.vocab();
    let mut prefix = vec![vocab.bos()];
    let mut out = Vec::new();
    for tok in caption.iter().map(|t| vocab.id(t).unwrap()).chain([vocab.eos()]) {
        out.push(model.next_distribution(&prefix, feats)[tok as usize]);
        prefix.push(tok);
    }
    out
}

fn random_weights(model: &mut ToyCaptioner, seed: u64, scale: f64) {
    let mut rng = SeededRng::new(seed);
    for w in model.weights_mut() {
        *w = scale * (2.0 * rng.next_f64() - 1.0);
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let w = small_world(12, 5);
    let mut model = ToyCaptioner::untrained(w.train.vocab.clone(), &w.train.lexicon);
    random_weights(&mut model, 17, 0.3);
    let set = TrainingSet::from_dataset(&w.train, &model);
    let (_, grad) = model.loss_and_gradient(&set);

    // Only coordinates whose predecessor token occurs in the data can move the loss.
    let v = model.vocab().len();
    let mut used: Vec<TokenId> = set.events.iter().map(|e| e.prev).collect();
    used.sort_unstable();
    used.dedup();

    let mut rng = SeededRng::new(99);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let prev = used[rng.below(used.len() as u64) as usize] as usize;
        let next = rng.below(v as u64) as usize;
        let feat = rng.below(FEATURE_COUNT as u64) as usize;
        let idx = (prev * v + next) * FEATURE_COUNT + feat;

        let orig = model.weights()[idx];
        model.weights_mut()[idx] = orig + h;
        let up = model.mean_nll(&set);
        model.weights_mut()[idx] = orig - h;
        let down = model.mean_nll(&set);
        model.weights_mut()[idx] = orig;

        let numeric = (up - down) / (2.0 * h);
        let denom = grad[idx].abs().max(numeric.abs()).max(1e-7);
        let rel = (grad[idx] - numeric).abs() / denom;
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn memorizes_a_single_image() {
    let w = small_world(1, 8);
    let mut ds = w.train.clone();
    ds.samples[0].captions.truncate(1);
    let target = ds.samples[0].captions[0].clone();

    let trained = train_mle(&ds, &TrainConfig { epochs: 200, lr: 0.5, batch_size: 4, seed: 1 }).unwrap();
    let feats = image_features(&ds.samples[0].image);
    let probs = forced_probs(&trained.model, &feats, &target);
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    assert!(mean > 0.9, "mean token probability {mean}");

    let out = decode_greedy(&trained.model, &feats, 16).unwrap();
    let words: Vec<&str> = out.tokens.iter().filter_map(|t| trained.model.vocab().token(t.token_id)).collect();
    let mut expected: Vec<&str> = target.iter().map(String::as_str).collect();
    expected.push("</s>");
    assert_eq!(words, expected);
}

#[test]
fn untrained_probabilities_are_near_uniform() {
    let w = small_world(4, 2);
    let model = ToyCaptioner::untrained(w.train.vocab.clone(), &w.train.lexicon);
    let inv_v = 1.0 / model.vocab().len() as f64;
    for s in &w.train.samples {
        let feats = image_features(&s.image);
        for p in forced_probs(&model, &feats, &s.captions[0]) {
            assert!(p > inv_v / 10.0 && p < inv_v * 10.0, "{p} vs 1/|V| = {inv_v}");
        }
    }
}

#[test]
fn small_steps_decrease_training_loss_every_epoch() {
    let w = small_world(100, 4);
    let mut model = ToyCaptioner::untrained(w.train.vocab.clone(), &w.train.lexicon);
    let set = TrainingSet::from_dataset(&w.train, &model);
    let mut last = model.mean_nll(&set);
    for epoch in 0..5 {
        let cfg = TrainConfig { epochs: 1, lr: 0.01, batch_size: 16, seed: epoch };
        model = train_on(model, &set, &cfg).unwrap().model;
        let now = model.mean_nll(&set);
        assert!(now < last, "epoch {epoch}: {now} >= {last}");
        last = now;
    }
}

#[test]
fn training_is_deterministic() {
    let w = small_world(30, 6);
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let a = train_mle(&w.train, &cfg).unwrap();
    let b = train_mle(&w.train, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn world_generation_is_reproducible_and_respects_holdout() {
    let a = small_world(40, 11);
    let b = small_world(40, 11);
    let ids = |ds: &ToyDataset| ds.samples.iter().map(|s| (s.id.clone(), s.captions.clone())).collect::<Vec<_>>();
    assert_eq!(ids(&a.train), ids(&b.train));
    for (x, y) in a.train.samples.iter().zip(&b.train.samples) {
        assert_eq!(x.image, y.image);
    }
    let mentions = |ds: &ToyDataset| {
        ds.samples
            .iter()
            .filter(|s| s.captions.iter().flatten().any(|t| t == "triangle"))
            .count()
    };
    assert_eq!(mentions(&a.train), 0);
    assert_eq!(mentions(&a.in_test), 0);
    assert_eq!(mentions(&a.ood_unknown), a.ood_unknown.len());
}

#[test]
fn dataset_directory_roundtrip() {
    let w = small_world(5, 3);
    let dir = tempfile::tempdir().unwrap();
    w.train.save(dir.path()).unwrap();
    let back = ToyDataset::load(dir.path(), w.train.vocab.clone(), w.train.lexicon.clone()).unwrap();
    assert_eq!(back.references(), w.train.references());
    for (x, y) in back.samples.iter().zip(&w.train.samples) {
        assert_eq!(x.image, y.image);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributions_are_normalized(
        wseed in any::<u64>(),
        scale in 0.0f64..5.0,
        slots in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, FEATURE_COUNT), 1..=MAX_SLOTS),
        prefix in prop::collection::vec(0u32..20, 0..8),
    ) {
        let mut model = ToyCaptioner::untrained(toy::toy_vocabulary(), &toy::toy_lexicon());
        random_weights(&mut model, wseed, scale);
        let v = model.vocab().len() as TokenId;
        let feats = toy::ImageFeatures::from_slots(slots);
        let mut full = vec![model.vocab().bos()];
        full.extend(prefix.iter().map(|t| t % v));
        let d = model.next_distribution(&full, &feats);
        prop_assert_eq!(d.len(), v as usize);
        prop_assert!(d.iter().all(|p| p.is_finite() && *p >= 0.0));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(d[model.vocab().bos() as usize], 0.0);
        prop_assert_eq!(d[model.vocab().unk() as usize], 0.0);
    }
}

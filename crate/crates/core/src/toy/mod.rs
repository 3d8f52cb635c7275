//! A self-contained captioning world: synthetic scenes, reference captions
//! and a small captioner trained by maximum likelihood.

mod features;
mod model;
mod world;

pub use features::{image_features, ImageFeatures, FEATURE_COUNT, FEATURE_VERSION, MAX_SLOTS};
pub use model::{
    caption_image, caption_images, train_mle, train_on, TokenEvent, ToyCaptioner, Trained, TrainConfig, TrainingSet,
};
pub use world::{
    generate_world, generate_world_with, toy_lexicon, toy_vocabulary, Color, Shape, ToyDataset, ToyObject,
    ToySample, ToyScene, ToyWorld, WorldConfig,
};

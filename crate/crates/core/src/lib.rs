//! Likelihood-based out-of-distribution detection for image captioning.
//!
//! A generated caption's log-likelihood is used as a detector score: images
//! unlike the training data tend to get less likely captions. The crate
//! covers the whole evaluation loop:
//!
//! * [`records`]: token-record, class-probability and score line formats
//! * [`decode`]: greedy, beam, top-K and nucleus decoding over any
//!   [`decode::DistributionProvider`]
//! * [`score`]: caption likelihood, max class probability, thresholding and
//!   part-of-speech probability profiles
//! * [`detmetrics`]: AUROC, AUPR (either class positive), Bhattacharyya distance
//! * [`capmetrics`]: BLEU-4 and ROUGE-L
//! * [`corrupt`]: salt-and-pepper, JPEG, snow and cartoon corruptions, noise images
//! * [`toy`]: a synthetic captioning world with a trainable captioner

pub mod capmetrics;
pub mod corrupt;
pub mod decode;
pub mod detmetrics;
mod error;
pub mod pos;
pub mod records;
pub mod rng;
pub mod score;
pub mod toy;
pub mod vocab;

pub use decode::{DecodeConfig, DistributionProvider, Strategy};
pub use detmetrics::{DetectionReport, ScoreGroup};
pub use error::{Error, Result};
pub use pos::{PosLexicon, PosTag};
pub use records::{ClassProbRecord, SampleScore, ScoredCaption, SetLabel, TokenRecord};
pub use score::{Normalization, ScoreConfig};
pub use vocab::{TokenId, Vocabulary};

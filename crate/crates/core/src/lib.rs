//! Position bias in extractive question answering.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`corpus`]: SQuAD / MRQA ingestion, tokenization, sentence splitting,
//!   answer alignment and the passage transformations (first-sentence
//!   truncation, sentence shuffling, length truncation).
//! * [`bias_stats`]: biased subsets `D^k`, answer-position histograms and the
//!   word-level / sentence-level answer priors.
//! * [`ensemble`]: log-softmax numerics, bias product, learned-mixin and its
//!   gate, entropy regularization, randomized positions.
//! * [`model`]: a small span-extraction reader with hand-written gradients.
//! * [`eval`]: EM/F1 scoring, bucketed reports and sentence-wise heatmaps.
//! * [`analysis`]: cosine word-information curves and Spearman diagnostics.
//! * [`synth`]: marker-question synthetic corpora.

pub mod analysis;
pub mod bias_stats;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;

pub use bias_stats::{AnswerPrior, PositionHistogram, SentenceLevelPrior, WordLevelPrior};
pub use config::{Objective, PriorTransform, Target, TrainConfig};
pub use corpus::{Answer, Dataset, Example, Sentence, Token};
pub use ensemble::{MixinHead, SpanDistribution};
pub use error::{Error, Result};
pub use eval::{EvalReport, HeatmapMatrix, SpanPredictor};
pub use model::{HiddenStates, ModelParams, TrainedModel};
pub use synth::{AnswerPlacement, SyntheticSpec};

/// Derives an independent stream seed from a base seed and a counter.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

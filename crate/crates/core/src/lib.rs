//! Streaming two-pass transducer decoding engine.
//!
//! A causal (first-pass) and a non-causal (second-pass) encoder output stream
//! are decoded by a single shared decoder: a stateless embedding prediction
//! network feeding a HAT-factorized joint layer. Beam search supports
//! shallow-fusion contextual biasing; n-best lists can be rescored with an
//! external causal LM and internal-LM subtraction. The `streaming` module
//! simulates the parallel two-pass timeline with endpointing and hybrid
//! prefetching.
//!
//! All probabilities are carried in natural-log domain end to end.

pub mod biasing;
pub mod decoder;
pub mod error;
pub mod fixture;
pub mod io;
pub mod joint;
pub mod lm;
pub mod logprob;
pub mod metrics;
pub mod model;
pub mod prediction;
pub mod streaming;

pub use decoder::{BeamConfig, FusionWeights, Hypothesis, NBestList, Pass, ScoreBreakdown};
pub use error::{Error, Result};
pub use logprob::{log_sum_exp, LogProb};
pub use model::{EncoderOutputs, ModelParams, Vocab};

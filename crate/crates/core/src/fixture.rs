//! Deterministic fixture generation.
//!
//! All randomness in the project lives here, behind a seed; the decoding
//! engine itself contains none. The scripted helpers build models whose
//! frame vectors force a chosen emission per frame, which is what the
//! streaming and CLI scenario tests are built from.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::joint::JointParams;
use crate::lm::{NGramEntry, NGramLm};
use crate::model::{EncoderOutputs, ModelParams, Vocab};
use crate::prediction::PredictionNetParams;

pub const MAX_VOCAB: usize = 16;
pub const MAX_FRAMES: usize = 32;

/// Dimensions for generated fixtures. Deliberately desk-scale.
#[derive(Debug, Clone, Copy)]
pub struct FixtureDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub enc_dim: usize,
    pub num_heads: usize,
    pub context_size: usize,
    pub frames: usize,
    pub right_context: usize,
}

impl Default for FixtureDims {
    fn default() -> Self {
        FixtureDims {
            vocab_size: 4,
            embed_dim: 4,
            enc_dim: 4,
            num_heads: 2,
            context_size: 3,
            frames: 8,
            right_context: 1,
        }
    }
}

impl FixtureDims {
    /// Smallest useful shape for oracle tests: |V| tokens, 2-dim everything,
    /// a handful of frames.
    pub fn tiny(vocab_size: usize) -> Self {
        FixtureDims {
            vocab_size,
            embed_dim: 2,
            enc_dim: 2,
            num_heads: 1,
            context_size: 2,
            frames: 3,
            right_context: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.vocab_size > MAX_VOCAB {
            return Err(Error::Validation(format!(
                "fixture vocab_size must be in 1..={MAX_VOCAB}, got {}",
                self.vocab_size
            )));
        }
        if self.frames == 0 || self.frames > MAX_FRAMES {
            return Err(Error::Validation(format!(
                "fixture frames must be in 1..={MAX_FRAMES}, got {}",
                self.frames
            )));
        }
        if self.embed_dim == 0 || self.enc_dim == 0 || self.num_heads == 0 || self.context_size == 0
        {
            return Err(Error::Validation("fixture dims must be >= 1".into()));
        }
        Ok(())
    }
}

// Independent ChaCha streams keep the four artifacts decoupled: regenerating
// one with the same seed never shifts the others.
const STREAM_MODEL: u64 = 0;
const STREAM_ENCODER: u64 = 1;
const STREAM_LM: u64 = 2;
const STREAM_BIAS: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit_variance(rng: &mut ChaCha8Rng) -> f64 {
    let bound = 3.0f64.sqrt();
    rng.gen_range(-bound..bound)
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * unit_variance(rng))
}

fn token_name(id: usize) -> String {
    // Single letters up to MAX_VOCAB tokens.
    char::from(b'a' + id as u8).to_string()
}

pub fn fixture_vocab(vocab_size: usize) -> Vocab {
    Vocab::new((0..vocab_size).map(token_name).collect()).expect("generated vocab is valid")
}

/// Seeded random model. The position vectors are sampled once from a
/// unit-variance distribution and stored in the file, never resampled.
pub fn generate_model(seed: u64, dims: &FixtureDims) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = rng_for(seed, STREAM_MODEL);
    let d_e = dims.embed_dim;
    let embedding = matrix(&mut rng, dims.vocab_size, d_e, 0.6);
    let position_vectors = Array3::from_shape_fn((dims.num_heads, dims.context_size, d_e), |_| {
        unit_variance(&mut rng)
    });
    let projection = matrix(&mut rng, d_e, d_e, 0.5);
    let bias = Array1::from_shape_fn(d_e, |_| 0.25 * unit_variance(&mut rng));
    let enc_proj = matrix(&mut rng, dims.enc_dim, d_e, 0.5);
    let pred_proj = matrix(&mut rng, d_e, d_e, 0.5);
    let joint_bias = Array1::from_shape_fn(d_e, |_| 0.25 * unit_variance(&mut rng));
    let blank_row = Array1::from_shape_fn(d_e, |_| 0.6 * unit_variance(&mut rng));
    ModelParams::new(
        fixture_vocab(dims.vocab_size),
        PredictionNetParams {
            embedding,
            position_vectors,
            projection,
            bias,
        },
        JointParams {
            enc_proj,
            pred_proj,
            bias: joint_bias,
            blank_row,
        },
    )
}

/// Seeded encoder outputs. The non-causal frames are a perturbed refinement
/// of the causal ones, so the two passes usually agree but not always.
pub fn generate_encoder_outputs(seed: u64, dims: &FixtureDims) -> Result<EncoderOutputs> {
    dims.validate()?;
    let mut rng = rng_for(seed, STREAM_ENCODER);
    let causal = matrix(&mut rng, dims.frames, dims.enc_dim, 1.0);
    let noise = matrix(&mut rng, dims.frames, dims.enc_dim, 0.4);
    let noncausal = &causal + &noise;
    EncoderOutputs::new(causal, noncausal, dims.right_context)
}

/// Seeded order-2 backoff LM over the fixture vocabulary plus end of
/// sequence. Built so every context's probabilities close to one exactly:
/// explicit bigrams carry mass m and the backoff weight is
/// `(1-m) / (1 - Σ covered unigrams)`.
pub fn generate_ngram_lm(seed: u64, dims: &FixtureDims) -> Result<NGramLm> {
    dims.validate()?;
    let mut rng = rng_for(seed, STREAM_LM);
    let v = dims.vocab_size;
    let symbols = v + 1; // tokens plus end-of-sequence

    let mut raw: Vec<f64> = (0..symbols).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    for x in &mut raw {
        *x /= total;
    }
    let unigram = raw;

    let mut entries: HashMap<Vec<u32>, NGramEntry> = HashMap::new();
    for (sym, &p) in unigram.iter().enumerate() {
        entries.insert(
            vec![sym as u32],
            NGramEntry {
                log_prob: p.ln(),
                backoff: None,
            },
        );
    }

    for ctx in 0..v as u32 {
        if !rng.gen_bool(0.75) {
            continue;
        }
        let covered: Vec<u32> = {
            let count = rng.gen_range(1..=2.min(symbols));
            let mut picked = Vec::new();
            while picked.len() < count {
                let sym = rng.gen_range(0..symbols) as u32;
                if !picked.contains(&sym) {
                    picked.push(sym);
                }
            }
            picked.sort_unstable();
            picked
        };
        let mass: f64 = rng.gen_range(0.3..0.7);
        let weights: Vec<f64> = covered.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        let covered_unigram: f64 = covered.iter().map(|&s| unigram[s as usize]).sum();
        let backoff = ((1.0 - mass) / (1.0 - covered_unigram)).ln();
        for (&sym, &w) in covered.iter().zip(&weights) {
            entries.insert(
                vec![ctx, sym],
                NGramEntry {
                    log_prob: (mass * w / wsum).ln(),
                    backoff: None,
                },
            );
        }
        let slot = entries.get_mut(&vec![ctx]).expect("unigram exists");
        slot.backoff = Some(backoff);
    }

    NGramLm::new(2, v, entries)
}

/// Seeded biasing phrases: a few short token-id sequences.
pub fn generate_bias_phrases(seed: u64, dims: &FixtureDims) -> Result<Vec<Vec<u32>>> {
    dims.validate()?;
    let mut rng = rng_for(seed, STREAM_BIAS);
    let count = rng.gen_range(2..=4);
    let mut phrases = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.gen_range(1..=3);
        let phrase: Vec<u32> = (0..len)
            .map(|_| rng.gen_range(0..dims.vocab_size as u32))
            .collect();
        phrases.push(phrase);
    }
    Ok(phrases)
}

/// Paths of one generated fixture set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FixturePaths {
    pub model: PathBuf,
    pub encoder: PathBuf,
    pub lm: PathBuf,
    pub bias: PathBuf,
}

/// Generates and writes the full fixture set (model, encoder outputs,
/// n-gram LM, biasing phrases) under `dir`. Same seed, same bytes.
pub fn write_fixture_set(seed: u64, dims: &FixtureDims, dir: &Path) -> Result<FixturePaths> {
    let params = generate_model(seed, dims)?;
    let enc = generate_encoder_outputs(seed, dims)?;
    let lm = generate_ngram_lm(seed, dims)?;
    let phrases = generate_bias_phrases(seed, dims)?;

    let paths = FixturePaths {
        model: dir.join("model.txt"),
        encoder: dir.join("encoder.txt"),
        lm: dir.join("lm.txt"),
        bias: dir.join("bias.txt"),
    };
    io::save_model(&params, &paths.model)?;
    io::save_encoder_outputs(&enc, &paths.encoder)?;
    lm.save(&paths.lm)?;

    let mut bias_text = String::new();
    for phrase in &phrases {
        bias_text.push_str(&params.vocab.render(phrase));
        bias_text.push('\n');
    }
    std::fs::write(&paths.bias, bias_text).map_err(|source| Error::Io {
        path: paths.bias.clone(),
        source,
    })?;
    Ok(paths)
}

/// Per-frame emission script for deterministic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameScript {
    /// The frame forces label `y` (blank mass 0 on this frame).
    Emit(u32),
    /// The frame forces blank (blank mass 1).
    Silence,
}

/// Maximum labels a script may emit; the prediction-side emission counter
/// is linear only up to the context window.
pub const MAX_SCRIPT_LABELS: usize = 8;

/// A model that decodes `scripted_frames` scripts exactly.
///
/// Layout: dims `0..|V|` are one-hot label codes, dim `|V|` is an emission
/// counter, dim `|V|+1` is a constant bias unit. Each frame encodes which
/// label it wants (driving the label softmax through saturated tanh) and
/// how many labels the script expects so far; the prediction network
/// counts the labels actually emitted. The blank logit reads the count
/// difference: matched paths get blank probability exactly 1.0, paths that
/// still owe a label exactly 0.0 (the saturation magnitudes are chosen so
/// the sigmoids underflow). The forced path's posterior is within ~1e-8 of
/// log 1 while every deviating path loses hundreds of nats.
pub fn scripted_model(vocab_size: usize) -> ModelParams {
    assert!((1..=MAX_VOCAB).contains(&vocab_size));
    let count = vocab_size;
    let bias_unit = vocab_size + 1;
    let d = vocab_size + 2;
    let n = MAX_SCRIPT_LABELS;

    let mut embedding = Array2::zeros((vocab_size, d));
    for y in 0..vocab_size {
        embedding[[y, y]] = 20.0;
        embedding[[y, count]] = 1.0;
    }

    // r[count] = swish(60 * emitted / N) ~= 7.5 * emitted.
    let mut projection = Array2::zeros((d, d));
    projection[[count, count]] = 60.0;

    let mut enc_proj = Array2::zeros((d, d));
    for y in 0..vocab_size {
        enc_proj[[y, y]] = 40.0;
    }
    // h[count] = tanh(5 * r[count] - 37.5 * expected): ~0 on match, +-1 off.
    enc_proj[[count, count]] = 37.5;
    let mut pred_proj = Array2::zeros((d, d));
    pred_proj[[count, count]] = 5.0;

    let mut joint_bias = Array1::zeros(d);
    joint_bias[bias_unit] = 40.0;

    let mut blank_row = Array1::zeros(d);
    blank_row[count] = 2400.0;
    blank_row[bias_unit] = 800.0;

    ModelParams::new(
        fixture_vocab(vocab_size),
        PredictionNetParams {
            embedding,
            position_vectors: Array3::ones((1, n, d)),
            projection,
            bias: Array1::zeros(d),
        },
        JointParams {
            enc_proj,
            pred_proj,
            bias: joint_bias,
            blank_row,
        },
    )
    .expect("scripted model is valid")
}

/// Frame matrix matching `scripted_model`: emission frames point at their
/// label; every frame carries the negated cumulative expected-label count.
pub fn scripted_frames(script: &[FrameScript], vocab_size: usize) -> Array2<f64> {
    let d = vocab_size + 2;
    let mut frames = Array2::zeros((script.len(), d));
    let mut expected = 0usize;
    for (t, step) in script.iter().enumerate() {
        if let FrameScript::Emit(y) = *step {
            assert!((y as usize) < vocab_size, "scripted label out of range");
            expected += 1;
            frames[[t, y as usize]] = 1.0;
        }
        frames[[t, vocab_size]] = -(expected as f64);
    }
    assert!(
        expected <= MAX_SCRIPT_LABELS,
        "scripts may emit at most {MAX_SCRIPT_LABELS} labels"
    );
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::hat_scores;
    use crate::prediction::{predict, LabelHistory};

    #[test]
    fn same_seed_reproduces_identical_fixtures() {
        let dims = FixtureDims::default();
        let a = generate_model(1, &dims).unwrap();
        let b = generate_model(1, &dims).unwrap();
        assert_eq!(a, b);
        let c = generate_model(2, &dims).unwrap();
        assert_ne!(a.prediction.embedding, c.prediction.embedding);
    }

    #[test]
    fn oversized_dims_are_refused() {
        let dims = FixtureDims {
            vocab_size: 17,
            ..FixtureDims::default()
        };
        assert!(generate_model(1, &dims).is_err());
        let dims = FixtureDims {
            frames: 33,
            ..FixtureDims::default()
        };
        assert!(generate_encoder_outputs(1, &dims).is_err());
    }

    #[test]
    fn generated_model_round_trips_through_files() {
        let dims = FixtureDims::default();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture_set(5, &dims, dir.path()).unwrap();
        let loaded = io::load_model(&paths.model).unwrap();
        assert_eq!(loaded, generate_model(5, &dims).unwrap());
        let enc = io::load_encoder_outputs(&paths.encoder).unwrap();
        assert_eq!(enc, generate_encoder_outputs(5, &dims).unwrap());

        // Byte-identical regeneration.
        let dir2 = tempfile::tempdir().unwrap();
        let paths2 = write_fixture_set(5, &dims, dir2.path()).unwrap();
        for (a, b) in [
            (&paths.model, &paths2.model),
            (&paths.encoder, &paths2.encoder),
            (&paths.lm, &paths2.lm),
            (&paths.bias, &paths2.bias),
        ] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn scripted_frames_force_exact_blank_mass() {
        let params = scripted_model(3);
        let frames = scripted_frames(&[FrameScript::Emit(1), FrameScript::Silence], 3);
        let n = params.prediction.context_size();
        let before = predict(LabelHistory::from_recent(&[], n), &params.prediction);
        let after = predict(LabelHistory::from_recent(&[1], n), &params.prediction);

        // A path that still owes the scripted label cannot take blank.
        let emit = hat_scores(&params, frames.row(0), &before);
        assert_eq!(emit.log_blank.exp(), 0.0);
        // The scripted label takes essentially all label mass.
        assert!(emit.log_labels[1].value() > -1e-8);

        // Once the label is emitted, blank mass is exactly 1 on the same
        // frame and on the following silence frame.
        assert_eq!(
            hat_scores(&params, frames.row(0), &after).log_blank.exp(),
            1.0
        );
        assert_eq!(
            hat_scores(&params, frames.row(1), &after).log_blank.exp(),
            1.0
        );
        // A path that never emitted stays blocked at the silence frame too.
        assert_eq!(
            hat_scores(&params, frames.row(1), &before).log_blank.exp(),
            0.0
        );
    }
}

//! Shared model data: vocabulary, parameter bundle, encoder outputs.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::joint::JointParams;
use crate::prediction::PredictionNetParams;

/// Wordpiece vocabulary. Non-blank token ids are dense in `[0, size)`;
/// the blank token occupies the reserved index `size` and never appears
/// in label histories or outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_strings: Vec<String>,
}

impl Vocab {
    pub fn new(token_strings: Vec<String>) -> Result<Self> {
        if token_strings.is_empty() {
            return Err(Error::Validation("vocabulary must be non-empty".into()));
        }
        for (i, s) in token_strings.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Validation(format!("token {i} has empty string")));
            }
            if s.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "token {i} ({s:?}) contains whitespace"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in &token_strings {
            if !seen.insert(s.as_str()) {
                return Err(Error::Validation(format!("duplicate token string {s:?}")));
            }
        }
        Ok(Vocab { token_strings })
    }

    /// Count of non-blank tokens, |V|.
    pub fn size(&self) -> usize {
        self.token_strings.len()
    }

    /// The reserved blank index, by convention |V|.
    pub fn blank_id(&self) -> u32 {
        self.token_strings.len() as u32
    }

    pub fn token_string(&self, id: u32) -> &str {
        &self.token_strings[id as usize]
    }

    pub fn token_strings(&self) -> &[String] {
        &self.token_strings
    }

    pub fn lookup(&self, s: &str) -> Option<u32> {
        self.token_strings
            .iter()
            .position(|t| t == s)
            .map(|i| i as u32)
    }

    /// Renders a label sequence as space-joined surface forms.
    pub fn render(&self, labels: &[u32]) -> String {
        labels
            .iter()
            .map(|&y| self.token_string(y))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// All fixture weights for one model: vocabulary, prediction network,
/// and joint layer. The non-blank softmax rows are the embedding table
/// itself (`prediction.embedding`), so weight tying holds structurally —
/// there is no second copy to go stale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab: Vocab,
    pub prediction: PredictionNetParams,
    pub joint: JointParams,
}

impl ModelParams {
    pub fn new(vocab: Vocab, prediction: PredictionNetParams, joint: JointParams) -> Result<Self> {
        let p = ModelParams {
            vocab,
            prediction,
            joint,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn embed_dim(&self) -> usize {
        self.prediction.embed_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.joint.hidden_dim()
    }

    pub fn enc_dim(&self) -> usize {
        self.joint.enc_dim()
    }

    fn validate(&self) -> Result<()> {
        let v = self.vocab.size();
        let d_e = self.prediction.embed_dim();
        let d_h = self.joint.hidden_dim();
        if d_e != d_h {
            return Err(Error::Validation(format!(
                "tying requires d_e=d_h, got d_e={d_e} d_h={d_h}"
            )));
        }
        if self.prediction.embedding.nrows() != v {
            return Err(Error::Validation(format!(
                "embedding has {} rows, vocab has {v} tokens",
                self.prediction.embedding.nrows()
            )));
        }
        if self.joint.pred_proj.nrows() != d_e {
            return Err(Error::Validation(format!(
                "joint_pred_proj has {} rows, expected d_e={d_e}",
                self.joint.pred_proj.nrows()
            )));
        }
        for (name, finite) in [
            ("embedding", all_finite2(&self.prediction.embedding)),
            ("pred_proj", all_finite2(&self.prediction.projection)),
            ("joint_enc_proj", all_finite2(&self.joint.enc_proj)),
            ("joint_pred_proj", all_finite2(&self.joint.pred_proj)),
            (
                "position vectors",
                all_finite3(&self.prediction.position_vectors),
            ),
            (
                "pred_bias",
                self.prediction.bias.iter().all(|x| x.is_finite()),
            ),
            ("joint_bias", self.joint.bias.iter().all(|x| x.is_finite())),
            (
                "blank_row",
                self.joint.blank_row.iter().all(|x| x.is_finite()),
            ),
        ] {
            if !finite {
                return Err(Error::Validation(format!(
                    "{name} contains non-finite values"
                )));
            }
        }
        Ok(())
    }
}

fn all_finite2(m: &Array2<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn all_finite3(m: &Array3<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Precomputed encoder outputs for one utterance: causal frame vectors,
/// non-causal frame vectors, and the non-causal lookahead in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutputs {
    pub causal: Array2<f64>,
    pub noncausal: Array2<f64>,
    pub right_context: usize,
}

impl EncoderOutputs {
    pub fn new(causal: Array2<f64>, noncausal: Array2<f64>, right_context: usize) -> Result<Self> {
        if causal.nrows() == 0 {
            return Err(Error::Validation("encoder outputs must have T >= 1".into()));
        }
        if causal.dim() != noncausal.dim() {
            return Err(Error::Validation(format!(
                "causal is {:?} but noncausal is {:?}",
                causal.dim(),
                noncausal.dim()
            )));
        }
        if !all_finite2(&causal) || !all_finite2(&noncausal) {
            return Err(Error::Validation(
                "encoder outputs contain non-finite values".into(),
            ));
        }
        Ok(EncoderOutputs {
            causal,
            noncausal,
            right_context,
        })
    }

    pub fn frames(&self) -> usize {
        self.causal.nrows()
    }

    pub fn enc_dim(&self) -> usize {
        self.causal.ncols()
    }
}

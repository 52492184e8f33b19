//! HAT-factorized joint layer.
//!
//! Blank is scored by a dedicated sigmoid row while the |V| labels share a
//! softmax whose rows are the embedding table (weight tying). Keeping blank
//! out of the softmax is what makes the internal-LM estimate well defined:
//! zero the encoder contribution and renormalize over labels only.

use ndarray::{Array1, Array2, ArrayView1};

use crate::decoder::FusionWeights;
use crate::logprob::LogProb;
use crate::model::ModelParams;
use crate::prediction::{predict, LabelHistory, PredictionVector};

/// Joint-layer weights. There is no label-softmax matrix here: label logits
/// are read from the embedding table, so tying holds structurally.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    /// d_enc x d_h projection of the encoder frame.
    pub enc_proj: Array2<f64>,
    /// d_e x d_h projection of the prediction vector.
    pub pred_proj: Array2<f64>,
    /// d_h bias added before the tanh.
    pub bias: Array1<f64>,
    /// d_h row producing the scalar blank logit.
    pub blank_row: Array1<f64>,
}

impl JointParams {
    pub fn hidden_dim(&self) -> usize {
        self.enc_proj.ncols()
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_proj.nrows()
    }
}

/// One frame's factored distribution: log b and log[(1-b) * softmax(labels)].
/// exp(log_blank) + Σ exp(log_labels) = 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabelScores {
    pub log_blank: LogProb,
    pub log_labels: Vec<LogProb>,
}

/// `h = tanh(enc_proj·enc + pred_proj·r + bias)`, the shared hidden vector.
pub fn joint_hidden(
    params: &ModelParams,
    enc_frame: ArrayView1<f64>,
    pred: &PredictionVector,
) -> Array1<f64> {
    assert_eq!(
        enc_frame.len(),
        params.enc_dim(),
        "encoder frame has dim {}, model expects d_enc={}",
        enc_frame.len(),
        params.enc_dim()
    );
    assert_eq!(
        pred.r.len(),
        params.embed_dim(),
        "prediction vector dim mismatch"
    );
    let pre = enc_frame.dot(&params.joint.enc_proj)
        + pred.r.dot(&params.joint.pred_proj)
        + &params.joint.bias;
    pre.mapv(f64::tanh)
}

/// HAT scores for one (frame, prediction) pair.
pub fn hat_scores(
    params: &ModelParams,
    enc_frame: ArrayView1<f64>,
    pred: &PredictionVector,
) -> FrameLabelScores {
    let h = joint_hidden(params, enc_frame, pred);
    let z = params.joint.blank_row.dot(&h);
    let log_blank = log_sigmoid(z);
    let log_one_minus_blank = log_sigmoid(-z);
    let log_softmax = label_log_softmax(params, &h);
    FrameLabelScores {
        log_blank: LogProb::new(log_blank),
        log_labels: log_softmax
            .into_iter()
            .map(|ls| LogProb::new(log_one_minus_blank + ls))
            .collect(),
    }
}

/// Internal-LM label scores: the label posterior with the encoder
/// contribution zeroed, renormalized over labels only (blank excluded).
/// Depends on the history alone, never on a frame.
pub fn ilm_label_scores(params: &ModelParams, history: LabelHistory<'_>) -> Vec<LogProb> {
    let pred = predict(history, &params.prediction);
    let pre = pred.r.dot(&params.joint.pred_proj) + &params.joint.bias;
    let h = pre.mapv(f64::tanh);
    label_log_softmax(params, &h)
        .into_iter()
        .map(LogProb::new)
        .collect()
}

/// Per-token score deltas, one term per source in the fusion objective.
#[derive(Debug, Clone, Copy)]
pub struct ScoreDelta {
    pub posterior: LogProb,
    pub ilm: LogProb,
    pub lm: LogProb,
    pub context: LogProb,
}

/// The log-linear fusion rule:
/// `Δposterior - λ2·Δilm + λ1·Δlm + β·Δcontext`.
///
/// Zero weights void their terms entirely, so plain decoding falls out of
/// λ1 = λ2 = β = 0 even when a component is -inf.
pub fn fused_token_score(delta: &ScoreDelta, weights: &FusionWeights) -> LogProb {
    delta.posterior
        + delta.ilm.scaled(-weights.lambda2)
        + delta.lm.scaled(weights.lambda1)
        + delta.context.scaled(weights.beta)
}

fn label_log_softmax(params: &ModelParams, h: &Array1<f64>) -> Vec<f64> {
    let logits = params.prediction.embedding.dot(h);
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

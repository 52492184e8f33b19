//! Stateless embedding prediction network.
//!
//! The conditioning vector for the joint layer is computed from the last N
//! non-blank labels only: each history position is weighted elementwise by a
//! fixed per-head position vector, averaged over positions and heads, then
//! projected through a linear layer with Swish.

use ndarray::{Array1, Array2, Array3, ArrayView1};

/// Fixed weights of the prediction network. Position vectors are sampled
/// once at fixture-generation time and never resampled at load.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNetParams {
    /// Embedding table E, |V| x d_e. Also the tied label-softmax rows.
    pub embedding: Array2<f64>,
    /// Position vectors, H x N x d_e; `[h, i-1, ..]` weights the i-th most
    /// recent label for head h.
    pub position_vectors: Array3<f64>,
    /// Projection applied to the head-averaged embedding, d_e x d_e.
    pub projection: Array2<f64>,
    /// Projection bias, d_e.
    pub bias: Array1<f64>,
}

impl PredictionNetParams {
    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn num_heads(&self) -> usize {
        self.position_vectors.dim().0
    }

    pub fn context_size(&self) -> usize {
        self.position_vectors.dim().1
    }
}

/// The most recent non-blank labels, oldest to newest, at most N entries.
#[derive(Debug, Clone, Copy)]
pub struct LabelHistory<'a> {
    labels: &'a [u32],
}

impl<'a> LabelHistory<'a> {
    /// Takes the last `n` labels of a full label sequence.
    pub fn from_recent(labels: &'a [u32], n: usize) -> Self {
        let start = labels.len().saturating_sub(n);
        LabelHistory {
            labels: &labels[start..],
        }
    }

    pub fn labels(&self) -> &'a [u32] {
        self.labels
    }

    /// The i-th most recent label (i = 1 is the newest), if present.
    fn recent(&self, i: usize) -> Option<u32> {
        self.labels.len().checked_sub(i).map(|k| self.labels[k])
    }
}

/// Conditioning vector `r` plus the pre-projection head average, retained
/// for tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub r: Array1<f64>,
    pub a_final: Array1<f64>,
}

/// Elementwise `x * sigmoid(x)`.
pub fn swish(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(swish_scalar)
}

pub fn swish_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Position-weighted embedding average for one head:
/// `(1/N) Σ_i pv[head, i] ⊙ E[i-th most recent label]`, with positions
/// beyond the history contributing the zero vector.
pub fn head_average(
    history: LabelHistory<'_>,
    params: &PredictionNetParams,
    head: usize,
) -> Array1<f64> {
    let n = params.context_size();
    assert!(
        head < params.num_heads(),
        "head {head} out of range (H={})",
        params.num_heads()
    );
    let mut acc = Array1::<f64>::zeros(params.embed_dim());
    for i in 1..=n {
        let Some(label) = history.recent(i) else {
            break;
        };
        assert!(
            (label as usize) < params.vocab_size(),
            "label {label} is blank or out of vocabulary (|V|={})",
            params.vocab_size()
        );
        let pv = params.position_vectors.slice(ndarray::s![head, i - 1, ..]);
        let emb = params.embedding.row(label as usize);
        acc.zip_mut_with(&(&pv * &emb), |a, &b| *a += b);
    }
    acc / n as f64
}

/// Full prediction-network forward pass: mean of head averages, projection,
/// Swish. Deterministic; identical histories yield identical output.
pub fn predict(history: LabelHistory<'_>, params: &PredictionNetParams) -> PredictionVector {
    // Running mean over heads; keeps the all-heads-identical case exact.
    let mut a_final = head_average(history, params, 0);
    for h in 1..params.num_heads() {
        let ah = head_average(history, params, h);
        let k = (h + 1) as f64;
        a_final.zip_mut_with(&ah, |m, &x| *m += (x - *m) / k);
    }
    let pre = a_final.dot(&params.projection) + &params.bias;
    PredictionVector {
        r: swish(pre.view()),
        a_final,
    }
}

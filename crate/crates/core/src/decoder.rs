//! Frame-synchronous transducer beam search, shared between the causal and
//! non-causal passes, plus an exact forward-algorithm oracle for tests.
//!
//! Search is breadth-first per frame: within a frame a hypothesis may emit
//! up to `max_expansions_per_frame` labels and must then take blank, which
//! advances it to the next frame. Hypotheses with identical label sequences
//! are recombined by log-adding their posteriors; the ILM and context terms
//! are functions of the label sequence alone, so they merge exactly.

use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2};
use serde::Serialize;

use crate::biasing::{advance, ContextState, ContextualModel};
use crate::joint::{fused_token_score, hat_scores, ilm_label_scores, ScoreDelta};
use crate::logprob::{log_sum_exp, LogProb};
use crate::model::{EncoderOutputs, ModelParams, Vocab};
use crate::prediction::{predict, LabelHistory, PredictionVector};

/// Which decoding pass produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Causal,
    Noncausal,
}

impl Pass {
    pub fn as_str(self) -> &'static str {
        match self {
            Pass::Causal => "causal",
            Pass::Noncausal => "noncausal",
        }
    }
}

/// Log-linear fusion weights: λ1 on the external LM, λ2 on the internal LM,
/// β on the contextual LM. No sign restriction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FusionWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
}

/// Beam-search configuration. λ1 is forced to zero inside beam search
/// regardless of `weights`; the external LM only enters at rescoring.
/// λ2 participates in the in-search ranking only when `ilm_in_search` is
/// set (default: rescoring only).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_expansions_per_frame: usize,
    pub weights: FusionWeights,
    pub ilm_in_search: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 8,
            max_expansions_per_frame: 2,
            weights: FusionWeights::default(),
            ilm_in_search: false,
        }
    }
}

impl BeamConfig {
    fn search_weights(&self) -> FusionWeights {
        FusionWeights {
            lambda1: 0.0,
            lambda2: if self.ilm_in_search {
                self.weights.lambda2
            } else {
                0.0
            },
            beta: self.weights.beta,
        }
    }
}

/// Per-source score components plus their weighted combination.
/// `combined` is always recomputed from the components under the active
/// weights, never accumulated separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub log_posterior: LogProb,
    pub log_ilm: LogProb,
    pub log_lm: LogProb,
    pub log_context: LogProb,
    pub combined: LogProb,
}

impl ScoreBreakdown {
    pub fn start() -> Self {
        ScoreBreakdown {
            log_posterior: LogProb::ZERO,
            log_ilm: LogProb::ZERO,
            log_lm: LogProb::ZERO,
            log_context: LogProb::ZERO,
            combined: LogProb::ZERO,
        }
    }

    pub fn recombine(&mut self, weights: &FusionWeights) {
        self.combined = fused_token_score(
            &ScoreDelta {
                posterior: self.log_posterior,
                ilm: self.log_ilm,
                lm: self.log_lm,
                context: self.log_context,
            },
            weights,
        );
    }
}

/// One beam entry: a non-blank label sequence with its score breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<u32>,
    pub scores: ScoreBreakdown,
    pub context_state: Option<ContextState>,
    /// Frames consumed so far (one past the last consumed frame index).
    pub frames_consumed: usize,
}

impl Hypothesis {
    pub fn start(context: Option<&ContextualModel>) -> Self {
        Hypothesis {
            labels: Vec::new(),
            scores: ScoreBreakdown::start(),
            context_state: context.map(|m| m.start_state()),
            frames_consumed: 0,
        }
    }
}

/// Hypotheses sorted by combined score descending, tagged with the pass
/// that produced them.
#[derive(Debug, Clone)]
pub struct NBestList {
    pub entries: Vec<Hypothesis>,
    pub pass_source: Pass,
}

impl NBestList {
    pub fn top(&self) -> &Hypothesis {
        &self.entries[0]
    }

    /// One JSON object per hypothesis.
    pub fn write_jsonl(&self, vocab: &Vocab, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for h in &self.entries {
            let record = HypothesisRecord {
                text: vocab.render(&h.labels),
                tokens: &h.labels,
                log_posterior: h.scores.log_posterior,
                log_ilm: h.scores.log_ilm,
                log_lm: h.scores.log_lm,
                log_context: h.scores.log_context,
                combined: h.scores.combined,
                pass: self.pass_source,
            };
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct HypothesisRecord<'a> {
    text: String,
    tokens: &'a [u32],
    log_posterior: LogProb,
    log_ilm: LogProb,
    log_lm: LogProb,
    log_context: LogProb,
    combined: LogProb,
    pass: Pass,
}

/// Deterministic beam order: combined score descending, then shorter label
/// sequence, then lexicographically smaller token ids.
fn beam_order(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.scores
        .combined
        .total_cmp(&a.scores.combined)
        .then_with(|| a.labels.len().cmp(&b.labels.len()))
        .then_with(|| a.labels.cmp(&b.labels))
}

fn merge_into(pool: &mut HashMap<Vec<u32>, Hypothesis>, hyp: Hypothesis, weights: &FusionWeights) {
    match pool.entry(hyp.labels.clone()) {
        std::collections::hash_map::Entry::Occupied(mut slot) => {
            let existing = slot.get_mut();
            debug_assert_eq!(existing.scores.log_ilm, hyp.scores.log_ilm);
            debug_assert_eq!(existing.scores.log_context, hyp.scores.log_context);
            existing.scores.log_posterior =
                log_sum_exp(&[existing.scores.log_posterior, hyp.scores.log_posterior]);
            existing.scores.recombine(weights);
        }
        std::collections::hash_map::Entry::Vacant(slot) => {
            slot.insert(hyp);
        }
    }
}

fn prune(pool: HashMap<Vec<u32>, Hypothesis>, beam_size: usize) -> Vec<Hypothesis> {
    let mut out: Vec<Hypothesis> = pool.into_values().collect();
    out.sort_by(beam_order);
    out.truncate(beam_size);
    out
}

/// Expands a beam through one encoder frame. Every returned hypothesis has
/// consumed the frame (taken blank); label extensions are scored with
/// `fused_token_score` under the in-search weights (λ1 = 0).
pub fn decode_step(
    beam: &[Hypothesis],
    enc_frame: ArrayView1<f64>,
    params: &ModelParams,
    config: &BeamConfig,
    context: Option<&ContextualModel>,
) -> Vec<Hypothesis> {
    assert!(!beam.is_empty(), "decode_step: beam must be non-empty");
    assert!(config.beam_size >= 1 && config.max_expansions_per_frame >= 1);
    let weights = config.search_weights();
    let n = params.prediction.context_size();
    let vocab_size = params.vocab.size();

    let mut finished: HashMap<Vec<u32>, Hypothesis> = HashMap::new();
    let mut active: Vec<Hypothesis> = beam.to_vec();

    for round in 0..=config.max_expansions_per_frame {
        let expanding = round < config.max_expansions_per_frame;
        let mut next: HashMap<Vec<u32>, Hypothesis> = HashMap::new();
        for hyp in &active {
            let history = LabelHistory::from_recent(&hyp.labels, n);
            let pred = predict(history, &params.prediction);
            let scores = hat_scores(params, enc_frame, &pred);

            let mut blanked = hyp.clone();
            blanked.scores.log_posterior += scores.log_blank;
            blanked.frames_consumed += 1;
            blanked.scores.recombine(&weights);
            merge_into(&mut finished, blanked, &weights);

            if !expanding {
                continue;
            }
            let ilm = ilm_label_scores(params, history);
            for label in 0..vocab_size as u32 {
                let mut ext = hyp.clone();
                ext.labels.push(label);
                ext.scores.log_posterior += scores.log_labels[label as usize];
                ext.scores.log_ilm += ilm[label as usize];
                if let Some(model) = context {
                    let state = ext
                        .context_state
                        .expect("context state tracked when biasing");
                    let (new_state, _) = advance(&state, label, model);
                    ext.context_state = Some(new_state);
                    ext.scores.log_context = new_state.accumulated;
                }
                ext.scores.recombine(&weights);
                merge_into(&mut next, ext, &weights);
            }
        }
        if expanding {
            active = prune(next, config.beam_size);
        }
    }

    prune(finished, config.beam_size)
}

/// Decodes a whole utterance: folds `decode_step` over every frame starting
/// from the empty hypothesis. Deterministic for fixed inputs.
pub fn decode_utterance(
    enc: ArrayView2<f64>,
    params: &ModelParams,
    config: &BeamConfig,
    context: Option<&ContextualModel>,
    pass_source: Pass,
) -> NBestList {
    assert!(
        enc.nrows() >= 1,
        "decode_utterance: need at least one frame"
    );
    assert_eq!(
        enc.ncols(),
        params.enc_dim(),
        "encoder frames have dim {}, model expects d_enc={}",
        enc.ncols(),
        params.enc_dim()
    );
    let mut beam = vec![Hypothesis::start(context)];
    for t in 0..enc.nrows() {
        beam = decode_step(&beam, enc.row(t), params, config, context);
    }
    NBestList {
        entries: beam,
        pass_source,
    }
}

/// Exact `log p(y|x)`: the transducer forward algorithm over the (t, u)
/// lattice, marginalizing every blank/label alignment that emits at most
/// `max_expansions_per_frame` labels per frame and ends with the final
/// frame's blank. Test oracle for the beam search.
pub fn brute_force_posterior(
    enc: ArrayView2<f64>,
    labels: &[u32],
    params: &ModelParams,
    max_expansions_per_frame: usize,
) -> LogProb {
    let frames = enc.nrows();
    let total = labels.len();
    let cap = max_expansions_per_frame;
    if total > frames * cap {
        return LogProb::IMPOSSIBLE;
    }
    let n = params.prediction.context_size();
    let predictions: Vec<PredictionVector> = (0..=total)
        .map(|u| {
            predict(
                LabelHistory::from_recent(&labels[..u], n),
                &params.prediction,
            )
        })
        .collect();

    // alpha[t][u][k]: t frames consumed, u labels emitted, k of them on the
    // current frame.
    let mut alpha = vec![vec![vec![f64::NEG_INFINITY; cap + 1]; total + 1]; frames + 1];
    alpha[0][0][0] = 0.0;
    for t in 0..frames {
        for u in 0..=total {
            if alpha[t][u].iter().all(|&a| a == f64::NEG_INFINITY) {
                continue;
            }
            let scores = hat_scores(params, enc.row(t), &predictions[u]);
            for k in 0..=cap {
                let mass = alpha[t][u][k];
                if mass == f64::NEG_INFINITY {
                    continue;
                }
                let blanked = mass + scores.log_blank.value();
                alpha[t + 1][u][0] = lse2(alpha[t + 1][u][0], blanked);
                if u < total && k < cap {
                    let emitted = mass + scores.log_labels[labels[u] as usize].value();
                    alpha[t][u + 1][k + 1] = lse2(alpha[t][u + 1][k + 1], emitted);
                }
            }
        }
    }
    LogProb::new(alpha[frames][total][0])
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        b
    } else if b == f64::NEG_INFINITY {
        a
    } else {
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Decodes the causal and non-causal matrices independently with the same
/// shared model parameters. The two passes run concurrently and share no
/// mutable state.
pub fn run_cascade(
    enc: &EncoderOutputs,
    params: &ModelParams,
    causal_config: &BeamConfig,
    noncausal_config: &BeamConfig,
    causal_context: Option<&ContextualModel>,
    noncausal_context: Option<&ContextualModel>,
) -> (NBestList, NBestList) {
    std::thread::scope(|scope| {
        let noncausal = scope.spawn(|| {
            decode_utterance(
                enc.noncausal.view(),
                params,
                noncausal_config,
                noncausal_context,
                Pass::Noncausal,
            )
        });
        let causal = decode_utterance(
            enc.causal.view(),
            params,
            causal_config,
            causal_context,
            Pass::Causal,
        );
        (causal, noncausal.join().expect("noncausal pass panicked"))
    })
}

//! External causal LM contract, a reference backoff n-gram implementation,
//! and n-best rescoring.
//!
//! The LM symbol space is the model vocabulary plus one end-of-sequence
//! symbol carried as id |V| (an LM-only symbol; the decoder never emits it).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::biasing::{context_score_sequence, ContextualModel};
use crate::decoder::{FusionWeights, NBestList};
use crate::error::{Error, Result};
use crate::joint::{fused_token_score, ScoreDelta};
use crate::logprob::LogProb;

/// Next-symbol argument for causal LM scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmSymbol {
    Token(u32),
    EndOfSequence,
}

/// A causal LM: scores the next symbol from left context exclusively.
/// For any fixed history the scores over the vocabulary plus end of
/// sequence form a distribution (sum to one within 1e-6).
pub trait CausalLmScorer {
    fn score(&self, history: &[u32], next: LmSymbol) -> LogProb;
    fn vocab_size(&self) -> usize;
}

/// One n-gram table row: conditional log-probability and, when the ids also
/// serve as a longer context, its backoff weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub log_prob: f64,
    pub backoff: Option<f64>,
}

/// Katz-style backoff n-gram LM keyed by token-id sequences
/// (context followed by the predicted symbol).
#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    vocab_size: usize,
    entries: HashMap<Vec<u32>, NGramEntry>,
}

impl NGramLm {
    pub fn new(
        order: usize,
        vocab_size: usize,
        entries: HashMap<Vec<u32>, NGramEntry>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Validation("n-gram order must be >= 1".into()));
        }
        let eos = vocab_size as u32;
        for key in entries.keys() {
            if key.is_empty() || key.len() > order {
                return Err(Error::Validation(format!(
                    "n-gram key {key:?} has length outside 1..={order}"
                )));
            }
            if key[..key.len() - 1].iter().any(|&id| id >= eos) {
                return Err(Error::Validation(format!(
                    "n-gram context in {key:?} contains a non-token id"
                )));
            }
            if *key.last().unwrap() > eos {
                return Err(Error::Validation(format!(
                    "n-gram key {key:?} predicts an id beyond end-of-sequence {eos}"
                )));
            }
        }
        let lm = NGramLm {
            order,
            vocab_size,
            entries,
        };
        lm.check_normalization()?;
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn eos_id(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Every context's probabilities must close to one after backoff.
    fn check_normalization(&self) -> Result<()> {
        let mut contexts: HashSet<&[u32]> = HashSet::new();
        contexts.insert(&[]);
        for key in self.entries.keys() {
            for end in 1..key.len() {
                contexts.insert(&key[..end]);
            }
        }
        for ctx in contexts {
            let mut total = 0.0;
            for sym in 0..=self.vocab_size as u32 {
                total += self.score_symbol(ctx, sym).exp();
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "n-gram context {ctx:?} sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn score_symbol(&self, history: &[u32], symbol: u32) -> LogProb {
        let start = history.len().saturating_sub(self.order - 1);
        let mut ctx = &history[start..];
        let mut carried_backoff = 0.0;
        loop {
            let mut key = Vec::with_capacity(ctx.len() + 1);
            key.extend_from_slice(ctx);
            key.push(symbol);
            if let Some(entry) = self.entries.get(&key) {
                return LogProb::new(carried_backoff + entry.log_prob);
            }
            if ctx.is_empty() {
                return LogProb::IMPOSSIBLE;
            }
            carried_backoff += self.entries.get(ctx).and_then(|e| e.backoff).unwrap_or(0.0);
            ctx = &ctx[1..];
        }
    }

    /// Reads an `NGRAM v1` file: `<logprob> <token ids...> [backoff]` per
    /// line, natural log. Ids are plain integers; the optional trailing
    /// backoff weight must contain a decimal point or exponent so it can
    /// never be mistaken for an id.
    pub fn load(path: &Path, vocab_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(1, "empty n-gram file".into()))?;
        let order = header
            .strip_prefix("NGRAM v1 order=")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| perr(1, format!("expected `NGRAM v1 order=<n>`, got {header:?}")))?;

        let mut entries = HashMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let mut fields = line.split_whitespace();
            let log_prob: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| perr(line_no, "missing log-probability".into()))?;
            let rest: Vec<&str> = fields.collect();
            if rest.is_empty() {
                return Err(perr(line_no, "missing token ids".into()));
            }
            let mut ids = Vec::new();
            let mut backoff = None;
            for (pos, field) in rest.iter().enumerate() {
                if let Ok(id) = field.parse::<u32>() {
                    ids.push(id);
                } else if pos == rest.len() - 1 {
                    let b: f64 = field
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad backoff weight {field:?}")))?;
                    backoff = Some(b);
                } else {
                    return Err(perr(line_no, format!("bad token id {field:?}")));
                }
            }
            if ids.is_empty() {
                return Err(perr(line_no, "missing token ids".into()));
            }
            if entries
                .insert(ids.clone(), NGramEntry { log_prob, backoff })
                .is_some()
            {
                return Err(perr(line_no, format!("duplicate n-gram {ids:?}")));
            }
        }
        NGramLm::new(order, vocab_size, entries)
    }

    /// Writes the canonical file form: entries sorted by length then ids,
    /// floats in round-trip formatting (backoffs always carry a point).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<&Vec<u32>> = self.entries.keys().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let mut out = String::new();
        let _ = writeln!(out, "NGRAM v1 order={}", self.order);
        for key in keys {
            let entry = &self.entries[key];
            let ids = key
                .iter()
                .map(|id| id.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            match entry.backoff {
                Some(b) => {
                    let _ = writeln!(out, "{:?} {ids} {:?}", entry.log_prob, b);
                }
                None => {
                    let _ = writeln!(out, "{:?} {ids}", entry.log_prob);
                }
            }
        }
        std::fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl CausalLmScorer for NGramLm {
    fn score(&self, history: &[u32], next: LmSymbol) -> LogProb {
        for &token in history {
            assert!(
                (token as usize) < self.vocab_size,
                "history token {token} outside vocabulary (|V|={})",
                self.vocab_size
            );
        }
        let symbol = match next {
            LmSymbol::Token(id) => {
                assert!(
                    (id as usize) < self.vocab_size,
                    "token {id} outside vocabulary (|V|={})",
                    self.vocab_size
                );
                id
            }
            LmSymbol::EndOfSequence => self.eos_id(),
        };
        self.score_symbol(history, symbol)
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// Whole-sequence LM score:
/// `Σ_u score(labels[..u], labels[u]) + score(labels, end-of-sequence)`.
pub fn lm_score_sequence(labels: &[u32], lm: &dyn CausalLmScorer) -> LogProb {
    let mut total = LogProb::ZERO;
    for u in 0..labels.len() {
        total += lm.score(&labels[..u], LmSymbol::Token(labels[u]));
    }
    total + lm.score(labels, LmSymbol::EndOfSequence)
}

/// Sentence-level n-best rescoring:
/// `combined = log p(y|x) - λ2 log p_ILM(y) + λ1 log p_LM(y) + β log p_C(y)`,
/// with the contextual score recomputed from scratch when a model is given
/// so biasing applied during search is never undone. The list is re-sorted
/// by combined score, stably, so zero weights preserve the input order.
pub fn rescore_nbest(
    nbest: &NBestList,
    lm: &dyn CausalLmScorer,
    weights: &FusionWeights,
    context: Option<&ContextualModel>,
) -> NBestList {
    let mut entries = nbest.entries.clone();
    for hyp in &mut entries {
        hyp.scores.log_lm = lm_score_sequence(&hyp.labels, lm);
        if let Some(model) = context {
            hyp.scores.log_context = context_score_sequence(&hyp.labels, model);
        }
        hyp.scores.combined = fused_token_score(
            &ScoreDelta {
                posterior: hyp.scores.log_posterior,
                ilm: hyp.scores.log_ilm,
                lm: hyp.scores.log_lm,
                context: hyp.scores.log_context,
            },
            weights,
        );
    }
    entries.sort_by(|a, b| b.scores.combined.total_cmp(&a.scores.combined));
    NBestList {
        entries,
        pass_source: nbest.pass_source,
    }
}

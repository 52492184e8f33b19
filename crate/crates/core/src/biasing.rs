//! Contextual biasing: a weighted phrase trie with subtractive failure arcs.
//!
//! Every arc along a phrase earns `per_token_boost`; departing the trie from
//! a non-final state refunds everything earned on the way in, so dead-end
//! prefixes net zero while complete phrases keep their boost. The score of a
//! label sequence is a pure function of the sequence, which is what lets the
//! decoder recombine hypotheses exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::logprob::LogProb;
use crate::model::Vocab;

#[derive(Debug, Clone)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    /// Sum of arc boosts on the path from the root; subtracted on failure.
    refund: f64,
    is_final: bool,
}

/// Weighted phrase trie implementing `log p_C(y)`. Immutable after build.
#[derive(Debug, Clone)]
pub struct ContextualModel {
    nodes: Vec<TrieNode>,
    per_token_boost: f64,
}

/// Per-hypothesis matcher position: current trie node plus the context
/// score earned so far on the hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextState {
    pub node: usize,
    pub accumulated: LogProb,
}

impl ContextualModel {
    pub fn start_state(&self) -> ContextState {
        ContextState {
            node: 0,
            accumulated: LogProb::ZERO,
        }
    }

    pub fn per_token_boost(&self) -> f64 {
        self.per_token_boost
    }

    /// Number of trie states including the root.
    pub fn num_states(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_final_states(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_final).count()
    }

    pub fn refund(&self, state: usize) -> f64 {
        self.nodes[state].refund
    }

    pub fn is_final(&self, state: usize) -> bool {
        self.nodes[state].is_final
    }
}

/// Builds the phrase trie. Every in-trie arc carries `+per_token_boost`;
/// refunds accumulate along each path.
pub fn build_context(phrases: &[Vec<u32>], per_token_boost: f64) -> Result<ContextualModel> {
    if !per_token_boost.is_finite() {
        return Err(Error::Validation("per_token_boost must be finite".into()));
    }
    let mut nodes = vec![TrieNode {
        children: BTreeMap::new(),
        refund: 0.0,
        is_final: false,
    }];
    for phrase in phrases {
        if phrase.is_empty() {
            return Err(Error::EmptyPhrase);
        }
        let mut at = 0usize;
        for &token in phrase {
            at = match nodes[at].children.get(&token) {
                Some(&child) => child,
                None => {
                    let child = nodes.len();
                    let refund = nodes[at].refund + per_token_boost;
                    nodes.push(TrieNode {
                        children: BTreeMap::new(),
                        refund,
                        is_final: false,
                    });
                    nodes[at].children.insert(token, child);
                    child
                }
            };
        }
        nodes[at].is_final = true;
    }
    Ok(ContextualModel {
        nodes,
        per_token_boost,
    })
}

/// Advances the matcher by one token and returns the score delta.
///
/// In-trie extension earns the boost; leaving a final state keeps the earned
/// boost and retries the token from the root; leaving a non-final state
/// refunds the path and retries from the root.
pub fn advance(
    state: &ContextState,
    token: u32,
    model: &ContextualModel,
) -> (ContextState, LogProb) {
    let node = &model.nodes[state.node];
    let delta = if let Some(&child) = node.children.get(&token) {
        return step(state, child, model.per_token_boost);
    } else if node.is_final {
        match model.nodes[0].children.get(&token) {
            Some(&child) => return step(state, child, model.per_token_boost),
            None => 0.0,
        }
    } else {
        let refund = -node.refund;
        match model.nodes[0].children.get(&token) {
            Some(&child) => return step(state, child, refund + model.per_token_boost),
            None => refund,
        }
    };
    let delta = LogProb::new(delta);
    (
        ContextState {
            node: 0,
            accumulated: state.accumulated + delta,
        },
        delta,
    )
}

fn step(state: &ContextState, node: usize, delta: f64) -> (ContextState, LogProb) {
    let delta = LogProb::new(delta);
    (
        ContextState {
            node,
            accumulated: state.accumulated + delta,
        },
        delta,
    )
}

/// Scores a whole label sequence from scratch: the fold of `advance` from
/// the root. This is the rescoring-time recomputation of `log p_C(y)` and
/// always equals the value a decoder accumulates incrementally.
pub fn context_score_sequence(labels: &[u32], model: &ContextualModel) -> LogProb {
    let mut state = model.start_state();
    for &token in labels {
        state = advance(&state, token, model).0;
    }
    state.accumulated
}

/// Reads a biasing phrase file: one phrase per line, words separated by
/// whitespace, tokenized against the model vocabulary. Blank lines are
/// skipped; a word outside the vocabulary fails the build naming the line.
pub fn load_bias_phrases(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut phrases = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut phrase = Vec::new();
        for word in line.split_whitespace() {
            match vocab.lookup(word) {
                Some(id) => phrase.push(id),
                None => {
                    return Err(Error::UntokenizablePhrase {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        phrase: line.to_string(),
                    })
                }
            }
        }
        phrases.push(phrase);
    }
    Ok(phrases)
}

//! Command implementations behind the `cascade` binary.
//!
//! Every command echoes its resolved configuration as the first output line
//! and writes JSON/JSONL only; re-running with the same inputs reproduces
//! the output byte for byte. Commands never mutate their input files.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use cascade_core::biasing::{build_context, load_bias_phrases, ContextualModel};
use cascade_core::decoder::{run_cascade, BeamConfig, FusionWeights, NBestList, Pass};
use cascade_core::fixture::{write_fixture_set, FixtureDims};
use cascade_core::io::{load_encoder_outputs, load_model};
use cascade_core::lm::{rescore_nbest, NGramLm};
use cascade_core::metrics::word_error_rate;
use cascade_core::model::ModelParams;
use cascade_core::streaming::{run_session, EndpointConfig, SessionConfig};

/// Resolved configuration shared by all commands, echoed into every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub bias_path: Option<PathBuf>,
    pub bias_boost: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub beam_size: usize,
    pub max_expansions: usize,
    pub ilm_in_search: bool,
    /// Which pass's n-best is emitted and rescored.
    pub pass: Pass,
    pub frame_period_ms: u64,
    pub fetch_latency_ms: u64,
    pub ep_threshold: f64,
    pub ep_frames: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            encoder: None,
            lm: None,
            bias_path: None,
            bias_boost: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            beta: 1.0,
            beam_size: 8,
            max_expansions: 2,
            ilm_in_search: false,
            pass: Pass::Noncausal,
            frame_period_ms: 40,
            fetch_latency_ms: 200,
            ep_threshold: 0.9,
            ep_frames: 2,
            seed: 0,
        }
    }
}

impl RunConfig {
    fn weights(&self) -> FusionWeights {
        FusionWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
        }
    }

    fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_expansions_per_frame: self.max_expansions,
            weights: self.weights(),
            ilm_in_search: self.ilm_in_search,
        }
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            causal: self.beam_config(),
            noncausal: self.beam_config(),
            endpoint: EndpointConfig {
                blank_threshold: self.ep_threshold,
                consecutive_frames: self.ep_frames,
            },
            frame_period_ms: self.frame_period_ms,
            fetch_latency_ms: self.fetch_latency_ms,
        }
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    config: &'a RunConfig,
}

fn echo_config(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer(&mut *out, &ConfigEcho { config })?;
    out.write_all(b"\n")?;
    Ok(())
}

fn existing<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .with_context(|| format!("{what} file is required"))?;
    if !path.exists() {
        bail!("{what} file not found: {}", path.display());
    }
    Ok(path)
}

struct Engine {
    params: ModelParams,
    context: Option<ContextualModel>,
    lm: Option<NGramLm>,
}

fn load_engine(config: &RunConfig) -> Result<Engine> {
    let model_path = existing(&config.model, "model")?;
    let params = load_model(model_path)?;
    let context = match &config.bias_path {
        Some(path) => {
            if !path.exists() {
                bail!("bias file not found: {}", path.display());
            }
            let phrases = load_bias_phrases(path, &params.vocab)?;
            Some(build_context(&phrases, config.bias_boost)?)
        }
        None => None,
    };
    let lm = match &config.lm {
        Some(path) => {
            if !path.exists() {
                bail!("lm file not found: {}", path.display());
            }
            Some(NGramLm::load(path, params.vocab.size())?)
        }
        None => None,
    };
    Ok(Engine {
        params,
        context,
        lm,
    })
}

fn select_pass(causal: NBestList, noncausal: NBestList, pass: Pass) -> NBestList {
    match pass {
        Pass::Causal => causal,
        Pass::Noncausal => noncausal,
    }
}

/// Decodes both passes and writes the selected pass's n-best (rescored when
/// an LM is configured) as JSON lines.
pub fn cmd_decode(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    let engine = load_engine(config)?;
    let enc = load_encoder_outputs(existing(&config.encoder, "encoder")?)?;
    if enc.enc_dim() != engine.params.enc_dim() {
        bail!(
            "encoder file has dim {} but the model expects d_enc={}",
            enc.enc_dim(),
            engine.params.enc_dim()
        );
    }
    echo_config(config, out)?;
    let beam = config.beam_config();
    let (causal, noncausal) = run_cascade(
        &enc,
        &engine.params,
        &beam,
        &beam,
        engine.context.as_ref(),
        engine.context.as_ref(),
    );
    let selected = select_pass(causal, noncausal, config.pass);
    let final_list = match &engine.lm {
        Some(lm) => rescore_nbest(&selected, lm, &config.weights(), engine.context.as_ref()),
        None => selected,
    };
    final_list.write_jsonl(&engine.params.vocab, out)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateReportLine<'a> {
    report: &'a cascade_core::streaming::LatencyReport,
}

/// Runs the streaming session simulation: timeline JSONL followed by the
/// latency report.
pub fn cmd_simulate(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    let engine = load_engine(config)?;
    let enc = load_encoder_outputs(existing(&config.encoder, "encoder")?)?;
    if enc.enc_dim() != engine.params.enc_dim() {
        bail!(
            "encoder file has dim {} but the model expects d_enc={}",
            enc.enc_dim(),
            engine.params.enc_dim()
        );
    }
    echo_config(config, out)?;
    let (report, timeline, _) = run_session(
        &enc,
        &engine.params,
        &config.session_config(),
        engine.context.as_ref(),
        engine.lm.as_ref().map(|lm| lm as _),
    );
    timeline.write_jsonl(out)?;
    serde_json::to_writer(&mut *out, &SimulateReportLine { report: &report })?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct UtteranceReport {
    line: usize,
    substitutions: usize,
    insertions: usize,
    deletions: usize,
    wer: f64,
}

#[derive(Serialize)]
struct CorpusReport {
    corpus_wer: f64,
    substitutions: usize,
    insertions: usize,
    deletions: usize,
    reference_words: usize,
    utterances: Vec<UtteranceReport>,
}

/// Corpus WER between two line-aligned transcript files.
pub fn cmd_evaluate(
    config: &RunConfig,
    ref_path: &Path,
    hyp_path: &Path,
    out: &mut impl Write,
) -> Result<()> {
    let read = |path: &Path| -> Result<Vec<String>> {
        if !path.exists() {
            bail!("transcript file not found: {}", path.display());
        }
        Ok(std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::to_string)
            .collect())
    };
    let references = read(ref_path)?;
    let hypotheses = read(hyp_path)?;
    if references.len() != hypotheses.len() {
        bail!(
            "line count mismatch: {} has {} lines, {} has {} lines",
            ref_path.display(),
            references.len(),
            hyp_path.display(),
            hypotheses.len()
        );
    }

    let mut utterances = Vec::with_capacity(references.len());
    let (mut subs, mut ins, mut dels, mut ref_words) = (0usize, 0usize, 0usize, 0usize);
    for (idx, (reference, hypothesis)) in references.iter().zip(&hypotheses).enumerate() {
        let ref_tokens: Vec<&str> = reference.split_whitespace().collect();
        let hyp_tokens: Vec<&str> = hypothesis.split_whitespace().collect();
        if ref_tokens.is_empty() {
            bail!("empty reference on line {}", idx + 1);
        }
        let w = word_error_rate(&ref_tokens, &hyp_tokens);
        subs += w.substitutions;
        ins += w.insertions;
        dels += w.deletions;
        ref_words += ref_tokens.len();
        utterances.push(UtteranceReport {
            line: idx + 1,
            substitutions: w.substitutions,
            insertions: w.insertions,
            deletions: w.deletions,
            wer: w.wer,
        });
    }

    echo_config(config, out)?;
    let report = CorpusReport {
        corpus_wer: (subs + ins + dels) as f64 / ref_words as f64,
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        reference_words: ref_words,
        utterances,
    };
    serde_json::to_writer(&mut *out, &report)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct FixtureManifest<'a> {
    dims: FixtureDimsEcho,
    files: &'a cascade_core::fixture::FixturePaths,
}

#[derive(Serialize)]
struct FixtureDimsEcho {
    vocab_size: usize,
    embed_dim: usize,
    enc_dim: usize,
    num_heads: usize,
    context_size: usize,
    frames: usize,
    right_context: usize,
}

/// Generates the seeded fixture set (model, encoder, LM, bias phrases).
pub fn cmd_make_fixture(
    config: &RunConfig,
    dims: &FixtureDims,
    out_dir: &Path,
    out: &mut impl Write,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let paths = write_fixture_set(config.seed, dims, out_dir)?;
    echo_config(config, out)?;
    let manifest = FixtureManifest {
        dims: FixtureDimsEcho {
            vocab_size: dims.vocab_size,
            embed_dim: dims.embed_dim,
            enc_dim: dims.enc_dim,
            num_heads: dims.num_heads,
            context_size: dims.context_size,
            frames: dims.frames,
            right_context: dims.right_context,
        },
        files: &paths,
    };
    serde_json::to_writer(&mut *out, &manifest)?;
    out.write_all(b"\n")?;
    Ok(())
}

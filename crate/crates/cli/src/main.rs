use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cascade_cli::{cmd_decode, cmd_evaluate, cmd_make_fixture, cmd_simulate, RunConfig};
use cascade_core::decoder::Pass;
use cascade_core::fixture::FixtureDims;

#[derive(Parser)]
#[command(
    name = "cascade",
    version,
    about = "Two-pass streaming transducer decoding engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode an utterance and print the n-best list as JSON lines
    Decode(DecodeArgs),
    /// Simulate a streaming session: timeline JSONL plus a latency report
    Simulate(SimulateArgs),
    /// Score hypothesis transcripts against references (corpus WER)
    Evaluate(EvaluateArgs),
    /// Generate a seeded fixture set (model, encoder, LM, bias phrases)
    MakeFixture(MakeFixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PassArg {
    Causal,
    Noncausal,
}

impl From<PassArg> for Pass {
    fn from(p: PassArg) -> Pass {
        match p {
            PassArg::Causal => Pass::Causal,
            PassArg::Noncausal => Pass::Noncausal,
        }
    }
}

#[derive(Args)]
struct EngineArgs {
    /// Model file
    #[arg(long)]
    model: PathBuf,
    /// Encoder-output file
    #[arg(long)]
    encoder: PathBuf,
    /// N-gram LM file for rescoring
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Biasing phrase file, one phrase per line
    #[arg(long)]
    bias_path: Option<PathBuf>,
    /// Per-token biasing boost (natural log)
    #[arg(long, default_value_t = 1.0, requires = "bias_path")]
    bias_boost: f64,
    /// External-LM weight at rescoring
    #[arg(long, default_value_t = 0.0, requires = "lm")]
    lambda1: f64,
    /// Internal-LM subtraction weight
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    /// Contextual-LM weight
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    beam_size: usize,
    /// Cap on non-blank emissions per frame
    #[arg(long, default_value_t = 2)]
    max_expansions: usize,
    /// Apply the internal-LM weight during beam search too
    #[arg(long)]
    ilm_in_search: bool,
    /// Which pass's n-best to emit and rescore
    #[arg(long, value_enum, default_value = "noncausal")]
    pass: PassArg,
}

impl EngineArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            model: Some(self.model),
            encoder: Some(self.encoder),
            lm: self.lm,
            bias_path: self.bias_path,
            bias_boost: self.bias_boost,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
            beam_size: self.beam_size,
            max_expansions: self.max_expansions,
            ilm_in_search: self.ilm_in_search,
            pass: self.pass.into(),
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Milliseconds per encoder frame
    #[arg(long, default_value_t = 40)]
    frame_period_ms: u64,
    /// Simulated server fetch time in milliseconds
    #[arg(long, default_value_t = 200)]
    fetch_latency_ms: u64,
    /// Blank-mass threshold for endpointing
    #[arg(long, default_value_t = 0.9)]
    ep_threshold: f64,
    /// Consecutive frames the threshold must hold
    #[arg(long, default_value_t = 2)]
    ep_frames: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference transcript file, one utterance per line
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis transcript file, line-aligned with the references
    #[arg(long = "hyp")]
    hypothesis: PathBuf,
}

#[derive(Args)]
struct MakeFixtureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the fixture files are written into
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    embed_dim: usize,
    #[arg(long, default_value_t = 4)]
    enc_dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 3)]
    context: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    right_context: usize,
}

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Decode(args) => cmd_decode(&args.engine.into_config(), &mut stdout),
        Command::Simulate(args) => {
            let mut config = args.engine.into_config();
            config.frame_period_ms = args.frame_period_ms;
            config.fetch_latency_ms = args.fetch_latency_ms;
            config.ep_threshold = args.ep_threshold;
            config.ep_frames = args.ep_frames;
            cmd_simulate(&config, &mut stdout)
        }
        Command::Evaluate(args) => {
            let config = RunConfig::default();
            cmd_evaluate(&config, &args.reference, &args.hypothesis, &mut stdout)
        }
        Command::MakeFixture(args) => {
            let config = RunConfig {
                seed: args.seed,
                ..RunConfig::default()
            };
            let dims = FixtureDims {
                vocab_size: args.vocab_size,
                embed_dim: args.embed_dim,
                enc_dim: args.enc_dim,
                num_heads: args.heads,
                context_size: args.context,
                frames: args.frames,
                right_context: args.right_context,
            };
            cmd_make_fixture(&config, &dims, &args.out_dir, &mut stdout)
        }
    };
    if let Err(err) = result {
        if let Some(io_err) = err.downcast_ref::<std::io::Error>() {
            if io_err.kind() == std::io::ErrorKind::BrokenPipe {
                return;
            }
        }
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

//! Command-line front end. `run` parses argv, dispatches and maps errors to
//! exit codes: 0 success, 1 domain error, 2 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::choreo::{
    extract_tokens, is_valid, qc_evaluate, qc_plan, validate_annotation, ChoreoAnnotation, Verdict,
    Vocabulary,
};
use crate::eval::{evaluate, EvalConfig, PredicateSet};
use crate::experiment::{prepare_corpus, PRIOR_MIN_STD};
use crate::flow::{sample, train_loop, LossWeights, SamplerConfig, TrainConfig};
use crate::io::{
    read_continuous, read_corpus, read_motion, read_motion_dir, synth_dataset, write_continuous,
    write_corpus, write_motion, SynthConfig,
};
use crate::kinematics::forward_kinematics;
use crate::model::{read_checkpoint, write_checkpoint, ConditioningBundle, Model, ModelConfig};
use crate::repr::{
    encode_sequence, normalize, MotionSequence, Normalizer, RepresentationMode, IDENTITY_DIM,
};
use crate::schema::{load_schema, SkeletonSchema};

pub const SCHEMA_DIR_ENV: &str = "CHOREOFLOW_SCHEMA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "choreoflow",
    version,
    about = "Skeletal motion representation, flow-matching generation and choreography tooling"
)]
pub struct Cli {
    /// Built-in schema name, schema file, or a name found in $CHOREOFLOW_SCHEMA_DIR.
    #[arg(long, global = true, default_value = "mhr260")]
    pub schema: String,
    /// Treat schema-hash mismatches in motion files as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Schema utilities.
    #[command(subcommand)]
    Schema(SchemaCmd),
    /// Native motion (.dfm) to continuous frames (.dfc), optionally normalized.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Stats JSON from `stats fit`; normalizes when given.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Continuous frames (.dfc) back to a native motion (.dfm).
    Decode {
        input: PathBuf,
        output: PathBuf,
        /// Required when the input is normalized.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Normalization statistics.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Generate a motion from an annotation with a trained checkpoint.
    Sample(SampleArgs),
    /// Kinetic / geometric metrics between two motion directories.
    Eval(EvalArgs),
    /// Choreographic annotation tools.
    #[command(subcommand)]
    Choreo(ChoreoCmd),
    /// Quality-control sampling plans and verdicts.
    #[command(subcommand)]
    Qc(QcCmd),
    /// Write the procedural two-class corpus.
    SynthDataset(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum SchemaCmd {
    /// Load and validate a schema, print its dimensions and hash.
    Check {
        /// Defaults to --schema.
        schema: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Continuous,
    Zscore136,
}

impl From<ModeArg> for RepresentationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Continuous => RepresentationMode::Continuous,
            ModeArg::Zscore136 => RepresentationMode::ZScore136,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum StatsCmd {
    /// Fit normalization statistics over a directory of .dfm files or a corpus.
    Fit {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "continuous")]
        mode: ModeArg,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory with manifest.json.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints, log and stats.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long = "cfg", default_value_t = 1.0)]
    pub guidance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Identity vector as a JSON array of 68 numbers; zeros by default.
    #[arg(long)]
    pub identity: Option<PathBuf>,
    /// Use the live weights instead of the EMA shadow.
    #[arg(long)]
    pub no_ema: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "aistpp")]
    pub protocol: String,
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub diversity_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Geometric predicate set (JSON); the built-in set by default.
    #[arg(long)]
    pub predicates: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ChoreoCmd {
    /// Validate annotations against the vocabulary; exit 1 if any has errors.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Print diagnostics as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the token ids of an annotation as JSON.
    Tokens {
        file: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum QcCmd {
    /// Seeded batch split and per-batch sample draw.
    Plan {
        #[arg(long)]
        total: usize,
        #[arg(long)]
        batches: usize,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verdict per scored batch. The file holds a JSON array of scores, an
    /// object with `scores` (optional `batch_id`, `sampled`), or JSON lines of such objects.
    Eval {
        file: PathBuf,
        /// Print one JSON report per batch instead of a verdict line.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 3)]
        threshold: i64,
        #[arg(long, default_value_t = 0.95)]
        rate: f64,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// The `train --config` TOML file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `desk` or `full`.
    pub preset: String,
    pub mode: RepresentationMode,
    /// Seeds parameter init; `train.seed` drives batches and dropout.
    pub model_seed: u64,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub sampler: SamplerConfig,
    pub checkpoint_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "desk".into(),
            mode: RepresentationMode::Continuous,
            model_seed: 0,
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            sampler: SamplerConfig::default(),
            checkpoint_every: None,
        }
    }
}

type CliResult = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}

/// Built-in name, explicit file, or `<name>.schema` under $CHOREOFLOW_SCHEMA_DIR.
pub fn resolve_schema(spec: &str) -> Result<SkeletonSchema, String> {
    let from_file = |p: &Path| -> Result<SkeletonSchema, String> {
        let bytes = std::fs::read(p).map_err(with_path(p))?;
        load_schema(&bytes).map_err(|e| format!("SchemaError in {}: {e}", p.display()))
    };
    let path = Path::new(spec);
    if path.is_file() {
        return from_file(path);
    }
    if let Some(dir) = std::env::var_os(SCHEMA_DIR_ENV) {
        for dir in std::env::split_paths(&dir) {
            for candidate in [dir.join(spec), dir.join(format!("{spec}.schema"))] {
                if candidate.is_file() {
                    return from_file(&candidate);
                }
            }
        }
    }
    SkeletonSchema::builtin(spec).ok_or_else(|| format!("SchemaError: unknown schema `{spec}`"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(with_path(path))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(err)?;
    std::fs::write(path, text + "\n").map_err(with_path(path))
}

fn load_vocab(path: Option<&Path>) -> Result<Vocabulary, String> {
    match path {
        Some(p) => Vocabulary::load(p).map_err(|e| format!("ChoreoError: {e}")),
        None => Ok(Vocabulary::default()),
    }
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

/// Motions from a corpus directory (manifest.json) or a flat directory of .dfm files.
fn load_motions(
    dir: &Path,
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<Vec<MotionSequence>, String> {
    if dir.join("manifest.json").is_file() {
        let corpus = read_corpus(dir, schema, strict).map_err(|e| format!("IoError: {e}"))?;
        return Ok(corpus.items.into_iter().map(|i| i.motion).collect());
    }
    let motions = read_motion_dir(dir, schema, strict).map_err(|e| format!("IoError: {e}"))?;
    if motions.is_empty() {
        return Err(format!("IoError: no .dfm files in {}", dir.display()));
    }
    Ok(motions.into_iter().map(|(_, m)| m).collect())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let strict = cli.strict;
    match cli.command {
        Command::Schema(SchemaCmd::Check { schema }) => {
            let s = resolve_schema(schema.as_deref().unwrap_or(&cli.schema))?;
            let summary = serde_json::json!({
                "name": s.name(),
                "version": s.version(),
                "joints": s.joint_count(),
                "native_pose_dim": s.native_pose_dim(),
                "active_rotation_dim": s.active_rotation_dim(),
                "continuous_dim": s.continuous_dim(),
                "jaw_dofs": s.jaw_dofs(),
                "hash": hex::encode(s.hash()),
            });
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&summary).map_err(err)?
            )
            .map_err(err)?;
        }
        Command::Encode {
            input,
            output,
            stats,
        } => {
            let schema = resolve_schema(&cli.schema)?;
            let (m, warnings) =
                read_motion(&input, &schema, strict).map_err(|e| format!("IoError: {e}"))?;
            print_warnings(&warnings);
            let mut c = encode_sequence(&m, &schema).map_err(|e| format!("ReprError: {e}"))?;
            if let Some(p) = stats {
                match read_json::<Normalizer>(&p)? {
                    Normalizer::Hybrid(s) => {
                        c = normalize(&c, &s).map_err(|e| format!("ReprError: {e}"))?
                    }
                    Normalizer::ZScore(_) => return Err(
                        "ReprError: zscore136 stats apply to native frames, not continuous files"
                            .into(),
                    ),
                }
            }
            write_continuous(&c, &schema, &output).map_err(|e| format!("IoError: {e}"))?;
            writeln!(out, "encoded {} frames -> {}", c.len(), output.display()).map_err(err)?;
        }
        Command::Decode {
            input,
            output,
            stats,
        } => {
            let schema = resolve_schema(&cli.schema)?;
            let (c, warnings) =
                read_continuous(&input, &schema, strict).map_err(|e| format!("IoError: {e}"))?;
            print_warnings(&warnings);
            let normalizer = match (c.normalized, stats) {
                (true, Some(p)) => read_json::<Normalizer>(&p)?,
                (true, None) => return Err("ReprError: input is normalized; pass --stats".into()),
                (false, _) => Normalizer::Hybrid(crate::repr::NormStats::identity()),
            };
            let decoded = normalizer
                .decode(&c.frames, &schema, c.fps)
                .map_err(|e| format!("ReprError: {e}"))?;
            if decoded.diagnostics.degenerate_total() > 0 {
                eprintln!(
                    "warning: {} degenerate 6D blocks replaced by identity",
                    decoded.diagnostics.degenerate_total()
                );
            }
            write_motion(&decoded.motion, &schema, &output).map_err(|e| format!("IoError: {e}"))?;
            writeln!(
                out,
                "decoded {} frames -> {}",
                decoded.motion.len(),
                output.display()
            )
            .map_err(err)?;
        }
        Command::Stats(StatsCmd::Fit {
            input,
            out: path,
            mode,
        }) => {
            let schema = resolve_schema(&cli.schema)?;
            let motions = load_motions(&input, &schema, strict)?;
            let normalizer = Normalizer::fit(mode.into(), &motions, &schema)
                .map_err(|e| format!("ReprError: {e}"))?;
            write_json(&path, &normalizer)?;
            writeln!(
                out,
                "fitted {} stats over {} motions -> {}",
                normalizer_mode(&normalizer),
                motions.len(),
                path.display()
            )
            .map_err(err)?;
        }
        Command::Train(args) => train(&cli.schema, strict, args, out)?,
        Command::Sample(args) => sample_cmd(&cli.schema, args, out)?,
        Command::Eval(args) => {
            let schema = resolve_schema(&cli.schema)?;
            let predicates = match &args.predicates {
                Some(p) => read_json::<PredicateSet>(p)?,
                None => PredicateSet::default(),
            };
            let config = EvalConfig {
                protocol: args.protocol.clone(),
                diversity_pairs: args.diversity_pairs,
                seed: args.seed,
                predicates,
            };
            if config.protocol != "aistpp" {
                return Err(format!(
                    "EvalError: unsupported protocol `{}` (only `aistpp`; learned-encoder protocols are out of scope)",
                    config.protocol
                ));
            }
            let fk = |dir: &Path| -> Result<Vec<_>, String> {
                load_motions(dir, &schema, strict)?
                    .iter()
                    .map(|m| forward_kinematics(m, &schema).map_err(|e| format!("KinError: {e}")))
                    .collect()
            };
            let report = evaluate(&fk(&args.real)?, &fk(&args.gen)?, &schema, &config)
                .map_err(|e| format!("EvalError: {e}"))?;
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&report).map_err(err)?
            )
            .map_err(err)?;
        }
        Command::Choreo(ChoreoCmd::Validate { files, vocab, json }) => {
            let vocab = load_vocab(vocab.as_deref())?;
            let mut failed = 0;
            let mut all = Vec::new();
            for f in &files {
                let annotation =
                    ChoreoAnnotation::load(f).map_err(|e| format!("ChoreoError: {e}"))?;
                let diags = validate_annotation(&annotation, &vocab);
                let valid = is_valid(&diags);
                failed += usize::from(!valid);
                if json {
                    all.push(
                        serde_json::json!({ "file": f, "valid": valid, "diagnostics": diags }),
                    );
                } else {
                    writeln!(
                        out,
                        "{}: {}",
                        f.display(),
                        if valid { "valid" } else { "invalid" }
                    )
                    .map_err(err)?;
                    for d in &diags {
                        writeln!(out, "  {d}").map_err(err)?;
                    }
                }
            }
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&all).map_err(err)?)
                    .map_err(err)?;
            }
            if failed > 0 {
                return Err(format!(
                    "ChoreoError: {failed} of {} annotations invalid",
                    files.len()
                ));
            }
        }
        Command::Choreo(ChoreoCmd::Tokens { file, vocab }) => {
            let vocab = load_vocab(vocab.as_deref())?;
            let annotation =
                ChoreoAnnotation::load(&file).map_err(|e| format!("ChoreoError: {e}"))?;
            let tokens =
                extract_tokens(&annotation, &vocab).map_err(|e| format!("ChoreoError: {e}"))?;
            writeln!(out, "{}", serde_json::to_string(&tokens).map_err(err)?).map_err(err)?;
        }
        Command::Qc(QcCmd::Plan {
            total,
            batches,
            n,
            seed,
        }) => {
            let plan = qc_plan(total, batches, n, seed).map_err(|e| format!("ChoreoError: {e}"))?;
            writeln!(out, "{}", serde_json::to_string(&plan).map_err(err)?).map_err(err)?;
        }
        Command::Qc(QcCmd::Eval {
            file,
            threshold,
            rate,
            json,
        }) => {
            let text = std::fs::read_to_string(&file).map_err(with_path(&file))?;
            let parse = |t: &str| {
                serde_json::from_str::<QcInput>(t).map_err(|e| format!("{}: {e}", file.display()))
            };
            let inputs = match parse(&text) {
                Ok(one) => vec![one],
                Err(_) => text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(parse)
                    .collect::<Result<Vec<_>, _>>()?,
            };
            for input in inputs {
                let (batch_id, sampled, scores) = match input {
                    QcInput::Scores(s) => (0, Vec::new(), s),
                    QcInput::Batch {
                        batch_id,
                        sampled,
                        scores,
                    } => (batch_id, sampled, scores),
                };
                let report = qc_evaluate(batch_id, &sampled, &scores, threshold, rate)
                    .map_err(|e| format!("ChoreoError: {e}"))?;
                if json {
                    writeln!(out, "{}", serde_json::to_string(&report).map_err(err)?)
                        .map_err(err)?;
                    continue;
                }
                let verdict = match report.verdict {
                    Verdict::Pass => "pass",
                    Verdict::Fail => "fail",
                };
                writeln!(
                    out,
                    "batch {}: {verdict} ({}/{} acceptable, rate {:.4})",
                    report.batch_id,
                    report.acceptable,
                    report.scores.len(),
                    report.acceptance_rate
                )
                .map_err(err)?;
            }
        }
        Command::SynthDataset(args) => {
            let schema = resolve_schema(&cli.schema)?;
            let cfg = SynthConfig {
                classes: args.classes,
                per_class: args.per_class,
                frames: args.frames,
                fps: args.fps,
                seed: args.seed,
                ..SynthConfig::default()
            };
            let corpus = synth_dataset(&cfg, &schema).map_err(|e| format!("IoError: {e}"))?;
            let manifest =
                write_corpus(&corpus, &schema, &args.out).map_err(|e| format!("IoError: {e}"))?;
            writeln!(
                out,
                "wrote {} motions to {}",
                manifest.entries.len(),
                args.out.display()
            )
            .map_err(err)?;
        }
    }
    Ok(())
}

fn normalizer_mode(n: &Normalizer) -> &'static str {
    match n.mode() {
        RepresentationMode::Continuous => "continuous",
        RepresentationMode::ZScore136 => "zscore136",
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum QcInput {
    Scores(Vec<i64>),
    Batch {
        #[serde(default)]
        batch_id: usize,
        #[serde(default)]
        sampled: Vec<usize>,
        scores: Vec<i64>,
    },
}

fn train(schema_spec: &str, strict: bool, args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let schema = resolve_schema(schema_spec)?;
    let mut cfg: RunConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(with_path(p))?;
            toml::from_str(&text).map_err(|e| format!("ConfigError in {}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.model_seed = s;
    }
    if cfg.checkpoint_every.is_some() {
        cfg.train.checkpoint_every = cfg.checkpoint_every;
    }
    let corpus = read_corpus(&args.corpus, &schema, strict).map_err(|e| format!("IoError: {e}"))?;
    let vocab = Vocabulary::default();
    let prepared = prepare_corpus(&corpus, &schema, cfg.mode, cfg.weights, &vocab).map_err(err)?;
    let model_cfg = ModelConfig::preset(&cfg.preset, prepared.ctx.dim(), prepared.token_vocab)
        .ok_or_else(|| format!("ConfigError: unknown preset `{}`", cfg.preset))?;
    let mut model =
        Model::init(model_cfg, cfg.model_seed).map_err(|e| format!("ModelError: {e}"))?;
    model
        .fit_prior(
            prepared.set.examples.iter().map(|e| &e.frames),
            PRIOR_MIN_STD,
        )
        .map_err(|e| format!("ModelError: {e}"))?;

    std::fs::create_dir_all(&args.out).map_err(with_path(&args.out))?;
    write_json(&args.out.join("stats.json"), &prepared.ctx.normalizer)?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(with_path(&log_path))?);
    let meta = serde_json::json!({
        "schema": schema.name(),
        "schema_hash": hex::encode(schema.hash()),
        "normalizer": prepared.ctx.normalizer,
        "fps": prepared.set.fps,
        "run": cfg,
    });
    let result = train_loop(
        model,
        &prepared.set,
        &prepared.ctx,
        &cfg.train,
        meta,
        Some(&mut log),
        Some(&args.out),
    );
    log.flush().map_err(with_path(&log_path))?;
    let outcome = result.map_err(|e| format!("FlowError: {e}"))?;
    let final_path = args.out.join("final.dfck");
    write_checkpoint(&outcome.checkpoint, &final_path)
        .map_err(|e| format!("CheckpointError: {e}"))?;
    if let Some(last) = outcome.logs.last() {
        writeln!(
            out,
            "step {} total {:.6} vel {:.6}",
            last.step, last.losses["total"], last.losses["vel"]
        )
        .map_err(err)?;
    }
    writeln!(out, "checkpoint -> {}", final_path.display()).map_err(err)?;
    Ok(())
}

fn sample_cmd(schema_spec: &str, args: SampleArgs, out: &mut dyn Write) -> CliResult {
    let schema = resolve_schema(schema_spec)?;
    let ck = read_checkpoint(&args.checkpoint).map_err(|e| format!("CheckpointError: {e}"))?;
    let normalizer: Normalizer = serde_json::from_value(ck.meta["normalizer"].clone())
        .map_err(|e| format!("CheckpointError: checkpoint has no usable normalizer: {e}"))?;
    if ck.meta["schema"].as_str() != Some(schema.name()) {
        return Err(format!(
            "SchemaError: checkpoint was trained on `{}`, not `{}`",
            ck.meta["schema"].as_str().unwrap_or("?"),
            schema.name()
        ));
    }
    let fps = ck.meta["fps"].as_f64().unwrap_or(20.0);
    let annotation =
        ChoreoAnnotation::load(&args.annotation).map_err(|e| format!("ChoreoError: {e}"))?;
    let vocab = Vocabulary::default();
    let diags = validate_annotation(&annotation, &vocab);
    if !is_valid(&diags) {
        for d in &diags {
            eprintln!("{d}");
        }
        return Err("ChoreoError: annotation is invalid".into());
    }
    let tokens = extract_tokens(&annotation, &vocab).map_err(|e| format!("ChoreoError: {e}"))?;
    let identity: Vec<f64> = match &args.identity {
        Some(p) => read_json(p)?,
        None => vec![0.0; IDENTITY_DIM],
    };
    let model = if args.no_ema {
        ck.model()
    } else {
        ck.ema_model()
    };
    let sampler = SamplerConfig {
        steps: args.steps,
        guidance_scale: args.guidance,
        seed: args.seed,
    };
    let cond = ConditioningBundle::new(tokens, identity, 1.0);
    let s = sample(
        &model,
        &cond,
        args.frames,
        &sampler,
        &normalizer,
        &schema,
        fps,
    )
    .map_err(|e| format!("FlowError: {e}"))?;
    write_motion(&s.motion, &schema, &args.out).map_err(|e| format!("IoError: {e}"))?;
    writeln!(
        out,
        "sampled {} frames ({} steps, cfg {}) -> {}",
        s.motion.len(),
        sampler.steps,
        sampler.guidance_scale,
        args.out.display()
    )
    .map_err(err)?;
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

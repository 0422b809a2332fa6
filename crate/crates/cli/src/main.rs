//! `p2tx`: one binary, one subcommand per pipeline stage.

mod config;
mod data;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use p2tx::augment::{self, AugmentationPolicy};
use p2tx::checkpoint::{average_checkpoints, select_best, Checkpoint};
use p2tx::inference::{translate_batch, DecodeConfig};
use p2tx::metrics::{bleu4, chrf_pp, corpus_stats, CorpusStats, Smoothing};
use p2tx::model::Network;
use p2tx::pose::{canonical_components, flatten_all, read_jsonl, validate, Fps, Severity};
use p2tx::resample::{resample, ResampleSpec};
use p2tx::synthetic::{generate, SynthSpec};
use p2tx::tokenizer::{train_vocab, Vocabulary};
use p2tx::trainer::train;

use config::{ConfigErrors, RunConfig};
use data::parse_fps;

#[derive(Parser)]
#[command(name = "p2tx", version, about = "Pose-to-text translation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write pose files and parallel text from a synthetic spec or JSON-lines dumps.
    Ingest(IngestArgs),
    /// Check pose files and print diagnostics as JSON.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Resample a pose file or directory to a new frame rate.
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "25", value_parser = parse_fps)]
        fps: Fps,
    },
    /// Write randomly augmented copies of a pose file.
    AugmentPreview(AugmentArgs),
    /// Train a BPE vocabulary.
    TrainVocab {
        #[arg(long)]
        size: usize,
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Average checkpoints elementwise.
    Average {
        #[arg(long)]
        output: PathBuf,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Decode pose files to text, one line per file.
    Translate(TranslateArgs),
    /// Score hypotheses against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Bleu)]
        metric: Metric,
        #[arg(long, value_enum, default_value_t = SmoothingArg::Exp)]
        smoothing: SmoothingArg,
    },
    /// Hours of video per thousand unique words.
    Stats {
        #[arg(long)]
        hours: f64,
        /// Text corpus whose unique words are counted.
        #[arg(long, conflicts_with = "unique_words")]
        corpus: Option<PathBuf>,
        #[arg(long, required_unless_present = "corpus")]
        unique_words: Option<usize>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// TOML synthetic corpus spec.
    #[arg(long, conflicts_with = "jsonl")]
    synthetic: Option<PathBuf>,
    /// JSON-lines pose dumps, one frame per line.
    #[arg(long, num_args = 1..)]
    jsonl: Vec<PathBuf>,
    #[arg(long, default_value = "25", value_parser = parse_fps)]
    fps: Fps,
    /// Keypoint counts of the body, left-hand and right-hand components.
    #[arg(long, num_args = 3, value_names = ["BODY", "LEFT", "RIGHT"])]
    components: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_rotate: bool,
    #[arg(long)]
    no_shear: bool,
    #[arg(long)]
    no_scale: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Number of best checkpoints averaged at the end.
    #[arg(long, default_value_t = 3)]
    average: usize,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Pose file or directory of pose files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "25", value_parser = parse_fps)]
    fps: Fps,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 256)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    repetition_penalty: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Bleu,
    Chrf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothingArg {
    Exp,
    None,
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("P2TX_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("P2TX_SEED={s:?} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    if let Some(spec_path) = &args.synthetic {
        let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
        let mut spec: SynthSpec = toml::from_str(&text).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
        if let Some(seed) = env_seed()? {
            spec.seed = seed;
        }
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(ConfigErrors(problems).into());
        }
        let (poses, texts) = generate(&spec)?;
        data::write_corpus(&args.out, &poses, &texts)?;
        return print_json(&json!({ "pairs": poses.len(), "out": args.out }));
    }
    if args.jsonl.is_empty() {
        bail!("ingest needs --synthetic or --jsonl");
    }
    let pose_dir = args.out.join("poses");
    std::fs::create_dir_all(&pose_dir)?;
    for (i, path) in args.jsonl.iter().enumerate() {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let reader = std::io::BufReader::new(file);
        let components = match &args.components {
            Some(c) => canonical_components(c[0], c[1], c[2]),
            None => Vec::new(),
        };
        let pose = read_jsonl(reader, args.fps, components).with_context(|| format!("reading {}", path.display()))?;
        data::save_pose(&pose_dir.join(format!("{i:05}.pose")), &pose)?;
    }
    print_json(&json!({ "poses": args.jsonl.len(), "out": args.out }))
}

fn validate_files(files: &[PathBuf]) -> anyhow::Result<bool> {
    let mut ok = true;
    let mut reports = Vec::new();
    for f in files {
        let pose = data::load_pose(f)?;
        let diagnostics = validate(&pose);
        ok &= diagnostics.iter().all(|d| d.severity != Severity::Error);
        reports.push(json!({ "file": f, "diagnostics": diagnostics }));
    }
    print_json(&json!(reports))?;
    Ok(ok)
}

fn resample_files(input: &Path, output: &Path, fps: Fps) -> anyhow::Result<()> {
    let spec = ResampleSpec::new(fps)?;
    if input.is_file() {
        let pose = resample(&data::load_pose(input)?, spec)?;
        data::save_pose(output, &pose)?;
        return print_json(&json!({ "files": 1, "frames": pose.num_frames(), "fps": fps.as_f64() }));
    }
    std::fs::create_dir_all(output)?;
    let files = data::pose_files(input)?;
    for f in &files {
        let pose = resample(&data::load_pose(f)?, spec)?;
        data::save_pose(&output.join(f.file_name().unwrap()), &pose)?;
    }
    print_json(&json!({ "files": files.len(), "fps": fps.as_f64() }))
}

fn augment_preview(args: AugmentArgs) -> anyhow::Result<()> {
    let mut policy = AugmentationPolicy {
        sigma: args.sigma,
        rotate: !args.no_rotate,
        shear: !args.no_shear,
        scale: !args.no_scale,
        ..AugmentationPolicy::default()
    };
    if let Some(seed) = env_seed()? {
        policy.seed = seed;
    }
    if let Some(seed) = args.seed {
        policy.seed = seed;
    }
    policy.validate()?;
    let pose = data::load_pose(&args.input)?;
    std::fs::create_dir_all(&args.output_dir)?;
    let mut rng = policy.rng();
    let mut drawn = Vec::new();
    for i in 0..args.count {
        let params = augment::sample_params(&policy, &mut rng);
        let out = augment::apply(&pose, &params, policy.center)?;
        data::save_pose(&args.output_dir.join(format!("preview_{i:03}.pose")), &out)?;
        drawn.push(params);
    }
    let report = json!({ "policy": policy, "params": drawn });
    std::fs::write(args.output_dir.join("params.json"), serde_json::to_string_pretty(&report)?)?;
    print_json(&report)
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if cfg.augmentation.is_some() {
        cfg.training.augmentation = cfg.augmentation;
    }
    let seed = args.seed.or(env_seed()?).unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if let Some(d) = args.run_dir {
        cfg.run_dir = Some(d);
    }
    if let Some(n) = args.max_epochs {
        cfg.training.max_epochs = n;
    }
    if let Some(b) = args.batch_size {
        cfg.training.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.training.learning_rate = lr;
    }
    if let Some(p) = args.pretrained {
        cfg.training.pretrained = Some(p);
    }
    let mut problems = cfg.problems();
    if args.average == 0 {
        problems.push("--average must be at least 1".into());
    }
    if !problems.is_empty() {
        return Err(ConfigErrors(problems).into());
    }

    let paths = &cfg.paths;
    let target = Fps::whole(cfg.target_fps)?;
    let vocab = Vocabulary::from_text(&std::fs::read_to_string(paths.vocab.as_ref().unwrap())?)?;
    let train_pairs = data::load_pairs(paths.train_poses.as_ref().unwrap(), paths.train_text.as_ref().unwrap(), target)?;
    let dev_pairs = data::load_pairs(paths.dev_poses.as_ref().unwrap(), paths.dev_text.as_ref().unwrap(), target)?;
    let input_dim = flatten_all(&train_pairs[0].pose, 0.0)?.dim();
    for (i, p) in train_pairs.iter().chain(&dev_pairs).enumerate() {
        let d = flatten_all(&p.pose, 0.0)?.dim();
        if d != input_dim {
            bail!("pose {i} has feature width {d}, expected {input_dim}");
        }
    }
    let model = cfg.model.to_config(input_dim, vocab.len());

    let run_dir = cfg.run_dir.clone().unwrap();
    let ckpt_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::write(run_dir.join("config.resolved.toml"), toml::to_string(&cfg)?)?;
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(run_dir.join("log.jsonl"))?);
    let mut log_error = None;
    let outcome = train(&train_pairs, &dev_pairs, &vocab, &model, &cfg.training, |entry| {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }

    let mut saved = Vec::new();
    for c in &outcome.checkpoints {
        let path = ckpt_dir.join(format!("epoch_{:04}.ckpt", c.epoch));
        c.save(&path)?;
        saved.push(json!({ "epoch": c.epoch, "update": c.update_count, "dev_bleu": c.dev_score, "path": path }));
    }
    let n = args.average.min(outcome.checkpoints.len());
    let best = select_best(&outcome.checkpoints, n)?;
    let averaged = average_checkpoints(&best)?;
    let avg_path = ckpt_dir.join("average.ckpt");
    averaged.save(&avg_path)?;
    let averaged_bleu = p2tx::trainer::evaluate_dev(
        &Network::new(&averaged.params),
        &vocab,
        &dev_pairs
            .iter()
            .map(|p| flatten_all(&p.pose, 0.0).map(|f| f.truncated(model.max_positions)))
            .collect::<Result<Vec<_>, _>>()?,
        &dev_pairs.iter().map(|p| p.text.clone()).collect::<Vec<_>>(),
        &cfg.training.dev_decode,
    )?;
    let summary = json!({
        "checkpoints": saved,
        "average": { "path": avg_path, "of_epochs": best.iter().map(|c| c.epoch).collect::<Vec<_>>(), "dev_bleu": averaged_bleu },
        "vocab_hash": vocab.hash(),
        "model": model,
    });
    std::fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    print_json(&summary)
}

fn run_translate(args: TranslateArgs) -> anyhow::Result<()> {
    let decode = DecodeConfig {
        beam_size: args.beam,
        max_len: args.max_len,
        alpha: args.alpha,
        repetition_penalty: args.repetition_penalty,
    };
    let problems: Vec<String> = decode.problems();
    if !problems.is_empty() {
        return Err(ConfigErrors(problems).into());
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vocab = Vocabulary::from_text(&std::fs::read_to_string(&args.vocab)?)?;
    if let Some(h) = &ckpt.vocab_hash {
        if *h != vocab.hash() {
            bail!("vocabulary mismatch: checkpoint uses vocabulary {h}, {} has {}", args.vocab.display(), vocab.hash());
        }
    }
    let net = Network::new(&ckpt.params);
    let max_frames = net.config().max_positions;
    let sources = data::load_poses(&args.input, Some(args.fps))?
        .iter()
        .map(|p| Ok(flatten_all(p, 0.0)?.truncated(max_frames)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let hyps = translate_batch(&net, &vocab, &sources, &decode)?;
    let mut out = String::new();
    for h in &hyps {
        out.push_str(&h.text.replace('\n', " "));
        out.push('\n');
    }
    std::fs::write(&args.output, out)?;
    let truncated = hyps.iter().filter(|h| h.hit_max_len).count();
    print_json(&json!({ "sentences": hyps.len(), "hit_max_len": truncated, "output": args.output }))
}

fn run_evaluate(hyp: &Path, reference: &Path, metric: Metric, smoothing: SmoothingArg) -> anyhow::Result<()> {
    let hyps = data::read_lines(hyp)?;
    let refs = data::read_lines(reference)?;
    let report = match metric {
        Metric::Bleu => {
            let smoothing = match smoothing {
                SmoothingArg::Exp => Smoothing::Exp,
                SmoothingArg::None => Smoothing::None,
            };
            json!({ "metric": "bleu", "report": bleu4(&hyps, &refs, smoothing)? })
        }
        Metric::Chrf => json!({ "metric": "chrf++", "report": chrf_pp(&hyps, &refs)? }),
    };
    print_json(&report)
}

fn run_stats(hours: f64, corpus: Option<PathBuf>, unique_words: Option<usize>) -> anyhow::Result<()> {
    let stats = match (corpus, unique_words) {
        (Some(path), _) => corpus_stats(&std::fs::read_to_string(&path)?, hours)?,
        (None, Some(n)) => CorpusStats::from_counts(hours, n)?,
        (None, None) => bail!("stats needs --corpus or --unique-words"),
    };
    print_json(&json!({
        "duration_hours": stats.duration_hours,
        "unique_words": stats.unique_words,
        "ratio": stats.ratio,
        "ratio_2dp": format!("{:.2}", stats.ratio),
    }))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Ingest(args) => ingest(args)?,
        Command::Validate { files } => return validate_files(&files),
        Command::Resample { input, output, fps } => resample_files(&input, &output, fps)?,
        Command::AugmentPreview(args) => augment_preview(args)?,
        Command::TrainVocab { size, input, output } => {
            let mut lines = Vec::new();
            for f in &input {
                lines.extend(data::read_lines(f)?);
            }
            let vocab = train_vocab(&lines, size)?;
            std::fs::write(&output, vocab.to_text())?;
            print_json(&json!({ "size": vocab.len(), "merges": vocab.merges().len(), "hash": vocab.hash(), "output": output }))?;
        }
        Command::Train(args) => run_train(args)?,
        Command::Average { output, checkpoints } => {
            let loaded = checkpoints
                .iter()
                .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let avg = average_checkpoints(&loaded)?;
            avg.save(&output)?;
            print_json(&json!({ "inputs": checkpoints, "output": output, "update_count": avg.update_count }))?;
        }
        Command::Translate(args) => run_translate(args)?,
        Command::Evaluate { hyp, reference, metric, smoothing } => run_evaluate(&hyp, &reference, metric, smoothing)?,
        Command::Stats { hours, corpus, unique_words } => run_stats(hours, corpus, unique_words)?,
    }
    Ok(true)
}

fn report_error(error: serde_json::Value) {
    let _ = serde_json::to_writer(std::io::stderr().lock(), &error);
    eprintln!();
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error(json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            match e.downcast_ref::<ConfigErrors>() {
                Some(ConfigErrors(problems)) => {
                    report_error(json!({ "error": "config", "message": e.to_string(), "problems": problems }))
                }
                None => report_error(json!({
                    "error": "failure",
                    "message": e.to_string(),
                    "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                })),
            }
            ExitCode::from(1)
        }
    }
}

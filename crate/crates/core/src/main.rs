//! `paec`: dataset generation, stage pretraining, training, evaluation,
//! inference and spectrogram plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use paec::config::{ExperimentConfig, Preset, ProviderKind};
use paec::eval::{evaluate, Enhancer, EvalContext, Identity, Neural, Oracle};
use paec::metrics::erle;
use paec::model::{
    count_params, load_checkpoint, Checkpoint, CheckpointKind, Model, ModelVariantConfig, SpeakerInputs, Variant,
};
use paec::pipeline::run_pipeline;
use paec::plot::render;
use paec::signal::stft_default;
use paec::signal::wav::{read_wav, write_wav_f32};
use paec::speaker::{embed_speaker, EmbeddingProvider};
use paec::synth::{format_summary, generate_dataset, read_manifest, split_speakers, Corpus, DatasetSizes, DirCorpus, MemCorpus};
use paec::train::{
    load_examples, pretrain_stage, train, ExampleOptions, PretrainSpec, PretrainTask, RunIo, StrategyKind, TrainStrategy,
};
use paec::PaecError;

#[derive(Parser)]
#[command(name = "paec", version, about = "Hybrid personalized acoustic echo cancellation")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory every output is written under. Overrides the config file
    /// and PAEC_OUTPUT_ROOT.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    /// Speaker embedding source.
    #[arg(long, global = true, value_enum)]
    embedding_provider: Option<ProviderArg>,
    /// Embedding table for `--embedding-provider file`.
    #[arg(long, global = true)]
    embedding_file: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Stub,
    File,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a small synthetic speech corpus in the on-disk corpus layout.
    Mkcorpus(MkcorpusArgs),
    /// Synthesize train/val/test manifests and audio from a corpus.
    Datagen(DatagenArgs),
    /// Pretrain one stage on its own task.
    Pretrain(PretrainArgs),
    /// Train a variant under a pretraining strategy.
    Train(TrainArgs),
    /// Evaluate systems on a test manifest.
    Eval(EvalArgs),
    /// Enhance one recording.
    Infer(InferArgs),
    /// Render log-magnitude spectrograms of WAV files into one image.
    Plot(PlotArgs),
    /// Print parameter counts of the variant configurations.
    Params(ParamsArgs),
}

#[derive(Args)]
struct MkcorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    speakers: usize,
    #[arg(long, default_value_t = 4)]
    utterances: usize,
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hours of training audio; validation and test sets scale along.
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    clip_seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// gftnn-aec, gftnn-pse, gftnn-l, tdpf1, tdpf2 or tdpf3.
    #[arg(long)]
    variant: Option<String>,
    /// Use the small test configuration.
    #[arg(long)]
    toy: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory: the checkpoint goes to `<out>/checkpoint`, the loss
    /// log to `<out>/loss.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct PretrainArgs {
    /// echo_map, aec_ns or pse.
    #[arg(long)]
    task: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// scratch, joint, joint_freeze, finetune or finetune_freeze.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    stage1: Option<PathBuf>,
    #[arg(long)]
    stage2: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// `identity`, `oracle`, a checkpoint, or `NAME=CHECKPOINT`. Repeatable.
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    /// Report directory; `report.csv` and `report.json` are written there.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quality scorer command with {ref} and {deg} placeholders.
    #[arg(long)]
    pesq_cmd: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    mic: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    enroll: Option<PathBuf>,
    /// Speaker id for the file embedding provider.
    #[arg(long)]
    speaker_id: Option<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the first-stage output as audio and one spectrogram image
    /// per stage.
    #[arg(long)]
    dump_stages: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// One panel per input, top to bottom.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    toy: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<PaecError> for Failure {
    fn from(e: PaecError) -> Self {
        match e {
            PaecError::Config(_) | PaecError::Strategy(_) | PaecError::Parameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

struct Ctx {
    cfg: ExperimentConfig,
    lr_in_config: bool,
}

impl Ctx {
    fn load(cli: &Cli) -> CliResult<Self> {
        let (mut cfg, lr_in_config) = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| usage(format!("reading {}: {e}", p.display())))?;
                let cfg = ExperimentConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                let raw: toml::Table = text.parse().unwrap_or_default();
                let lr = raw
                    .get("train")
                    .and_then(|t| t.get("adam"))
                    .and_then(|a| a.get("lr"))
                    .is_some();
                (cfg, lr)
            }
            None => (ExperimentConfig::default(), false),
        };
        cfg.apply_env();
        if let Some(root) = &cli.output_root {
            cfg.paths.output_root = root.clone();
        }
        match cli.embedding_provider {
            Some(ProviderArg::Stub) => cfg.speaker.provider = ProviderKind::Stub,
            Some(ProviderArg::File) => cfg.speaker.provider = ProviderKind::File,
            None => {}
        }
        if let Some(f) = &cli.embedding_file {
            cfg.speaker.file = Some(f.clone());
            if cli.embedding_provider.is_none() {
                cfg.speaker.provider = ProviderKind::File;
            }
        }
        Ok(Self { cfg, lr_in_config })
    }

    fn out(&self, p: &Path) -> PathBuf {
        self.cfg.output_path(p)
    }

    /// An input path as given, or under the output root when only that exists.
    fn input(&self, p: &Path) -> PathBuf {
        if p.exists() || p.is_absolute() {
            return p.to_path_buf();
        }
        let under = self.out(p);
        if under.exists() {
            under
        } else {
            p.to_path_buf()
        }
    }

    /// A checkpoint directory, or the checkpoint inside a run directory.
    fn checkpoint(&self, p: &Path) -> PathBuf {
        let p = self.input(p);
        let inner = p.join("checkpoint");
        if inner.is_dir() {
            inner
        } else {
            p
        }
    }

    fn provider(&self) -> CliResult<Box<dyn EmbeddingProvider>> {
        Ok(self.cfg.speaker.provider()?)
    }

    fn model_config(&self, args: &ModelArgs) -> CliResult<ModelVariantConfig> {
        let mut cfg = self.cfg.clone();
        if let Some(v) = &args.variant {
            cfg.model.variant = v.parse::<Variant>()?;
            cfg.model.config = None;
        }
        if args.toy {
            cfg.model.preset = Preset::Toy;
            cfg.model.config = None;
        }
        Ok(cfg.model_config()?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = Ctx::load(&cli).and_then(|ctx| {
        ctx.cfg.validate()?;
        run(&cli.cmd, &ctx)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: &Cmd, ctx: &Ctx) -> CliResult {
    match cmd {
        Cmd::Mkcorpus(a) => cmd_mkcorpus(a, ctx),
        Cmd::Datagen(a) => cmd_datagen(a, ctx),
        Cmd::Pretrain(a) => cmd_pretrain(a, ctx),
        Cmd::Train(a) => cmd_train(a, ctx),
        Cmd::Eval(a) => cmd_eval(a, ctx),
        Cmd::Infer(a) => cmd_infer(a, ctx),
        Cmd::Plot(a) => cmd_plot(a, ctx),
        Cmd::Params(a) => cmd_params(a),
    }
}

fn cmd_mkcorpus(a: &MkcorpusArgs, ctx: &Ctx) -> CliResult {
    if a.speakers == 0 || a.utterances == 0 || !(a.seconds > 0.0) {
        return Err(usage("speakers, utterances and seconds must be positive"));
    }
    let out = ctx.out(&a.out);
    let seed = a.seed.unwrap_or(ctx.cfg.data.seed);
    MemCorpus::synthetic(a.speakers, a.utterances, a.seconds, seed).write_to(&out)?;
    println!("wrote {} speakers to {}", a.speakers, out.display());
    Ok(())
}

fn cmd_datagen(a: &DatagenArgs, ctx: &Ctx) -> CliResult {
    let corpus_path = ctx.input(a.corpus.as_ref().unwrap_or(&ctx.cfg.paths.corpus));
    let out = ctx.out(a.out.as_ref().unwrap_or(&ctx.cfg.paths.data));
    let seed = a.seed.unwrap_or(ctx.cfg.data.seed);
    let mut sizes = match a.hours {
        Some(h) => DatasetSizes::scaled(h),
        None => ctx.cfg.data.sizes.clone(),
    };
    if let Some(s) = a.clip_seconds {
        sizes.clip_seconds = s;
    }
    sizes.validate()?;
    // Corpus problems are usage errors and are caught before any output.
    let corpus = DirCorpus::open(&corpus_path).map_err(|e| usage(e.to_string()))?;
    split_speakers(&corpus.speakers(), seed).map_err(|e| usage(e.to_string()))?;
    let [n_train, n_val, n_test] = sizes.counts();
    info!("generating {n_train} train, {n_val} val and {n_test} test clips into {}", out.display());
    let summary = generate_dataset(&corpus, &out, &sizes, seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    print!("{}", format_summary(&summary));
    Ok(())
}

fn train_options(run: &RunArgs, ctx: &Ctx, default_lr: Option<f64>) -> paec::train::TrainOptions {
    let mut o = ctx.cfg.train.clone();
    if let Some(s) = run.steps {
        o.steps = s;
    }
    if let Some(s) = run.seed {
        o.seed = s;
    }
    if let Some(b) = run.batch_size {
        o.batch_size = b;
    }
    if let Some(c) = run.checkpoint_every {
        o.checkpoint_every = c;
    }
    match (run.lr, default_lr) {
        (Some(lr), _) => o.adam.lr = lr,
        (None, Some(lr)) if !ctx.lr_in_config => o.adam.lr = lr,
        _ => {}
    }
    o
}

fn run_io(run: &RunArgs, ctx: &Ctx) -> CliResult<RunIo> {
    let dir = ctx.out(&run.out);
    let checkpoint = dir.join("checkpoint");
    if !run.resume && checkpoint.exists() {
        warn!("replacing the existing checkpoint in {}", dir.display());
    }
    Ok(RunIo {
        checkpoint_dir: Some(checkpoint),
        log_path: Some(dir.join("loss.jsonl")),
        resume: run.resume,
    })
}

fn load_training_set(run: &RunArgs, ctx: &Ctx, compress_p: f64, with_speaker: bool) -> CliResult<Vec<paec::train::Example>> {
    let manifest = ctx.input(&run.manifest);
    if !manifest.is_file() {
        return Err(usage(format!("manifest {} does not exist", manifest.display())));
    }
    let provider = ctx.provider()?;
    let opts = ExampleOptions {
        dsp: ctx.cfg.dsp.clone(),
        compress_p,
        with_speaker,
    };
    info!("preparing examples from {}", manifest.display());
    Ok(load_examples(&manifest, provider.as_ref(), &opts)?)
}

fn report_log(log: &[paec::train::LogEntry]) {
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!("step {}: loss {:.6}", first.step, first.total);
        println!("step {}: loss {:.6}", last.step, last.total);
    }
}

fn cmd_pretrain(a: &PretrainArgs, ctx: &Ctx) -> CliResult {
    let task: PretrainTask = a.task.parse()?;
    let model_cfg = ctx.model_config(&a.model)?;
    let spec = PretrainSpec::for_variant(&model_cfg, task)?;
    spec.validate()?;
    let opts = train_options(&a.run, ctx, None);
    opts.validate()?;
    let io = run_io(&a.run, ctx)?;
    let examples = load_training_set(&a.run, ctx, spec.compress_p, task == PretrainTask::Pse)?;
    let out = pretrain_stage(&spec, &examples, &opts, &io)?;
    report_log(&out.log);
    println!("stage checkpoint: {}", io.checkpoint_dir.unwrap().display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, ctx: &Ctx) -> CliResult {
    let model_cfg = ctx.model_config(&a.model)?;
    let mut strategy = ctx.cfg.strategy();
    if let Some(s) = &a.strategy {
        strategy.kind = s.parse::<StrategyKind>()?;
    }
    if let Some(p) = &a.stage1 {
        strategy.stage1 = Some(p.clone());
    }
    if let Some(p) = &a.stage2 {
        strategy.stage2 = Some(p.clone());
    }
    let strategy = TrainStrategy {
        kind: strategy.kind,
        stage1: strategy.stage1.map(|p| ctx.checkpoint(&p)),
        stage2: strategy.stage2.map(|p| ctx.checkpoint(&p)),
    };
    strategy.validate(&model_cfg)?;
    let opts = train_options(&a.run, ctx, Some(strategy.kind.default_lr()));
    opts.validate()?;
    let io = run_io(&a.run, ctx)?;
    let examples = load_training_set(&a.run, ctx, model_cfg.compress_p, model_cfg.variant.is_personalized())?;
    let out = train(&model_cfg, &strategy, &examples, &opts, &io)?;
    report_log(&out.log);
    println!("model checkpoint: {}", io.checkpoint_dir.unwrap().display());
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Model> {
    let ck = load_checkpoint(path).map_err(|e| usage(e.to_string()))?;
    model_from(&ck).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn model_from(ck: &Checkpoint) -> paec::Result<Model> {
    match &ck.kind {
        CheckpointKind::Model { .. } => Model::from_checkpoint(ck),
        CheckpointKind::Stage { .. } => Err(PaecError::Config(
            "a single pretrained stage; train a full model from it first".into(),
        )),
    }
}

fn cmd_eval(a: &EvalArgs, ctx: &Ctx) -> CliResult {
    let manifest = ctx.input(&a.manifest);
    if !manifest.is_file() {
        return Err(usage(format!("manifest {} does not exist", manifest.display())));
    }
    let hook = match &a.pesq_cmd {
        Some(t) => Some(paec::metrics::ScoreHook::new(t)?),
        None => ctx.cfg.score_hook()?,
    };
    let mut systems: Vec<Box<dyn Enhancer>> = Vec::new();
    for s in &a.systems {
        let (name, path) = match s.split_once('=') {
            Some((n, p)) => (n.to_string(), Some(p)),
            None => (s.clone(), None),
        };
        match (name.as_str(), path) {
            ("identity", None) => systems.push(Box::new(Identity)),
            ("oracle", None) => systems.push(Box::new(Oracle)),
            (_, p) => {
                let path = ctx.checkpoint(Path::new(p.unwrap_or(s)));
                let model = load_model(&path)?;
                let name = if p.is_some() { name } else { model.variant().to_string() };
                systems.push(Box::new(Neural { name, model }));
            }
        }
    }
    let report_dir = ctx.out(a.out.as_ref().unwrap_or(&ctx.cfg.paths.reports));
    let root = paec::synth::manifest_root(&manifest);
    let clips = read_manifest(&manifest)?
        .iter()
        .map(|r| r.load(&root))
        .collect::<paec::Result<Vec<_>>>()?;
    let provider = ctx.provider()?;
    if hook.is_none() {
        info!("no quality scorer configured; PESQ columns are unavailable");
    }
    let ectx = EvalContext {
        dsp: ctx.cfg.dsp.clone(),
        provider: provider.as_ref(),
        scorer: hook.map(|h| (h, report_dir.join("scorer_tmp"))),
    };
    let refs: Vec<&dyn Enhancer> = systems.iter().map(|b| b.as_ref()).collect();
    let report = evaluate(&refs, &clips, &ectx);
    let _ = fs::remove_dir(report_dir.join("scorer_tmp"));
    print!("{}", report.to_table());
    let (csv, json) = report.write(&report_dir, "report")?;
    println!("report: {} {}", csv.display(), json.display());
    Ok(())
}

fn cmd_infer(a: &InferArgs, ctx: &Ctx) -> CliResult {
    let model = load_model(&ctx.checkpoint(&a.checkpoint))?;
    let personalized = model.variant().is_personalized();
    if personalized && a.enroll.is_none() {
        return Err(usage(format!("{} needs an enrollment recording (--enroll)", model.variant())));
    }
    let provider = ctx.provider()?;
    let mic = read_wav(&ctx.input(&a.mic))?;
    let reference = read_wav(&ctx.input(&a.reference))?;
    let speaker = match (&a.enroll, personalized) {
        (Some(p), true) => {
            let enroll = read_wav(&ctx.input(p))?;
            let emb = embed_speaker(&enroll, a.speaker_id.as_deref(), provider.as_ref())?;
            Some(SpeakerInputs::from_enrollment(&enroll, &emb, model.cfg.compress_p)?)
        }
        _ => None,
    };
    let out = run_pipeline(&model, &mic, &reference, speaker, &ctx.cfg.dsp)?;
    let path = ctx.out(&a.out);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let s_hat = &out.enhanced.s_hat;
    write_wav_f32(&path, s_hat)?;
    println!("estimated delay: {:.1} ms", out.frontend.delay.delay_samples as f64 / 16.0);
    let n = s_hat.len().min(mic.len());
    match erle(&mic.samples[..n], &s_hat.samples[..n]) {
        Ok(v) => println!("ERLE (mic vs output): {v:.2} dB"),
        Err(e) => warn!("ERLE not computed: {e}"),
    }
    println!("wrote {}", path.display());
    if a.dump_stages {
        let stem = path.with_extension("");
        let stem = stem.display();
        if let Some(s1) = &out.enhanced.s1 {
            let wav = PathBuf::from(format!("{stem}_stage1.wav"));
            write_wav_f32(&wav, &paec::signal::istft(s1)?)?;
            println!("wrote {}", wav.display());
        }
        for (k, spec) in [(1, &out.enhanced.s1), (2, &out.enhanced.s2)] {
            if let Some(spec) = spec {
                let png = PathBuf::from(format!("{stem}_stage{k}.png"));
                render(&[spec])?.write_png(&png)?;
                println!("wrote {}", png.display());
            }
        }
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs, ctx: &Ctx) -> CliResult {
    let specs = a
        .inputs
        .iter()
        .map(|p| {
            let p = ctx.input(p);
            if !p.is_file() {
                return Err(usage(format!("{} does not exist", p.display())));
            }
            Ok(stft_default(&read_wav(&p)?)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<_> = specs.iter().collect();
    let out = ctx.out(&a.out);
    render(&refs)?.write_png(&out)?;
    println!("wrote {} ({} panels)", out.display(), refs.len());
    Ok(())
}

/// Reference budgets in millions.
fn budget(v: Variant) -> f64 {
    match v {
        Variant::GftnnAec => 2.45,
        Variant::GftnnPse => 3.54,
        Variant::GftnnL => 7.15,
        _ => 6.59,
    }
}

fn cmd_params(a: &ParamsArgs) -> CliResult {
    println!("{:10} {:>12} {:>10}", "variant", "params (M)", "budget (M)");
    for v in Variant::ALL {
        let cfg = if a.toy { ModelVariantConfig::toy(v) } else { ModelVariantConfig::default_for(v) };
        let n = count_params(&cfg)? as f64 / 1e6;
        println!("{:10} {n:>12.3} {:>10.2}", v.name(), budget(v));
    }
    Ok(())
}

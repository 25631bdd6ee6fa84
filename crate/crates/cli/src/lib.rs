//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the TOML file
//! given with `--config`, then individual flags. A `--seed` flag replaces the
//! root seed of the stage it configures; every random stream inside the
//! library is derived from that root seed by tag, so two runs with the same
//! seed, configuration and data are bit-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use skelpaint::chamfer::{chamfer_max, NnMethod, Point6};
use skelpaint::colorize::{apply_color_mask, build_cloud, colorize_cloud, export_ply, write_ply, ColorScheme};
use skelpaint::evalbench::{evaluate, generate_dataset, train_test_split, MANIFEST_NAME};
use skelpaint::net::{forward_repaint, InputMode, RepaintModel};
use skelpaint::rng::rng_for;
use skelpaint::skeleton_data::{load_manifest, normalize_sequence, parse_sequence, sample_frames, write_manifest};
use skelpaint::training::{
    baseline_model, model_input, prepare_cloud, pretrain_stream, run_protocol, write_metrics_csv, FusedClassifier,
    Fusion, LabeledSet, ProtocolKind, RunConfig, UnlabeledSet,
};
use skelpaint::{Error, Result};

/// Exit status for success, validation or usage errors, and I/O errors.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "skelpaint", version, about = "Skeleton-cloud colorization and repainting")]
pub struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true, env = "SKELPAINT_THREADS")]
    pub threads: Option<usize>,

    /// Log verbosity: error, warn, info, debug or trace (RUST_LOG also works).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic skeleton-action dataset with train/test manifests.
    GenData(GenDataArgs),
    /// Colorize one sequence file and write the cloud as PLY.
    Colorize(ColorizeArgs),
    /// Pretrain one colorization stream by repainting.
    Pretrain(PretrainArgs),
    /// Train a linear classifier on frozen encoders.
    Probe(ClassifyArgs),
    /// Fine-tune encoders and classifier jointly (semi-supervised or supervised).
    Finetune(FinetuneArgs),
    /// Evaluate a trained classifier on a test manifest.
    Eval(EvalArgs),
    /// Repaint a sequence with a trained model and write the output as PLY.
    ExportPly(ExportPlyArgs),
    /// Time brute-force and tree-based Chamfer distance; prints CSV.
    BenchChamfer(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for sequence files and manifests.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration; its [synthetic] table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Sequences per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Joints per skeleton.
    #[arg(long)]
    pub joints: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Persons per sequence (1 or 2).
    #[arg(long)]
    pub persons: Option<usize>,
    /// Gaussian positional noise, meters.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of each class placed in the test split.
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Root seed for generation and the split.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    /// Input sequence file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Colorization scheme: temporal, spatial or person.
    #[arg(long, default_value = "temporal")]
    pub scheme: ColorScheme,
    /// Fraction of frames (or joints) kept colored; 1 colors everything.
    #[arg(long, default_value_t = 1.0)]
    pub mask: f64,
    /// Resample to this many frames first.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Translate the first frame's root joint to the origin first.
    #[arg(long)]
    pub normalize: bool,
    /// Root joint used by --normalize (0-based).
    #[arg(long, default_value_t = 0)]
    pub root_joint: usize,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Manifest of training sequences; labels are ignored.
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML run configuration; [data] and [pretrain] are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Colorization scheme of the stream.
    #[arg(long)]
    pub scheme: Option<ColorScheme>,
    /// Encoder input: raw, hint or hint:<ratio>.
    #[arg(long)]
    pub input: Option<InputMode>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate of the cosine schedule.
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Final learning rate of the cosine schedule.
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Frames kept per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV (epoch,split,loss,accuracy).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FusionArg {
    Concat,
    Score,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Concat => Fusion::Concat,
            FusionArg::Score => Fusion::Score,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub test: PathBuf,
    /// Pretrained stream checkpoint; repeat for multiple streams.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Use a random, never-pretrained encoder on raw input instead of --model.
    #[arg(long, conflicts_with = "models")]
    pub baseline: bool,
    /// TOML run configuration; [data], [pretrain] (for --baseline) and [classifier] are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate of the cosine schedule.
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Final learning rate of the cosine schedule.
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Stream fusion rule.
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Z-score probe features with training-split statistics.
    #[arg(long)]
    pub standardize: bool,
    /// Frames kept per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output classifier checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV (epoch,split,loss,accuracy).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Semi,
    Supervised,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: ClassifyArgs,
    /// Fine-tuning protocol.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Labeled fraction per class for the semi-supervised protocol.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Directory for the fine-tuned stream checkpoints.
    #[arg(long)]
    pub models_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test manifest.
    #[arg(long)]
    pub test: PathBuf,
    /// Stream checkpoint; repeat for multiple streams.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Classifier checkpoint.
    #[arg(long)]
    pub classifier: PathBuf,
    /// TOML run configuration; [data] is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frames kept per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Per-class metrics CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPlyArgs {
    /// Stream checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Input sequence file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Frames kept per sequence.
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    /// Root joint for normalization (0-based).
    #[arg(long, default_value_t = 0)]
    pub root_joint: usize,
    /// Output PLY of the repainted cloud.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the encoder input cloud as PLY.
    #[arg(long)]
    pub input_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated cloud sizes.
    #[arg(long, value_delimiter = ',', default_value = "128,512,2048")]
    pub sizes: Vec<usize>,
    /// Timed repetitions per size and method; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Seed for the random clouds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Maps a library error to the process exit status.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Parses `argv`, runs the command and returns the exit status. Usage errors
/// print clap's message (with usage) and return 1.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_INVALID;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    info!("threads: {}", rayon::current_num_threads());
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Colorize(a) => colorize(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Probe(a) => classify(a, None).map(|_| ()),
        Command::Finetune(a) => {
            let kind = match a.protocol {
                Some(ProtocolArg::Semi) => ProtocolKind::Semi,
                Some(ProtocolArg::Supervised) | None => ProtocolKind::Supervised,
            };
            let models_out = a.models_out.clone();
            classify_finetune(a.common, kind, a.fraction, models_out)
        }
        Command::Eval(a) => eval(a),
        Command::ExportPly(a) => export(a),
        Command::BenchChamfer(a) => bench(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn log_config(cfg: &RunConfig, seed: u64) {
    info!("seed: {seed}");
    info!("resolved configuration:\n{}", cfg.to_toml_string());
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let s = &mut cfg.synthetic;
    s.classes = a.classes.unwrap_or(s.classes);
    s.per_class = a.per_class.unwrap_or(s.per_class);
    s.joints = a.joints.unwrap_or(s.joints);
    s.frames = a.frames.unwrap_or(s.frames);
    s.persons = a.persons.unwrap_or(s.persons);
    s.noise = a.noise.unwrap_or(s.noise);
    s.seed = a.seed.unwrap_or(s.seed);
    cfg.validate()?;
    log_config(&cfg, cfg.synthetic.seed);
    let manifest = generate_dataset(&cfg.synthetic, &a.out)?;
    let (train, test) = train_test_split(&manifest, a.test_fraction, cfg.synthetic.seed)?;
    write_manifest(&train, &a.out.join("train.tsv"))?;
    write_manifest(&test, &a.out.join("test.tsv"))?;
    println!(
        "wrote {} sequences to {} ({} train, {} test; manifests {MANIFEST_NAME}, train.tsv, test.tsv)",
        manifest.len(),
        a.out.display(),
        train.len(),
        test.len()
    );
    Ok(())
}

fn colorize(a: ColorizeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.mask) {
        return Err(Error::Config("--mask must be in [0, 1]".into()));
    }
    let mut seq = parse_sequence(&a.input)?;
    if a.normalize {
        seq = normalize_sequence(&seq, a.root_joint)?;
    }
    if let Some(t) = a.frames {
        seq = sample_frames(&seq, t)?;
    }
    let painted = apply_color_mask(&colorize_cloud(&build_cloud(&seq), a.scheme)?, a.mask);
    info!(
        "scheme {} mask {}: {}/{} points colored",
        a.scheme,
        a.mask,
        painted.colored_count(),
        painted.len()
    );
    create_parent(&a.out)?;
    export_ply(&painted, &a.out)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let p = &mut cfg.pretrain;
    p.scheme = a.scheme.unwrap_or(p.scheme);
    p.input = a.input.unwrap_or(p.input);
    p.epochs = a.epochs.unwrap_or(p.epochs);
    p.batch_size = a.batch_size.unwrap_or(p.batch_size);
    p.lr_max = a.lr_max.unwrap_or(p.lr_max);
    p.lr_min = a.lr_min.unwrap_or(p.lr_min);
    p.seed = a.seed.unwrap_or(p.seed);
    cfg.data.frames = a.frames.unwrap_or(cfg.data.frames);
    cfg.validate()?;
    log_config(&cfg, cfg.pretrain.seed);

    let manifest = load_manifest(&a.manifest, None)?;
    let seqs = manifest.load_sequences()?;
    let data = UnlabeledSet::from_sequences(&seqs, &cfg.data)?;
    let out = pretrain_stream(&data, &cfg.pretrain)?;
    create_parent(&a.out)?;
    out.model.save(&a.out)?;
    if let Some(path) = &a.metrics {
        let mut csv = String::from("epoch,split,loss,accuracy\n");
        for (e, l) in out.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{},pretrain,{l},\n", e + 1));
        }
        create_parent(path)?;
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    match (out.epoch_losses.first(), out.epoch_losses.last()) {
        (Some(f), Some(l)) => println!("pretrained {} stream: loss {f:.6} -> {l:.6}", cfg.pretrain.scheme),
        _ => println!("zero epochs: wrote the initialized {} stream", cfg.pretrain.scheme),
    }
    Ok(())
}

/// Applies the shared classifier flags to `cfg`.
fn apply_classifier_flags(a: &ClassifyArgs, cfg: &mut RunConfig) {
    let c = &mut cfg.classifier;
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.lr_max = a.lr_max.unwrap_or(c.lr_max);
    c.lr_min = a.lr_min.unwrap_or(c.lr_min);
    if let Some(f) = a.fusion {
        c.fusion = f.into();
    }
    c.standardize |= a.standardize;
    c.seed = a.seed.unwrap_or(c.seed);
    cfg.data.frames = a.frames.unwrap_or(cfg.data.frames);
}

fn stream_models(a: &ClassifyArgs, cfg: &RunConfig, train: &LabeledSet) -> Result<Vec<RepaintModel>> {
    if a.baseline {
        let max_points = train.clouds.iter().map(|c| c.len()).max().unwrap_or(0);
        return Ok(vec![baseline_model(&cfg.pretrain, max_points)?]);
    }
    if a.models.is_empty() {
        return Err(Error::Config("give at least one --model, or --baseline".into()));
    }
    a.models.iter().map(|p| RepaintModel::load(p)).collect()
}

/// Runs the probe (`kind == None`) or a fine-tuning protocol and returns the
/// stream models afterwards.
fn classify(a: ClassifyArgs, kind: Option<(ProtocolKind, Option<f64>)>) -> Result<Vec<RepaintModel>> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply_classifier_flags(&a, &mut cfg);
    match kind {
        None => cfg.classifier.protocol = ProtocolKind::Unsupervised,
        Some((k, fraction)) => {
            cfg.classifier.protocol = k;
            cfg.classifier.fraction = fraction.unwrap_or(cfg.classifier.fraction);
        }
    }
    cfg.validate()?;
    log_config(&cfg, cfg.classifier.seed);

    let train_m = load_manifest(&a.train, None)?;
    let test_m = load_manifest(&a.test, Some(train_m.class_count))?;
    let train = LabeledSet::from_manifest(&train_m, &cfg.data)?;
    let test = LabeledSet::from_manifest(&test_m, &cfg.data)?;
    skelpaint::evalbench::check_disjoint(&train.ids, &test.ids)?;
    let models = stream_models(&a, &cfg, &train)?;
    let (models, out) = run_protocol(models, &train, &test, &cfg.classifier)?;
    create_parent(&a.out)?;
    out.classifier.save(&a.out)?;
    if let Some(path) = &a.metrics {
        create_parent(path)?;
        write_metrics_csv(&out.records, path)?;
    }
    println!("{}", out.test.summary_table());
    Ok(models)
}

fn classify_finetune(
    a: ClassifyArgs,
    kind: ProtocolKind,
    fraction: Option<f64>,
    models_out: Option<PathBuf>,
) -> Result<()> {
    let models = classify(a, Some((kind, fraction)))?;
    if let Some(dir) = models_out {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for m in &models {
            let path = dir.join(format!("{}.ckpt", m.config.scheme));
            m.save(&path)?;
            info!("wrote fine-tuned stream {}", path.display());
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.data.frames = a.frames.unwrap_or(cfg.data.frames);
    cfg.validate()?;
    log_config(&cfg, 0);
    let classifier = FusedClassifier::load(&a.classifier)?;
    let test_m = load_manifest(&a.test, Some(classifier.class_count))?;
    let test = LabeledSet::from_manifest(&test_m, &cfg.data)?;
    let models = a
        .models
        .iter()
        .map(|p| RepaintModel::load(p))
        .collect::<Result<Vec<_>>>()?;
    let metrics = evaluate(&classifier, &models, &test)?;
    println!("{}", metrics.summary_table());
    if let Some(path) = &a.csv {
        create_parent(path)?;
        fs::write(path, metrics.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn export(a: ExportPlyArgs) -> Result<()> {
    let model = RepaintModel::load(&a.model)?;
    let seq = parse_sequence(&a.input)?;
    let data = skelpaint::training::DataConfig {
        frames: a.frames,
        root_joint: a.root_joint,
    };
    let cloud = prepare_cloud(&seq, &data)?;
    let input = model_input(&cloud, model.config.scheme, model.config.input)?;
    let out = forward_repaint(&model, &input)?;
    create_parent(&a.out)?;
    write_ply(&out, &a.out)?;
    if let Some(path) = &a.input_out {
        create_parent(path)?;
        write_ply(&input, path)?;
    }
    info!("repainted {} input points into {} points", input.len(), out.len());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    use rand::Rng as _;
    if a.repeats == 0 || a.sizes.is_empty() {
        return Err(Error::Config("need at least one size and one repeat".into()));
    }
    let mut rng = rng_for(a.seed, "bench/chamfer");
    let mut csv = String::from("n_points,method,seconds\n");
    for &n in &a.sizes {
        if n == 0 {
            return Err(Error::Config("sizes must be >= 1".into()));
        }
        let mut cloud = || -> Vec<Point6> {
            (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let (p, q) = (cloud(), cloud());
        for (name, method) in [("brute", NnMethod::BruteForce), ("kdtree", NnMethod::KdTree)] {
            let mut best = f64::INFINITY;
            for _ in 0..a.repeats {
                let start = Instant::now();
                let r = chamfer_max(&p, &q, method)?;
                best = best.min(start.elapsed().as_secs_f64());
                std::hint::black_box(r);
            }
            csv.push_str(&format!("{n},{name},{best:.6}\n"));
        }
    }
    match &a.out {
        Some(path) => {
            create_parent(path)?;
            fs::write(path, csv).map_err(|e| Error::io(path, e))
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vocmap_core::descriptor::TableEmbedder;
use vocmap_core::eval::{evaluate_map, load_class_table, rank_segments, EvalReport, DEFAULT_TRANSFER_K};
use vocmap_core::exec::init_threads_from_env;
use vocmap_core::io::{
    load_map, load_ply, load_sequence, load_targets, save_map, save_targets, save_timing, write_synthetic_sequence,
    PipelineConfig, MANIFEST_FILE,
};
use vocmap_core::merger::{save_checkpoint, train_merger, TrainConfig};
use vocmap_core::pipeline::{Pipeline, RunOutput};
use vocmap_core::synth::{fusion_corpus, generate_sequence, CorpusPlan, SynthConfig};
use vocmap_core::{Exec, UnitVector};

#[derive(Parser)]
#[command(name = "vocmap", version, about = "Open-vocabulary 3D segment mapping")]
struct Cli {
    /// Process each keyframe's descriptors before mapping the next one.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Disable data-parallel inner loops.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a map from a sequence.
    Run(RunArgs),
    /// Rank segments by cosine similarity to a query vector.
    Query(QueryArgs),
    /// Score a map against ground-truth vertices.
    Eval(EvalArgs),
    /// Render a synthetic sequence.
    Synth(SynthArgs),
    /// Train the fusion network on a corpus.
    TrainMerger(TrainArgs),
    /// Run the pipeline and print the per-stage timing table.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SequenceArgs {
    /// Sequence manifest, or a directory containing manifest.json.
    #[arg(long)]
    sequence: PathBuf,
    /// Pipeline config; defaults to config.toml next to the manifest, if any.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the manifest's keyframe stride.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: SequenceArgs,
    /// Output map directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: SequenceArgs,
    /// Also write the map and timing report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    map: PathBuf,
    /// Text file of whitespace- or comma-separated reals.
    #[arg(long, conflicts_with = "class")]
    vector: Option<PathBuf>,
    /// Class name looked up in --classes.
    #[arg(long, requires = "classes")]
    class: Option<String>,
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    map: PathBuf,
    /// Ground-truth vertices as a labeled point cloud.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRANSFER_K)]
    k: usize,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Full generator settings as JSON; the flags below override it.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Also write a fusion training corpus of this many samples.
    #[arg(long)]
    corpus_samples: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Write the per-epoch mean losses as JSON.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Resolves `p` through its deepest existing ancestor, so paths that do not
/// exist yet still compare correctly.
fn resolve(p: &Path) -> PathBuf {
    let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let mut base = abs.as_path();
    let mut rest = Vec::new();
    while !base.exists() {
        match (base.parent(), base.file_name()) {
            (Some(parent), Some(name)) => {
                rest.push(name.to_owned());
                base = parent;
            }
            _ => break,
        }
    }
    let mut out = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    out.extend(rest.iter().rev());
    out
}

fn guard_output(out_dir: &Path, input: &SequenceArgs) -> Result<()> {
    let manifest = manifest_path(&input.sequence);
    let seq_dir = manifest.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if resolve(out_dir).starts_with(resolve(seq_dir)) {
        bail!("output directory {} lies inside the input sequence directory", out_dir.display());
    }
    Ok(())
}

fn run_pipeline(cli: &Cli, input: &SequenceArgs) -> Result<RunOutput> {
    let manifest = manifest_path(&input.sequence);
    let seq_dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let config_path = input.config.clone().or_else(|| Some(seq_dir.join("config.toml")).filter(|p| p.is_file()));
    let mut config = match &config_path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    config.deterministic |= cli.deterministic;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let frames = load_sequence(&manifest, input.stride)?;
    log::info!("{} keyframes from {}", frames.len(), manifest.display());
    let pipeline = Pipeline::from_config(config, exec)?;
    Ok(pipeline.run(frames, Box::new(TableEmbedder))?)
}

fn write_outputs(out_dir: &Path, out: &RunOutput) -> Result<()> {
    save_map(out_dir, &out.map)?;
    save_timing(out_dir, &out.timing)?;
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    guard_output(&args.out, &args.input)?;
    let out = run_pipeline(cli, &args.input)?;
    write_outputs(&args.out, &out)?;
    let s = &out.stats;
    println!(
        "keyframes {}  points {}  segments {}  descriptor updates {}  stale {}  failed {}",
        s.keyframes,
        out.map.points().len(),
        out.map.segments().len(),
        s.descriptor_updates,
        s.stale,
        s.failed
    );
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    if let Some(dir) = &args.out {
        guard_output(dir, &args.input)?;
    }
    let out = run_pipeline(cli, &args.input)?;
    if let Some(dir) = &args.out {
        write_outputs(dir, &out)?;
    }
    print!("{}", out.timing.finalize().table());
    Ok(())
}

fn read_vector(path: &Path) -> Result<UnitVector> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("{}: bad number {t:?}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    UnitVector::new(values).with_context(|| format!("{}: invalid query vector", path.display()))
}

fn cmd_query(args: &QueryArgs) -> Result<()> {
    let map = load_map(&args.map)?;
    let query = match (&args.vector, &args.class, &args.classes) {
        (Some(v), _, _) => read_vector(v)?,
        (None, Some(name), Some(path)) => {
            let table = load_class_table(path)?;
            let i = table.index_of(name).with_context(|| format!("class {name:?} not in {}", path.display()))?;
            table.embeddings()[i].clone()
        }
        _ => bail!("give either --vector or --class with --classes"),
    };
    for (rank, (label, score)) in rank_segments(&map, &query, args.k)?.iter().enumerate() {
        println!("{:>3} {label:>6} {score:.6}", rank + 1);
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("mIoU {:.4}  mAcc {:.4}  f-mIoU {:.4}  f-mAcc {:.4}", r.miou, r.macc, r.f_miou, r.f_macc);
    for (name, g) in [("head", &r.head), ("common", &r.common), ("tail", &r.tail)] {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!("{name:<7} mIoU {}  mAcc {}  classes {:?}", fmt(g.miou), fmt(g.macc), g.classes);
    }
    for c in &r.per_class {
        let name = c.name.as_deref().unwrap_or("?");
        match c.iou {
            Some(iou) => println!("  {:>3} {name:<16} IoU {iou:.4}  vertices {}", c.class, c.gt_count),
            None => println!("  {:>3} {name:<16} absent", c.class),
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let map = load_map(&args.map)?;
    let classes = load_class_table(&args.classes)?;
    let gt = load_ply(&args.gt)?;
    let verts: Vec<[f64; 3]> = gt.iter().map(|p| p.position.map(f64::from)).collect();
    let labels: Vec<i32> = gt.iter().map(|p| p.label).collect();
    let report = evaluate_map(&map, &classes, &verts, &labels, args.k)?;
    print_report(&report);
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut config = match &args.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::standard(args.seed.unwrap_or(1234)),
    };
    if let Some(s) = args.seed {
        config.scene.seed = s;
    }
    if let Some(n) = args.frames {
        config.scene.orbit.count = n;
    }
    if let Some(d) = args.dim {
        config.dim = d;
    }
    if let Some(s) = args.sigma {
        config.sigma = s;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let seq = generate_sequence(&config, exec)?;
    let manifest = write_synthetic_sequence(&seq, &args.out)?;
    println!("{} frames written to {}", manifest.frames.len(), args.out.display());
    if let Some(n) = args.corpus_samples {
        let plan = CorpusPlan { samples: n, seed: config.scene.seed, ..Default::default() };
        let path = args.out.join("corpus.ovot");
        save_targets(&path, &fusion_corpus(&seq.embedder, &plan))?;
        println!("{n} corpus samples written to {}", path.display());
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let data = load_targets(&args.corpus)?;
    let mut cfg = TrainConfig { epochs: args.epochs, seed: args.seed, ..Default::default() };
    if let Some(s) = args.step_size {
        cfg.step_size = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let report = train_merger(&data, &cfg, exec)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e:>3} loss {l:.6}");
    }
    save_checkpoint(&args.out, &report.params)?;
    if let Some(p) = &args.loss_curve {
        std::fs::write(p, serde_json::to_string_pretty(&report.epoch_losses)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = init_threads_from_env() {
        log::info!("using {n} worker threads");
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(&cli, a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::TrainMerger(a) => cmd_train(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdrm_core::audit::audit;
use sdrm_core::dataset::io::{load_splits, write_json};
use sdrm_core::dataset::{DatasetStats, RatingFormat};
use sdrm_core::eval::Protocol;
use sdrm_core::manifest::RunManifest;
use sdrm_core::pipeline::{
    prepare_splits, run_hpo, run_pipeline, DataConfig, HpoRunConfig, PipelineConfig, RunSummary, AUDIT_JSON,
    AUDIT_MD, DEGREES_CSV, STATS_FILE,
};
use sdrm_core::postprocess::load_synthetic;
use sdrm_core::sdrm::SamplerMode;
use sdrm_core::Error;
use serde::de::DeserializeOwned;

/// Synthetic recommendation data from a VAE latent space and a score-based
/// diffusion model.
#[derive(Parser)]
#[command(name = "sdrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load ratings, binarize, k-core filter and split users.
    Prepare(PrepareArgs),
    /// Train, generate, evaluate and audit as one run.
    Pipeline(PipelineArgs),
    /// Render the metric and audit tables of a finished run.
    Report(ReportArgs),
    /// Hyperparameter search with successive halving.
    Hpo(HpoArgs),
    /// Similarity and degree audit of a synthetic dataset against real users.
    Audit(AuditArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Ratings file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: RatingFormat,
    /// Config whose `data` section supplies filtering and split ratios.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Split seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base seed for training and sampling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<SamplerMode>,
    /// Protocols to evaluate; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    protocol: Vec<Protocol>,
    /// Cutoffs, e.g. `1,3,5,10,20,50`.
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory written by `pipeline`.
    #[arg(long)]
    run: PathBuf,
    /// Emit JSON instead of Markdown.
    #[arg(long)]
    json: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HpoArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct AuditArgs {
    /// Directory holding `synthetic.csv` and `synthetic.json`.
    #[arg(long)]
    synthetic: PathBuf,
    /// Prepared split directory; the training users are the reference.
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
    }
}

/// Relative paths in a config resolve against the config's directory.
fn resolve(base: &Path, data: &mut DataConfig) {
    let dir = base.parent().unwrap_or(Path::new("."));
    for p in [&mut data.input, &mut data.splits].into_iter().flatten() {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

fn prepare(args: PrepareArgs) -> Result<(), Error> {
    let mut data = match &args.config {
        Some(c) => read_config::<PipelineConfig>(c)?.data,
        None => DataConfig::default(),
    };
    data.format = args.format;
    data.input = Some(args.input.clone());
    if let Some(s) = args.seed {
        data.split_seed = s;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut manifest = RunManifest::new("prepare", &data)?;
    manifest.seeds.insert("split".into(), data.split_seed);
    let (_, stats) = prepare_splits(&data, &args.input, &args.out)?;
    manifest.add_input(&args.input)?;
    for f in ["train.csv", "test.csv", "validation.csv", "splits.json", STATS_FILE] {
        manifest.add_artifact(&args.out, f)?;
    }
    manifest.finished_unix = Some(sdrm_core::manifest::unix_now());
    manifest.save(&args.out)?;
    let line = |name: &str, s: &DatasetStats| {
        println!(
            "{name:<10} users {:>6}  items {:>6}  interactions {:>8}  sparsity {:.2}%",
            s.users,
            s.items,
            s.ratings,
            100.0 * s.sparsity
        )
    };
    line("observed", &stats.observed);
    line("positives", &stats.positives);
    line("train", &stats.train);
    line("test", &stats.test);
    line("validation", &stats.validation);
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Result<(), Error> {
    let mut config: PipelineConfig = read_config(&args.config)?;
    resolve(&args.config, &mut config.data);
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(m) = args.mode {
        config.generate.mode = m;
    }
    if !args.protocol.is_empty() {
        config.eval.protocols = args.protocol;
    }
    if !args.k_list.is_empty() {
        config.eval.k_list = args.k_list;
    }
    let output = run_pipeline(&config, &args.out)?;
    if let Some(reports) = &output.eval {
        for r in reports {
            if let Some(m) = r.at(10) {
                println!("{:<28} recall@10 {:.4}  ndcg@10 {:.4}", r.label(), m.recall_mean, m.ndcg_mean);
            }
        }
    }
    if let Some(a) = &output.audit {
        println!("similarity < 0.2: {:.2}%", 100.0 * a.similarity.share_below(0.2));
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let summary = RunSummary::load(&args.run)?;
    let body = if args.json {
        let mut s = serde_json::to_string_pretty(&summary)?;
        s.push('\n');
        s
    } else {
        summary.render_markdown()
    };
    match args.out {
        Some(p) => std::fs::write(&p, body).map_err(|e| Error::io(&p, e)),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn hpo(args: HpoArgs) -> Result<(), Error> {
    let mut config: HpoRunConfig = read_config(&args.config)?;
    resolve(&args.config, &mut config.data);
    if let Some(s) = args.seed {
        config.search.seed = s;
    }
    if let Some(b) = args.budget {
        config.search.budget = b;
    }
    let outcome = run_hpo(&config, &args.out)?;
    println!(
        "best trial {} recall@10 {:.4}",
        outcome.best.id,
        outcome.best.score.unwrap_or(f64::NAN)
    );
    for (k, v) in &outcome.best.config {
        println!("  {k} = {v}");
    }
    Ok(())
}

fn audit_cmd(args: AuditArgs) -> Result<(), Error> {
    let (splits, sidecar) = load_splits(&args.splits)?;
    let synthetic = load_synthetic(&args.synthetic, sidecar.item_ids)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut manifest = RunManifest::new("audit", &serde_json::json!({}))?;
    manifest.add_input(&args.splits.join("train.csv"))?;
    manifest.add_input(&args.synthetic.join(sdrm_core::postprocess::SYNTHETIC_CELLS))?;
    let report = audit(&synthetic.matrix, &splits.train)?;
    write_json(&args.out.join(AUDIT_JSON), &report)?;
    std::fs::write(args.out.join(AUDIT_MD), report.render_markdown()).map_err(|e| Error::io(&args.out, e))?;
    report.write_degree_csv(&args.out.join(DEGREES_CSV))?;
    for f in [AUDIT_JSON, AUDIT_MD, DEGREES_CSV] {
        manifest.add_artifact(&args.out, f)?;
    }
    manifest.finished_unix = Some(sdrm_core::manifest::unix_now());
    manifest.save(&args.out)?;
    print!("{}", report.render_markdown());
    Ok(())
}

/// 2 for unreadable inputs and bad configuration, 1 for everything else.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Config(_) | Error::Usage(_) | Error::Serde(_) => 2,
        Error::Stage { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("SDRM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("SDRM_THREADS ignored: {e}");
        }
    }
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Report(a) => report(a),
        Command::Hpo(a) => hpo(a),
        Command::Audit(a) => audit_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

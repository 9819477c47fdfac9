mod config;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use latscope_core::experiment::{Endpoints, TermSpec};
use latscope_core::format::read_manifest;
use latscope_core::latent::parse_latents;
use latscope_core::{
    load_model, parse_expression, rerun_check, run, save_model, AnchorSet, AnchorStore, Dcgan64,
    Error, ExperimentKind, ExperimentSpec, LatentVector, RunManifest, RunOptions,
};

use config::Config;

#[derive(Parser)]
#[command(
    name = "latscope",
    version,
    about = "Probe the latent space of image generators"
)]
struct Cli {
    /// Config file (default: $LATSCOPE_CONFIG or ~/.config/latscope/config.toml)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode n seeded samples into tiles and a grid
    Sample(SampleArgs),
    /// Linear interpolation between two endpoints
    Interpolate(TraverseArgs),
    /// Two-sided extrapolation beyond both endpoints (n must be even)
    Extrapolate(TraverseArgs),
    /// Circular interpolation around the endpoint midpoint
    Circle(CircleArgs),
    /// Spherical interpolation along the great circle
    Slerp(TraverseArgs),
    /// Vector arithmetic over anchor-set means, e.g. "+a -b +c"
    Arith(ArithArgs),
    /// Run an experiment spec file
    Run {
        spec: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-execute a manifest and compare output hashes
    RerunCheck {
        manifest: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Inspect or create model weight files
    #[command(subcommand)]
    Model(ModelCommand),
    /// Manage anchor sets
    #[command(subcommand)]
    Anchor(AnchorCommand),
    /// Start the HTTP service
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// Model weights (LGW1)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid columns
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Parallel forward passes
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the experiment spec as JSON instead of running it
    #[arg(long)]
    emit_spec: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 16)]
    n: usize,
}

#[derive(Args)]
struct TraverseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// One seed per endpoint, e.g. --seeds 3,4
    #[arg(long, value_delimiter = ',', conflicts_with = "from")]
    seeds: Option<Vec<u64>>,
    /// First endpoint from a latent file
    #[arg(long, requires = "to")]
    from: Option<PathBuf>,
    /// Second endpoint from a latent file
    #[arg(long, requires = "from")]
    to: Option<PathBuf>,
}

#[derive(Args)]
struct CircleArgs {
    #[command(flatten)]
    traverse: TraverseArgs,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct ArithArgs {
    #[command(flatten)]
    common: Common,
    /// Anchor store file
    #[arg(long)]
    store: Option<PathBuf>,
    /// Whitespace-separated signed anchor names
    #[arg(long, allow_hyphen_values = true)]
    expr: String,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Fully validate a weight file
    Validate { file: PathBuf },
    /// Print the manifest summary as JSON
    Info { file: PathBuf },
    /// Write a seeded DCGAN-64 test model
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Channel scale in (0, 1]; 1 is the full-size network
        #[arg(long, default_value_t = 1.0 / 32.0)]
        scale: f64,
    },
}

#[derive(Subcommand)]
enum AnchorCommand {
    /// Save an anchor set from latent files or a run manifest
    Put {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        name: String,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        /// Latent record file(s)
        #[arg(long, conflicts_with = "from_manifest")]
        latents: Vec<PathBuf>,
        /// Take members from a run manifest's latents
        #[arg(long, requires = "pick")]
        from_manifest: Option<PathBuf>,
        /// 0-based tile indices for --from-manifest, e.g. --pick 0,5,9
        #[arg(long, value_delimiter = ',')]
        pick: Vec<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// List anchor sets, optionally filtered by tags (all must match)
    List {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
    },
    /// Delete an anchor set
    Delete {
        #[arg(long)]
        store: Option<PathBuf>,
        name: String,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "LATSCOPE_LISTEN")]
    listen: Option<String>,
    #[arg(long, env = "LATSCOPE_STORE")]
    store: Option<PathBuf>,
    #[arg(long, env = "LATSCOPE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Serve a built UI bundle from this directory
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
    /// rerun-check found differences
    Diverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Diverged => 1,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) | Error::DegenerateGeometry(_) => 2,
                Error::Io { .. } => 4,
                Error::Numeric { .. } => 5,
                _ => 3,
            },
        }
    }

    fn code(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Diverged => "diverged",
            Failure::Core(e) => e.code(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = match &f {
                Failure::Usage(m) => m.clone(),
                Failure::Core(e) => e.to_string(),
                Failure::Diverged => "outputs differ from the manifest".into(),
            };
            let color = std::env::var_os("NO_COLOR").is_none() && std::io::stderr().is_terminal();
            if color {
                eprintln!("\x1b[31merror[{}]\x1b[0m: {message}", f.code());
            } else {
                eprintln!("error[{}]: {message}", f.code());
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let cfg = config::load(cli.config.as_deref()).map_err(Failure::Usage)?;
    match cli.command {
        Command::Sample(a) => {
            let mut spec = base_spec(ExperimentKind::Samples, &a.common, &cfg)?;
            spec.n = a.n;
            execute(spec, &a.common, &cfg)
        }
        Command::Interpolate(a) => traversal(ExperimentKind::Interpolate, a, None, &cfg),
        Command::Extrapolate(a) => traversal(ExperimentKind::Extrapolate, a, None, &cfg),
        Command::Slerp(a) => traversal(ExperimentKind::Slerp, a, None, &cfg),
        Command::Circle(a) => traversal(ExperimentKind::CircularPaper, a.traverse, a.radius, &cfg),
        Command::Arith(a) => {
            let mut spec = base_spec(ExperimentKind::Arithmetic, &a.common, &cfg)?;
            spec.store_path = Some(require(a.store, cfg.store.clone(), "--store")?);
            spec.terms = parse_expression(&a.expr)?
                .into_iter()
                .map(|(sign, anchor_set)| TermSpec { sign, anchor_set })
                .collect();
            execute(spec, &a.common, &cfg)
        }
        Command::Run { spec, jobs } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            finish(&spec, jobs.or(cfg.jobs))
        }
        Command::RerunCheck { manifest, jobs } => {
            let opts = RunOptions {
                jobs: jobs.or(cfg.jobs).unwrap_or(1),
            };
            let report = rerun_check(&manifest, opts)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.all_match() {
                eprintln!("all {} outputs match", report.matched.len());
                Ok(())
            } else {
                for f in report.divergent_files() {
                    eprintln!("divergent: {f}");
                }
                Err(Failure::Diverged)
            }
        }
        Command::Model(m) => model_command(m),
        Command::Anchor(a) => anchor_command(a, &cfg),
        Command::Serve(s) => serve(s, &cfg),
    }
}

fn require<T>(flag: Option<T>, fallback: Option<T>, name: &str) -> CliResult<T> {
    flag.or(fallback)
        .ok_or_else(|| Failure::Usage(format!("{name} is required (flag or config file)")))
}

fn base_spec(kind: ExperimentKind, c: &Common, cfg: &Config) -> CliResult<ExperimentSpec> {
    let model = require(c.model.clone(), cfg.model.clone(), "--model")?;
    let mut spec = ExperimentSpec::new(kind, model, &c.out);
    spec.seed = c.seed;
    spec.grid_cols = c.cols;
    Ok(spec)
}

fn traversal(
    kind: ExperimentKind,
    a: TraverseArgs,
    radius: Option<f64>,
    cfg: &Config,
) -> CliResult {
    let mut spec = base_spec(kind, &a.common, cfg)?;
    spec.n = a.n;
    spec.radius = radius;
    spec.endpoints = match (a.seeds, a.from, a.to) {
        (Some(s), _, _) => match s[..] {
            [x, y] => Some(Endpoints::Seeds([x, y])),
            _ => return Err(Failure::Usage("--seeds takes exactly two values".into())),
        },
        (None, Some(f), Some(t)) => Some(Endpoints::Files([f, t])),
        _ => None,
    };
    execute(spec, &a.common, cfg)
}

fn execute(spec: ExperimentSpec, c: &Common, cfg: &Config) -> CliResult {
    spec.check()?;
    if c.emit_spec {
        println!("{}", spec.to_json());
        return Ok(());
    }
    finish(&spec, c.jobs.or(cfg.jobs))
}

fn finish(spec: &ExperimentSpec, jobs: Option<usize>) -> CliResult {
    let opts = RunOptions {
        jobs: jobs.unwrap_or(1),
    };
    let manifest = run(spec, opts)?;
    if let Some(m) = &manifest.metrics {
        let [i, j] = m.largest_jump_pair;
        eprintln!(
            "largest adjacent jump: tiles {i}->{j} (L2 {:.4})",
            m.adjacent_l2[i - 1]
        );
    }
    println!(
        "{}",
        spec.output_dir
            .join(latscope_core::experiment::MANIFEST_FILE)
            .display()
    );
    Ok(())
}

fn model_command(cmd: ModelCommand) -> CliResult {
    match cmd {
        ModelCommand::Validate { file } => {
            let m = load_model(&file)?;
            println!(
                "ok: {} layers, {} parameters, input {}-d {}, output {:?}",
                m.layers().len(),
                m.parameter_count(),
                m.input_dim(),
                m.input_space(),
                m.output_shape()
            );
        }
        ModelCommand::Info { file } => {
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let manifest = read_manifest(&bytes)?;
            let layers: Vec<String> = manifest
                .layers
                .iter()
                .map(|l| {
                    serde_json::to_value(l).unwrap()["type"]
                        .as_str()
                        .unwrap_or("?")
                        .to_string()
                })
                .collect();
            let info = serde_json::json!({
                "format_version": manifest.format_version,
                "input_dim": manifest.input_dim,
                "input_space": manifest.input_space,
                "output_shape": manifest.output_shape,
                "payload_bytes": manifest.payload_bytes,
                "layers": layers,
                "sha256": latscope_core::fsutil::sha256_hex(&bytes),
            });
            println!("{}", serde_json::to_string_pretty(&info).unwrap());
        }
        ModelCommand::Init { out, seed, scale } => {
            let m = Dcgan64::new(seed, scale).build()?;
            save_model(&m, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn manifest_latents(path: &Path, pick: &[usize]) -> CliResult<Vec<LatentVector>> {
    let m = RunManifest::from_file(path)?;
    pick.iter()
        .map(|&i| {
            let line = m.latents.get(i).ok_or_else(|| {
                Failure::Usage(format!(
                    "--pick {i} is out of range ({} latents in manifest)",
                    m.latents.len()
                ))
            })?;
            Ok(LatentVector::from_line(line)?)
        })
        .collect()
}

fn anchor_command(cmd: AnchorCommand, cfg: &Config) -> CliResult {
    match cmd {
        AnchorCommand::Put {
            store,
            name,
            tags,
            latents,
            from_manifest,
            pick,
            overwrite,
        } => {
            let store = require(store, cfg.store.clone(), "--store")?;
            let members = match from_manifest {
                Some(m) => manifest_latents(&m, &pick)?,
                None => {
                    let mut all = Vec::new();
                    for p in &latents {
                        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                        all.extend(parse_latents(&text)?);
                    }
                    all
                }
            };
            let set = AnchorSet::new(name, &tags, members)?;
            let mut s = AnchorStore::open(store)?;
            s.put(&set, overwrite)?;
            println!("{} ({} members)", set.name(), set.members().len());
        }
        AnchorCommand::List { store, tags } => {
            let store = require(store, cfg.store.clone(), "--store")?;
            let s = AnchorStore::open(store)?;
            for summary in s.list(&tags) {
                println!("{}", serde_json::to_string(&summary).unwrap());
            }
        }
        AnchorCommand::Delete { store, name } => {
            let store = require(store, cfg.store.clone(), "--store")?;
            AnchorStore::open(store)?.delete(&name)?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs, cfg: &Config) -> CliResult {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let listen = args
        .listen
        .or(cfg.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let config = latscope_service::ServiceConfig {
        cache_dir: args
            .cache_dir
            .or(cfg.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from("latscope-cache")),
        store_path: require(args.store, cfg.store.clone(), "--store")?,
        ui_dir: args.ui_dir,
    };
    let state = Arc::new(latscope_service::AppState::open(config)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| Error::io(&listen, e))?;
        log::info!("listening on http://{}", listener.local_addr().unwrap());
        latscope_service::serve(listener, state)
            .await
            .map_err(|e| Error::io(&listen, e))
    })?;
    Ok(())
}

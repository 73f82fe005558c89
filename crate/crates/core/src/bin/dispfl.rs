use clap::{Args, Parser, Subcommand};
use dispfl::bounds::{self, BoundParams};
use dispfl::runner::{self, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Deterministic simulator for decentralized sparse personalized
/// federated learning.
#[derive(Parser)]
#[command(name = "dispfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config file.
    Run(RunArgs),
    /// Re-run an experiment over a grid of uniform densities.
    Sweep(SweepArgs),
    /// Evaluate the generalization-gap bound for one parameter set.
    Bounds(BoundsArgs),
    /// Sweep the bound over a beta grid, emitting CSV.
    BoundsSweep(BoundsSweepArgs),
    /// Run an experiment and emit pairwise mask-distance and
    /// label-similarity matrices.
    AnalyzeMasks(AnalyzeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides the config value.
    #[arg(long)]
    seed: u64,
    /// Output directory; overrides the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config value.
    #[arg(long)]
    workers: Option<usize>,
    /// Round count; overrides the config value.
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Comma-separated density grid.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.5, 0.6, 0.8])]
    densities: Vec<f64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    tau: u64,
    #[arg(long)]
    iterations: u64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    grad_diameter: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    delta_tilde: f64,
}

#[derive(Args)]
struct BoundsSweepArgs {
    #[command(flatten)]
    base: BoundsArgs,
    /// Comma-separated beta grid replacing the single --beta value.
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Directory receiving hamming.csv and label_cosine.csv.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

/// `DISPFL_OUT_DIR` overrides any configured output directory.
fn resolve_out(cfg: &mut ExperimentConfig, flag: Option<PathBuf>) {
    if let Some(dir) = flag {
        cfg.output_dir = Some(dir);
    }
    if let Ok(dir) = std::env::var("DISPFL_OUT_DIR") {
        cfg.output_dir = Some(PathBuf::from(dir));
    }
}

fn bounds_params(a: &BoundsArgs) -> BoundParams {
    BoundParams {
        n: a.n,
        tau: a.tau,
        iterations: a.iterations,
        beta: a.beta,
        grad_diameter: a.grad_diameter,
        sigma: a.sigma,
        delta: a.delta,
        delta_tilde: a.delta_tilde,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = load_config(&args.config)?;
            cfg.seed = args.seed;
            if let Some(w) = args.workers {
                cfg.workers = w;
            }
            if let Some(r) = args.rounds {
                cfg.rounds = r;
            }
            resolve_out(&mut cfg, args.out);
            let out = runner::run(&cfg).map_err(|e| e.to_string())?;
            println!(
                "final mean accuracy over {} clients: {:.4}",
                cfg.num_clients,
                out.final_mean_accuracy()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let mut cfg = load_config(&args.config)?;
            cfg.seed = args.seed;
            let rows = runner::sweep(&cfg, &args.densities).map_err(|e| e.to_string())?;
            let mut w: csv::Writer<Box<dyn std::io::Write>> = match &args.out {
                Some(path) => csv::Writer::from_writer(Box::new(
                    std::fs::File::create(path).map_err(|e| e.to_string())?,
                )),
                None => csv::Writer::from_writer(Box::new(std::io::stdout())),
            };
            w.write_record([
                "density",
                "final_mean_accuracy",
                "total_bytes_sent",
                "total_flops",
                "busiest_node_total_bytes",
            ])
            .map_err(|e| e.to_string())?;
            for r in &rows {
                w.write_record([
                    format!("{}", r.density),
                    format!("{:.6}", r.final_mean_accuracy),
                    r.total_bytes_sent.to_string(),
                    r.total_flops.to_string(),
                    r.busiest_node_total_bytes.to_string(),
                ])
                .map_err(|e| e.to_string())?;
            }
            w.flush().map_err(|e| e.to_string())
        }
        Command::Bounds(args) => {
            let p = bounds_params(&args);
            let bound = bounds::generalization_gap_bound(&p).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&bound).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
        Command::BoundsSweep(args) => {
            let mut w: csv::Writer<Box<dyn std::io::Write>> = match &args.out {
                Some(path) => csv::Writer::from_writer(Box::new(
                    std::fs::File::create(path).map_err(|e| e.to_string())?,
                )),
                None => csv::Writer::from_writer(Box::new(std::io::stdout())),
            };
            w.write_record(["beta", "eps_prime", "delta_prime", "gap", "vacuous"])
                .map_err(|e| e.to_string())?;
            let betas = if args.betas.is_empty() {
                vec![args.base.beta]
            } else {
                args.betas.clone()
            };
            for beta in betas {
                let mut p = bounds_params(&args.base);
                p.beta = beta;
                match bounds::generalization_gap_bound(&p) {
                    Ok(b) => w
                        .write_record([
                            format!("{beta}"),
                            format!("{:.12}", b.eps_prime),
                            format!("{:.12}", b.delta_prime),
                            format!("{:.12}", b.gap),
                            b.vacuous.to_string(),
                        ])
                        .map_err(|e| e.to_string())?,
                    Err(dispfl::Error::CompositionPole) => w
                        .write_record([
                            format!("{beta}"),
                            "pole".into(),
                            "pole".into(),
                            "pole".into(),
                            "true".into(),
                        ])
                        .map_err(|e| e.to_string())?,
                    Err(e) => return Err(e.to_string()),
                }
            }
            w.flush().map_err(|e| e.to_string())
        }
        Command::AnalyzeMasks(args) => {
            let mut cfg = load_config(&args.config)?;
            cfg.seed = args.seed;
            cfg.output_dir = None;
            let out = runner::run(&cfg).map_err(|e| e.to_string())?;
            let analysis = runner::analyze_masks(&out).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
            runner::write_matrix(&args.out.join("hamming.csv"), &analysis.hamming)
                .map_err(|e| e.to_string())?;
            runner::write_matrix(&args.out.join("label_cosine.csv"), &analysis.label_cosine)
                .map_err(|e| e.to_string())?;
            Ok(())
        }
    }
}

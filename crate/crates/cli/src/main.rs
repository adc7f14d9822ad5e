use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opbench::run::{self, RunConfig};
use opbench::Error;

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "opbench", version, about = "Neural-operator benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset.
    Gen(GenArgs),
    /// Train a model and write checkpoint and metrics.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Train every ablation variant on one dataset.
    Ablate(RunArgs),
    /// Render target, prediction and error of one sample.
    Plot(PlotArgs),
    /// Re-check stored samples against their governing equations.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Stored grid resolution.
    #[arg(long)]
    res: Option<usize>,
    /// PB nonlinearity coefficient.
    #[arg(long)]
    k: Option<f64>,
    /// Data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// lnfno or deeponet.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
    /// Divide every layer width by this factor.
    #[arg(long)]
    width_scale: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Weight decay.
    #[arg(long)]
    wd: Option<f64>,
    /// Run seed (initialisation, split and data order).
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    /// Suppress per-epoch progress.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dataset sample index.
    #[arg(long)]
    sample: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of samples to re-check.
    #[arg(long, default_value_t = 10)]
    samples: usize,
}

fn base_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(cfg: &mut RunConfig, key: &str, value: Option<String>) -> Result<(), Error> {
    match value {
        Some(v) => cfg.set(key, &v),
        None => Ok(()),
    }
}

fn gen_config(a: &GenArgs) -> Result<RunConfig, Error> {
    let mut cfg = base_config(&a.config)?;
    apply(&mut cfg, "benchmark", a.benchmark.clone())?;
    apply(&mut cfg, "samples", a.n.map(|v| v.to_string()))?;
    apply(&mut cfg, "res", a.res.map(|v| v.to_string()))?;
    apply(&mut cfg, "k", a.k.map(|v| v.to_string()))?;
    apply(&mut cfg, "data_seed", a.seed.map(|v| v.to_string()))?;
    apply(&mut cfg, "data", a.out.as_ref().map(|p| p.display().to_string()))?;
    Ok(cfg)
}

fn run_config(a: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = base_config(&a.config)?;
    apply(&mut cfg, "data", a.data.as_ref().map(|p| p.display().to_string()))?;
    apply(&mut cfg, "out", a.out.as_ref().map(|p| p.display().to_string()))?;
    apply(&mut cfg, "model", a.model.clone())?;
    apply(&mut cfg, "preset", a.preset.clone())?;
    apply(&mut cfg, "ablation", a.ablation.clone())?;
    apply(&mut cfg, "width_scale", a.width_scale.map(|v| v.to_string()))?;
    apply(&mut cfg, "epochs", a.epochs.map(|v| v.to_string()))?;
    apply(&mut cfg, "lr", a.lr.map(|v| v.to_string()))?;
    apply(&mut cfg, "batch", a.batch.map(|v| v.to_string()))?;
    apply(&mut cfg, "wd", a.wd.map(|v| v.to_string()))?;
    apply(&mut cfg, "seed", a.seed.map(|v| v.to_string()))?;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(a) => {
            let cfg = gen_config(&a)?;
            if a.dump_config {
                print!("{}", cfg.dump());
                return Ok(());
            }
            let file = run::cmd_gen(&cfg)?;
            let dims: Vec<String> = file
                .components
                .iter()
                .map(|c| format!("{}{:?}", c.name, c.dims))
                .collect();
            println!("wrote {} ({})", cfg.data.display(), dims.join(", "));
        }
        Command::Train(a) => {
            let cfg = run_config(&a)?;
            if a.dump_config {
                print!("{}", cfg.dump());
                return Ok(());
            }
            let quiet = a.quiet;
            let m = run::cmd_train(&cfg, |e, l| {
                if !quiet {
                    eprintln!("epoch {e:5}  train_loss {l:.6e}");
                }
            })?;
            print!("{}", m.final_csv());
        }
        Command::Eval(a) => {
            let e = run::cmd_eval(&a.checkpoint, &a.data, a.out.as_deref())?;
            print!("{}", run::eval_csv(&e));
        }
        Command::Ablate(a) => {
            let cfg = run_config(&a)?;
            if a.dump_config {
                print!("{}", cfg.dump());
                return Ok(());
            }
            let rows = run::cmd_ablate(&cfg)?;
            print!("{}", run::ablation_csv(&rows));
        }
        Command::Plot(a) => {
            for p in run::cmd_plot(&a.checkpoint, &a.data, a.sample, &a.out)? {
                println!("{}", p.display());
            }
        }
        Command::Verify(a) => {
            let r = run::cmd_verify(&a.data, a.samples)?;
            println!(
                "{}: {} samples checked, max residual {:.3e} (threshold {:.3e})",
                r.benchmark,
                r.checked.len(),
                r.max_residual,
                r.threshold
            );
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("NODF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("NODF_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match init_threads().and_then(|_| execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(EXIT_DOMAIN),
            }
        }
    }
}

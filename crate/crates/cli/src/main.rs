use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcnprobe_cli::config::{parse_sigma_list, resolve, Condition, DataSource, Overrides, Scale};
use pcnprobe_cli::summary::{summarize, to_csv, to_table};
use pcnprobe_cli::{runner, CliError};

#[derive(Parser)]
#[command(name = "pcnprobe", version, about = "Train TinyConvPCN conditions and evaluate the K-way energy probe")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one condition.
    Run(RunArgs),
    /// Latent-movement diagnostic (c2-diagnose), optionally of an existing checkpoint.
    Diagnose {
        #[command(flatten)]
        args: RunArgs,
        /// Diagnose this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Structural-minus-softmax AUROC2 table over finished run directories.
    Summarize {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_condition)]
    condition: Option<Condition>,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// cifar10 or synthetic.
    #[arg(long, value_parser = parse_source)]
    dataset: Option<DataSource>,
    /// CIFAR-10 binary directory (default: $PCNPROBE_CIFAR10_DIR).
    #[arg(long)]
    dataset_path: Option<PathBuf>,
    /// Number of leading training images.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    eval_images: Option<usize>,
    /// Comma-separated eval noise levels, e.g. 0,1e-3,1e-2.
    #[arg(long)]
    eval_sigma: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
    /// Emit the softmax-ranked margin in decomposition.csv.
    #[arg(long)]
    verbose: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_source(s: &str) -> Result<DataSource, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn resolve_args(a: &RunArgs, forced: Option<Condition>) -> Result<pcnprobe_cli::ExperimentConfig, CliError> {
    let file = match &a.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?),
        None => None,
    };
    let o = Overrides {
        condition: forced.or(a.condition),
        scale: a.scale,
        epochs: a.epochs,
        seed: a.seed,
        dataset: a.dataset,
        dataset_path: a.dataset_path.clone(),
        subset: a.subset,
        eval_images: a.eval_images,
        eval_sigmas: a.eval_sigma.as_deref().map(parse_sigma_list).transpose()?,
        out: a.out.clone(),
        deterministic: a.deterministic,
        verbose: a.verbose,
    };
    resolve(file.as_deref(), &o)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => resolve_args(&a, None).and_then(|cfg| {
            if a.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let outcome = runner::run(&cfg)?;
            println!("wrote {} result rows to {}", outcome.results.len(), outcome.out.display());
            Ok(())
        }),
        Command::Diagnose { args, checkpoint } => {
            if args.condition.is_some_and(|c| c != Condition::C2Diagnose) {
                Err(CliError::Config("diagnose always runs c2-diagnose".into()))
            } else {
                resolve_args(&args, Some(Condition::C2Diagnose)).and_then(|cfg| {
                    if args.print_config {
                        print!("{}", cfg.to_toml());
                        return Ok(());
                    }
                    match checkpoint {
                        Some(ck) => runner::diagnose_checkpoint(&cfg, &ck).map(|_| ()),
                        None => runner::run(&cfg).map(|_| ()),
                    }?;
                    println!("wrote {}", cfg.run.out.join("noop.json").display());
                    Ok(())
                })
            }
        }
        Command::Summarize { runs, out } => {
            let (rows, errors) = summarize(&runs);
            print!("{}", to_table(&rows));
            for e in &errors {
                eprintln!("error: {e}");
            }
            let written = match &out {
                Some(p) => to_csv(&rows).and_then(|text| {
                    std::fs::write(p, text).map_err(|source| CliError::Io { path: p.display().to_string(), source })
                }),
                None => Ok(()),
            };
            match written {
                Err(e) => Err(e),
                Ok(()) if rows.is_empty() => Err(CliError::Summary("no run could be summarised".into())),
                Ok(()) => Ok(()),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

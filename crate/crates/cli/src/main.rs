use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prer::aggregate::{self, SUMMARY_FILE};
use prer::inspect::describe_flow;
use prer::runner::{self, RunOptions};
use prer::{ExperimentConfig, Result};
use prer_core::flow::FlowConfig;
use prer_core::pipeline::{FlowTopology, Strategy};

#[derive(Parser)]
#[command(name = "prer", version, about = "Continual learning with flow-based pseudo-rehearsal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every task of a stream for each seed and write one record per run.
    Run(RunArgs),
    /// Summarize the run records of a directory as mean ± std per strategy.
    Aggregate {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Summary table path [default: DIR/summary.csv]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter counts and per-level widths of a flow.
    InspectFlow(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run only these seeds instead of the config's list.
    #[arg(long, value_name = "N")]
    seed: Vec<u64>,
    /// Override the config's strategy; repeat to sweep several.
    #[arg(long, value_name = "S")]
    strategy: Vec<Strategy>,
    /// Output directory [default: the config's out_dir]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Do not save the learner after each task.
    #[arg(long)]
    no_checkpoint: bool,
    /// Continue from saved checkpoints where they exist.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Take the flow settings from a config; other flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    multiplier: Option<usize>,
    /// Width of the one-hot class condition (0 for an unconditioned flow).
    #[arg(long)]
    classes: Option<usize>,
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let seeds = if args.seed.is_empty() { cfg.seeds.clone() } else { args.seed };
    let strategies = if args.strategy.is_empty() { vec![cfg.strategy] } else { args.strategy };
    let opts = RunOptions {
        out: Some(args.out.unwrap_or_else(|| cfg.out_dir.clone())),
        checkpoint: !args.no_checkpoint,
        resume: args.resume,
    };
    let threads = runner::thread_cap()?;
    let mut records = Vec::new();
    for strategy in strategies {
        let cfg = runner::with_strategy(&cfg, strategy);
        records.extend(runner::run_seeds(&cfg, &seeds, threads, &opts)?);
    }
    for r in &records {
        let bwt = r.bwt.map_or("-".into(), |b| format!("{b:.2}"));
        println!("{} seed {}: accuracy {:.2} bwt {bwt}", r.strategy, r.seed, r.accuracy);
    }
    print!("{}", aggregate::render(&aggregate::aggregate(&records)));
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let (mut dim, mut topology, mut classes) = (100, FlowTopology::default(), 0);
    if let Some(path) = &args.config {
        let cfg = ExperimentConfig::load(path)?;
        dim = cfg.recon_embedding;
        topology = cfg.topology();
        if cfg.conditioning.flow() {
            classes = cfg.dataset_spec()?.load(0)?.num_classes();
        }
    }
    let mut flow = FlowConfig::new(
        args.dim.unwrap_or(dim),
        args.levels.unwrap_or(topology.levels),
        args.blocks.unwrap_or(topology.blocks),
    );
    flow.hidden_multiplier = args.multiplier.unwrap_or(topology.hidden_multiplier);
    let classes = args.classes.unwrap_or(classes);
    if classes > 0 {
        flow = flow.conditioned(classes);
    }
    print!("{}", describe_flow(&flow)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Aggregate { input, out } => aggregate::read_records(&input).and_then(|records| {
            let rows = aggregate::aggregate(&records);
            aggregate::write_csv(&rows, &out.unwrap_or_else(|| input.join(SUMMARY_FILE)))?;
            print!("{}", aggregate::render(&rows));
            Ok(())
        }),
        Command::InspectFlow(args) => inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

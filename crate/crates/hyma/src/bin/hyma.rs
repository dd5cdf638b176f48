use clap::{Parser, Subcommand};
use hyma::cli;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hyma", about = "Connector search over frozen encoder pairs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic embedding banks and print the planted pair order
    GenSynthetic {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one search strategy and persist its outcome
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = cli::STRATEGY_NAMES)]
        strategy: String,
    },
    /// Re-evaluate a stored strategy's winning connector
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = cli::STRATEGY_NAMES)]
        strategy: String,
    },
    /// Rank agreement (NDCG@k, Spearman) between two stored outcomes
    RankCompare {
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Cutoffs, e.g. --k 5,7,10
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 7, 10])]
        k: Vec<usize>,
    },
    /// Predicted FLOPs bills per strategy, no training performed
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summary table over all stored outcomes with efficiency ratios
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cmd: Command) -> hyma::Result<()> {
    let mut out = std::io::stdout();
    match cmd {
        Command::GenSynthetic { config } => {
            cli::cmd_gen_synthetic(&cli::load_config(&config)?, &mut out)
        }
        Command::Search { config, strategy } => {
            cli::cmd_search(&cli::load_config(&config)?, &strategy, &mut out)
        }
        Command::Eval { config, strategy } => {
            cli::cmd_eval(&cli::load_config(&config)?, &strategy, &mut out)
        }
        Command::RankCompare {
            oracle,
            candidate,
            k,
        } => cli::cmd_rank_compare(&oracle, &candidate, &k, &mut out),
        Command::Flops { config } => cli::cmd_flops(&cli::load_config(&config)?, &mut out),
        Command::Report { config } => cli::cmd_report(&cli::load_config(&config)?, &mut out),
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors before we get here
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

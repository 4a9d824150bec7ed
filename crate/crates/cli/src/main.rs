use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nrlab_cli::{
    analyze_stored, certify, exact, format_certificate, format_exact_table, print, simulate,
    CliError, LoadedConfig, Outcome,
};

#[derive(Parser)]
#[command(
    name = "nrlab",
    version,
    about = "No-regret learning in pay-your-bid auctions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Params {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the repeated game for every seed and analyze each trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Seeds run in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Check (lambda, mu)-smoothness of the configured deviation rule.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Solve the worst Bayes-CCE welfare LP on the agent game.
    Exact {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Re-analyze a stored trace directory.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
        /// Directory holding trace.csv and strategies.json.
        #[arg(long)]
        trace: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Simulate { common, workers } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let agg = simulate(&cfg, common.out.as_deref(), workers)?;
            for s in &agg.seeds {
                print(&format!(
                    "seed {}: ratio {}, epsilon {:.5}, gap {:.5}\n",
                    s.seed,
                    s.ratio.map_or("inf".into(), |r| format!("{r:.5}")),
                    s.epsilon,
                    s.independence_gap
                ));
            }
            print(&format!(
                "mean ratio {} (bound {:.5})\n",
                agg.mean_ratio.map_or("inf".into(), |r| format!("{r:.5}")),
                agg.bound
            ));
            Ok(Outcome::Holds)
        }
        Command::Certify { common, params } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let (report, outcome) = certify(&cfg, params.lambda, params.mu, common.out.as_deref())?;
            print(&format_certificate(&report));
            Ok(outcome)
        }
        Command::Exact { common, params } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let (report, outcome) = exact(&cfg, params.lambda, params.mu, common.out.as_deref())?;
            print(&format_exact_table(&report));
            Ok(outcome)
        }
        Command::Analyze {
            common,
            params,
            trace,
        } => {
            let cfg = LoadedConfig::load(&common.config)?;
            let r = analyze_stored(
                &cfg,
                &trace,
                params.lambda,
                params.mu,
                common.out.as_deref(),
            )?;
            print(&format!(
                "epsilon {:.5}, gap {:.5}, ratio {}, bound {:.5}, finite-time slack {:.5}\n",
                r.epsilon,
                r.independence_gap,
                r.ratio.map_or("inf".into(), |x| format!("{x:.5}")),
                r.bound,
                r.finite_time_slack
            ));
            Ok(Outcome::Holds)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

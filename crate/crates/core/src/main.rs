use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stpinn::cli::{cmd_compare, cmd_eval, cmd_gen_ref, cmd_train, load_config, CliError, RunConfig};
use stpinn::pde::ProblemName;

#[derive(Parser)]
#[command(name = "stpinn", version, about = "Self-training PINNs for 1D time-dependent PDEs")]
struct Cli {
    /// Run configuration file; Burgers defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reference problem and write `reference.grid`.
    GenRef,
    /// Train one network and write its checkpoint and history.
    Train {
        /// Disable pseudo-labeling.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a checkpoint against a grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid file to compare against; the reference by default.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Train baseline and self-training networks for several seeds.
    Compare {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::defaults(ProblemName::Burgers),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.run.out_dir = o;
    }
    match cli.command {
        Command::GenRef => {
            let (path, grid) = cmd_gen_ref(&cfg)?;
            println!("wrote {} ({}x{} nodes, t in [0, {}])", path.display(), grid.dims.nx, grid.dims.nt, grid.dims.t_hi);
        }
        Command::Train { baseline } => {
            let (r, ckpt, hist) = cmd_train(&cfg, baseline)?;
            if let Some(last) = r.outcome.history.last() {
                println!(
                    "final loss {:.4e} (f {:.4e}, d {:.4e}, p {:.4e}), {} pseudo points",
                    last.loss_total, last.loss_f, last.loss_d, last.loss_p, last.n_pseudo
                );
            }
            println!("relative L2 {:.4e}, MSE {:.4e}", r.rel_l2, r.mse);
            println!("wrote {} and {}", ckpt.display(), hist.display());
        }
        Command::Eval { checkpoint, grid } => {
            let e = cmd_eval(&cfg, &checkpoint, grid.as_deref())?;
            println!("relative L2 {:.6e}, MSE {:.6e}", e.rel_l2, e.mse);
            println!("wrote {}", e.error_grid.display());
        }
        Command::Compare { seeds } => {
            let report = cmd_compare(&cfg, seeds, |m| eprintln!("{m}"))?;
            print!("{}", report.table());
            println!("wrote {}", cfg.run.out_dir.join("report.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

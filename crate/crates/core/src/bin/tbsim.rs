use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tbsim::cli::{self, EXIT_FAULT, EXIT_OK, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "tbsim", version, about = "GPU memory subsystem simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one run config and write report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, help = format!("output directory [default: ${OUT_DIR_ENV} or tbsim-out]"))]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-request, dispatch, issue and page-table CSVs.
        #[arg(long)]
        trace: bool,
    },
    /// Profile the thread block stride of a workload (or a run config's workload).
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        page_size: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of an experiment and write summary tables.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a run config, workload, experiment or plan file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let code = match args.cmd {
        Cmd::Run { config, out, seed, trace } => {
            let out = cli::resolve_out_dir(out.as_deref(), None);
            cli::cmd_run(&config, &out, seed, trace).map(|a| {
                println!("{}", cli::summary_line(&a.report));
                println!("report: {}", a.report_path.display());
                a.exit_code()
            })
        }
        Cmd::Profile { config, page_size, out } => {
            let out = cli::resolve_out_dir(out.as_deref(), None);
            cli::cmd_profile(&config, page_size, &out).map(|a| {
                if let Some(w) = &a.warning {
                    eprintln!("warning: {w}");
                }
                println!(
                    "stride {} ({:?}), {} batches, {:.1}% pages exclusive",
                    a.plan.stride,
                    a.plan.formation,
                    a.plan.batches.len(),
                    a.histogram.exclusive_fraction() * 100.0
                );
                println!("plan: {}", a.plan_path.display());
                EXIT_OK
            })
        }
        Cmd::Compare { config, out, seed } => cli::cmd_compare(&config, out.as_deref(), seed).map(|o| {
            for r in &o.results {
                if let cli::CellStatus::Failed(m) = &r.status {
                    eprintln!("cell {} [{}] failed: {m}", r.cell.index, r.cell.key());
                }
            }
            if o.baseline_failed() {
                eprintln!("baseline cell failed; normalized columns left empty");
            }
            println!("{} cells, baseline {}", o.results.len(), o.results[o.baseline].cell.key());
            println!("summary: {}", o.summary_path.display());
            o.exit_code()
        }),
        Cmd::Validate { config } => cli::cmd_validate(&config).map(|(_, msg)| {
            println!("ok: {msg}");
            EXIT_OK
        }),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAULT)
        }
    }
}

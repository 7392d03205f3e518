use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use interlace::Mode;
use interlace_sim::compare::{comparison_text, run_directory, run_file, summary_csv, summary_text};
use interlace_sim::excite::{check_excitation_csv, DEFAULT_RANK_TOL};
use interlace_sim::{compare_runs, summarize, RunReport, SimError};

const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "interlace-sim", version, about = "Run interlaced estimator scenarios")]
struct Cli {
    /// Step size override
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Horizon override
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// Directory for CSV traces, plot scripts and reports
    #[arg(long = "out-dir", global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file
    Run { scenario: PathBuf },
    /// Run every scenario in a directory and tabulate families
    Compare {
        dir: PathBuf,
        /// Second scenario directory to difference against
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Interval excitation and identifiability of the regressor columns of a trace
    CheckExcitation {
        trace: PathBuf,
        /// Gramian threshold (default 1e-6 per regressor dimension)
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        rank_tol: f64,
        /// Treat the rows as discrete-time samples
        #[arg(long)]
        discrete: bool,
    },
}

fn fail(e: &SimError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run_dir(dir: &PathBuf, out: &PathBuf, h: Option<f64>, t_end: Option<f64>) -> Result<(Vec<RunReport>, bool), SimError> {
    let mut reports = Vec::new();
    let mut diverged = false;
    for (path, res) in run_directory(dir, out, h, t_end)? {
        match res {
            Ok(o) => {
                diverged |= o.report.diverged;
                reports.push(o.report);
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return Err(e);
            }
        }
    }
    Ok((reports, diverged))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario } => match run_file(&scenario, &cli.out_dir, cli.h, cli.t_end) {
            Ok(o) => {
                println!("{}", o.report);
                println!("trace           {}", o.csv.display());
                if o.report.diverged {
                    ExitCode::from(EXIT_DIVERGED)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => fail(&e),
        },
        Command::Compare { dir, against } => {
            let (a, div_a) = match run_dir(&dir, &cli.out_dir.join("a"), cli.h, cli.t_end) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let fams = summarize(&a);
            print!("{}", summary_text(&fams));
            let summary = cli.out_dir.join("summary.csv");
            if let Err(e) = fs::write(&summary, summary_csv(&fams)) {
                return fail(&SimError::io(summary, e));
            }
            let mut diverged = div_a;
            if let Some(other) = against {
                let (b, div_b) = match run_dir(&other, &cli.out_dir.join("b"), cli.h, cli.t_end) {
                    Ok(r) => r,
                    Err(e) => return fail(&e),
                };
                diverged |= div_b;
                match compare_runs(&a, &b) {
                    Ok(c) => print!("{}", comparison_text(&c)),
                    Err(e) => return fail(&e),
                }
            }
            if diverged {
                ExitCode::from(EXIT_DIVERGED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::CheckExcitation { trace, threshold, rank_tol, discrete } => {
            let mode = if discrete { Mode::Discrete } else { Mode::Continuous };
            match check_excitation_csv(&trace, mode, threshold, rank_tol) {
                Ok(s) => {
                    let c = &s.certificate;
                    println!("columns         {}", s.columns.join(","));
                    println!("excited         {}", c.excited);
                    println!("level           {:.6e}", c.level);
                    println!("horizon         {} (index {})", c.horizon, c.horizon_index);
                    println!("max |phi|^2     {:.6e}", c.phi_max_sq);
                    println!("identifiable    {} (spanning samples {:?})", s.identifiable, s.spanning);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}

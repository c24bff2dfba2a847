use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use p2pgrid_core::conic::write_dump;
use p2pgrid_core::settlement::{render_compare, write_compare, write_report};
use p2pgrid_core::{compare, prepare, solve_spec, ClarabelSolver, LossModel, RunOptions, RunOutcome, SolveStatus, SolverOptions};

#[derive(Parser)]
#[command(name = "p2pgrid", version, about = "P2P energy trading on unbalanced feeders under adverse-agent attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write its report.
    Solve {
        /// Scenario file (same as --scenario).
        #[arg(value_name = "SCENARIO", conflicts_with = "scenario")]
        path: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the conic program as problem.txt.
        #[arg(long)]
        dump_problem: bool,
    },
    /// Solve a pre-attack and a post-attack scenario and report the differences.
    AttackCompare {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, env = "P2PGRID_OUT", default_value = "p2pgrid-out")]
    out: PathBuf,
    /// Solver feasibility and gap tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Disable load shedding.
    #[arg(long)]
    no_shedding: bool,
    /// Use self impedances only in the loss terms.
    #[arg(long)]
    diag_loss: bool,
}

impl CommonArgs {
    fn options(&self) -> Result<RunOptions> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            bail!("--tol must be positive, got {}", self.tol);
        }
        Ok(RunOptions {
            solver: SolverOptions {
                tol: self.tol,
                ..SolverOptions::default()
            },
            shedding: self.no_shedding.then_some(false),
            loss_model: self.diag_loss.then_some(LossModel::Diagonal),
        })
    }
}

fn exit_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => 2,
        SolveStatus::Unbounded | SolveStatus::NumericalFailure => 3,
    }
}

/// Fixed-point text with negative zero folded to zero.
fn fixed(v: f64, prec: usize) -> String {
    let s = format!("{v:.prec$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn summarize(label: &str, outcome: &RunOutcome) {
    println!("{label}: {}", outcome.status());
    match (&outcome.settlement, &outcome.dlmp, &outcome.soc_gap) {
        (Some(report), Some(dlmp), Some(soc)) => {
            let (lo, hi) = dlmp.range();
            println!("  objective        ${}", fixed(outcome.solution.objective_value, 4));
            println!("  dlmp range       [{}, {}] $/MWh", fixed(lo, 4), fixed(hi, 4));
            println!("  max soc gap      {:.3e}", soc.max_gap);
            println!("  curtailment      {} MW", fixed(report.total_curtailment_mw, 4));
            println!("  solve time       {:.3} s", outcome.wall_time_s);
        }
        _ => {
            if let Some(hint) = &outcome.hint {
                println!("  {hint}");
            }
        }
    }
}

fn write_outcome(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    if let Some(report) = &outcome.settlement {
        write_report(dir, report, &outcome.metadata())
            .with_context(|| format!("writing report to {}", dir.display()))?;
    }
    Ok(())
}

fn solve(path: &Path, common: &CommonArgs, dump: bool) -> Result<u8> {
    let options = common.options()?;
    let spec = prepare(path, &options).with_context(|| format!("loading {}", path.display()))?;
    let outcome = solve_spec(spec, &ClarabelSolver::new(options.solver))?;
    summarize(&outcome.spec.name, &outcome);
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    if dump {
        let target = common.out.join("problem.txt");
        let file = File::create(&target).with_context(|| format!("creating {}", target.display()))?;
        write_dump(&outcome.problem, BufWriter::new(file))?;
    }
    write_outcome(&common.out, &outcome)?;
    Ok(exit_code(outcome.status()))
}

fn attack_compare(pre: &Path, post: &Path, common: &CommonArgs) -> Result<u8> {
    let options = common.options()?;
    let pre_spec = prepare(pre, &options).with_context(|| format!("loading {}", pre.display()))?;
    let post_spec = prepare(post, &options).with_context(|| format!("loading {}", post.display()))?;
    let solver = ClarabelSolver::new(options.solver);
    let (a, b) = std::thread::scope(|s| {
        let a = s.spawn(|| solve_spec(pre_spec, &solver));
        let b = s.spawn(|| solve_spec(post_spec, &solver));
        (a.join(), b.join())
    });
    let a = a.map_err(|_| anyhow::anyhow!("pre-attack solve panicked"))??;
    let b = b.map_err(|_| anyhow::anyhow!("post-attack solve panicked"))??;
    summarize("pre", &a);
    summarize("post", &b);
    write_outcome(&common.out.join("pre"), &a)?;
    write_outcome(&common.out.join("post"), &b)?;
    for outcome in [&a, &b] {
        if !outcome.solution.is_optimal() {
            return Ok(exit_code(outcome.status()));
        }
    }
    let (ra, rb) = (a.settlement.as_ref().unwrap(), b.settlement.as_ref().unwrap());
    let delta = compare(ra, rb)?;
    print!("{}", render_compare(&delta));
    write_compare(&common.out, &delta)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve {
            path,
            scenario,
            common,
            dump_problem,
        } => {
            let Some(path) = path.or(scenario) else {
                bail!("a scenario file is required");
            };
            solve(&path, &common, dump_problem)
        }
        Command::AttackCompare { pre, post, common } => attack_compare(&pre, &post, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

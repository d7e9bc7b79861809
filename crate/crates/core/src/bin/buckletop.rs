use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use buckletop::driver::commands::{self, fdcheck_fixture, ladder_report};
use buckletop::driver::output::{json, read_design, write_atomic, DesignColumn};
use buckletop::driver::RunConfig;
use buckletop::elements::ElementKind;
use buckletop::{Error, Result};

#[derive(Parser)]
#[command(name = "buckletop", version, about = "Topology optimization with buckling constraints")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for per-mode sensitivity work.
    #[arg(long, global = true, env = "BUCKLETOP_THREADS")]
    threads: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, env = "BUCKLETOP_OUT")]
    out: Option<PathBuf>,
    /// Element formulation (overrides `element.kind`).
    #[arg(long, global = true)]
    element: Option<ElementKind>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the design loop.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Warm start from a design file (`x` column).
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Analyse a physical design without optimizing.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Design file (`xbar` column); uniform `x̄ = f` when absent.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Column buckling accuracy ladder.
    VerifyColumn {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of the design gradients.
    Fdcheck {
        /// Defaults to the 10×10 compressed block.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out_for = |cfg: &RunConfig| cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match &cli.cmd {
        Cmd::Optimize { config, density } => {
            let cfg = load(config)?;
            let kind = cli.element.unwrap_or(cfg.element.kind);
            let n = cfg.mesh.nelx * cfg.mesh.nely;
            let warm = density.as_deref().map(|p| read_design(p, n, DesignColumn::X)).transpose()?;
            let out = out_for(&cfg);
            let o = commands::optimize(&cfg, kind, warm, &out)?;
            let d = &o.diagnostics;
            println!(
                "{} iterations, J = {:.6e}, Jn = {:.4}, vol = {:.4}, lambda_1 = {:?}; results in {}",
                o.result.history.len(),
                d.jf,
                d.jn,
                d.volume,
                d.lambda.first(),
                out.display()
            );
        }
        Cmd::Analyze { config, density } => {
            let cfg = load(config)?;
            let kind = cli.element.unwrap_or(cfg.element.kind);
            let n = cfg.mesh.nelx * cfg.mesh.nely;
            let xbar = density.as_deref().map(|p| read_design(p, n, DesignColumn::Xbar)).transpose()?;
            let out = out_for(&cfg);
            let r = commands::analyze(&cfg, kind, xbar, Some(&out))?;
            for p in &r.penalizations {
                println!("p = {}: J = {:.6e}, lambda_1 = {:?}", p.p, p.compliance, p.lambda.first());
            }
            println!("{}", json(&r.diagnostics)?);
        }
        Cmd::VerifyColumn { config } => {
            let kinds = match (cli.element, config) {
                (Some(k), _) => vec![k],
                (None, Some(c)) => vec![load(c)?.element.kind],
                (None, None) => vec![ElementKind::Q4, ElementKind::Q6],
            };
            let rows = commands::verify_column(&kinds);
            let report = ladder_report(&rows);
            print!("{report}");
            if let Some(dir) = &cli.out {
                write_atomic(&dir.join("column_ladder.txt"), report.as_bytes())?;
            }
            if rows.iter().any(|r| r.2.is_err()) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Fdcheck { config } => {
            let cfg = match config {
                Some(c) => load(c)?,
                None => fdcheck_fixture(),
            };
            let kind = cli.element.unwrap_or(cfg.element.kind);
            let r = commands::fdcheck(&cfg, kind)?;
            let out = out_for(&cfg);
            write_atomic(&out.join("fdcheck.csv"), r.csv().as_bytes())?;
            for s in &r.summary {
                println!(
                    "{:<11} error {:.3e} tol {:.0e} {}",
                    s.quantity,
                    s.error,
                    s.tolerance,
                    if s.pass { "ok" } else { "EXCEEDED" }
                );
            }
            if !r.pass() {
                for s in r.summary.iter().filter(|s| !s.pass) {
                    let worst = r
                        .rows
                        .iter()
                        .filter(|row| row.quantity == s.quantity)
                        .max_by(|a, b| (a.analytic - a.fd).abs().total_cmp(&(b.analytic - b.fd).abs()));
                    if let Some(w) = worst {
                        eprintln!(
                            "{}: worst entry e = {} analytic {:e} fd {:e}",
                            s.quantity, w.element, w.analytic, w.fd
                        );
                    }
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

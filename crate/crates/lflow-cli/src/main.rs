//! `lflow` — command-line front end of the L-geometry laboratory.
//!
//! Subcommands: two-point distances, reduced-volume curves, the named
//! verification suites, and the small-time experiment. Worker count comes
//! from `--workers` or the `LFLOW_THREADS` environment variable; reports
//! are byte-deterministic for fixed config and seed.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lflow_core::harness::{run_scenario, RunOptions, Suite};
use lflow_core::{monotonicity_curve, ChartPoint, ScenarioConfig, SolverOptions};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lflow", version, about = "L-geometry laboratory on exact flow backgrounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExecArgs {
    /// Worker threads (default: LFLOW_THREADS or hardware parallelism)
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for report files
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Write (x, y) column files for curves
    #[arg(long)]
    emit_plotdata: bool,
    /// Include wall-clock timings in reports (breaks byte reproducibility)
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Two-point distance Q(x, tau1; y, tau2) on a background
    Ldist {
        /// Coordinates of x, comma-separated
        x: String,
        tau1: f64,
        /// Coordinates of y, comma-separated
        y: String,
        tau2: f64,
        /// Scenario file providing the background
        #[arg(long)]
        bg: PathBuf,
    },
    /// Reduced-volume curve over a time grid
    ReducedVolume {
        /// Scenario file providing the background
        #[arg(long)]
        bg: PathBuf,
        /// Basepoint coordinates, comma-separated
        #[arg(long)]
        p: Option<String>,
        /// Time grid, comma-separated
        #[arg(long)]
        tau_grid: Option<String>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Run a named verification suite over a scenario
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Small-time experiment recovering reduced-volume monotonicity
    Section3 {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

fn parse_coords(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().context("bad coordinate"))
        .collect()
}

/// Point from user coordinates; curved embedding blocks are renormalized
/// onto their model surface so hand-typed decimals are accepted.
fn parse_point(bg: &lflow_core::FlowBackground, s: &str) -> Result<ChartPoint> {
    let mut coords = parse_coords(s)?;
    let split = bg.curved_split();
    if split > 0 && coords.len() >= split {
        let renorm = match bg.kind() {
            lflow_core::ModelKind::HyperbolicQuotient => {
                let q = -lflow_core::background::minkowski_dot(&coords[..split], &coords[..split]);
                if q <= 0.0 {
                    bail!("curved block is not timelike-normalizable");
                }
                q.sqrt()
            }
            _ => coords[..split]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
        };
        if renorm <= 0.0 {
            bail!("curved block cannot be normalized");
        }
        for v in &mut coords[..split] {
            *v /= renorm;
        }
    }
    let p = ChartPoint(coords);
    bg.check_point(&p)?;
    Ok(p)
}

fn workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| {
            std::env::var("LFLOW_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn run_opts(exec: &ExecArgs) -> RunOptions {
    RunOptions {
        workers: workers(exec.workers),
        out_dir: exec.report_dir.clone(),
        emit_plotdata: exec.emit_plotdata,
        timings: exec.timings,
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(all_pass) => std::process::exit(if all_pass { 0 } else { 1 }),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ldist { x, tau1, y, tau2, bg } => {
            let (cfg, _raw) = ScenarioConfig::load(&bg)?;
            let background = cfg.background()?;
            let xp = parse_point(&background, &x)?;
            let yp = parse_point(&background, &y)?;
            let r = lflow_core::l_distance(
                &background,
                &xp,
                tau1,
                &yp,
                tau2,
                &SolverOptions::default(),
            )?;
            println!("{:.6}", r.q);
            Ok(true)
        }
        Command::ReducedVolume { bg, p, tau_grid, exec } => {
            let (cfg, _raw) = ScenarioConfig::load(&bg)?;
            let background = cfg.background()?;
            let point = match p {
                Some(s) => parse_point(&background, &s)?,
                None => cfg.basepoint(&background)?,
            };
            let grid = match tau_grid {
                Some(s) => parse_coords(&s)?,
                None => cfg
                    .times
                    .tau_grid
                    .clone()
                    .context("no tau grid given (flag or config)")?,
            };
            if grid.is_empty() {
                bail!("empty tau grid");
            }
            let opts = run_opts(&exec);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()?;
            let curve = pool.install(|| {
                monotonicity_curve(
                    &background,
                    &point,
                    &grid,
                    cfg.sampling.grid_res,
                    &SolverOptions::coarse(),
                )
            })?;
            println!("tau,value,error_estimate");
            for ((t, v), e) in curve
                .tau_grid
                .iter()
                .zip(&curve.values)
                .zip(&curve.quadrature_error_estimate)
            {
                println!("{t:.6},{v:.9e},{e:.3e}");
            }
            if opts.emit_plotdata {
                if let Some(dir) = &opts.out_dir {
                    std::fs::create_dir_all(dir)?;
                    let mut dat = String::new();
                    for ((t, v), e) in curve
                        .tau_grid
                        .iter()
                        .zip(&curve.values)
                        .zip(&curve.quadrature_error_estimate)
                    {
                        dat.push_str(&format!("{t:.12e} {v:.12e} {e:.12e}\n"));
                    }
                    std::fs::write(dir.join("plot_vtilde.dat"), dat)?;
                }
            }
            Ok(curve.is_monotone_within_budget())
        }
        Command::Verify { suite, config, exec } => {
            let suite: Suite = suite.parse()?;
            let (cfg, raw) = ScenarioConfig::load(&config)?;
            let report = run_scenario(&cfg, &raw, suite, &run_opts(&exec))?;
            for row in report.rows() {
                println!(
                    "[{}] {}: measured {:.6e} (threshold {} {:.6e})",
                    if row.pass { "PASS" } else { "FAIL" },
                    row.check,
                    row.measured,
                    match row.cmp {
                        lflow_core::Cmp::Le => "<=",
                        lflow_core::Cmp::Ge => ">=",
                    },
                    row.threshold
                );
            }
            Ok(report.all_pass())
        }
        Command::Section3 { config, exec } => {
            let (cfg, raw) = ScenarioConfig::load(&config)?;
            let report = run_scenario(&cfg, &raw, Suite::Section3, &run_opts(&exec))?;
            println!("{}", report.summary(exec.timings));
            Ok(report.all_pass())
        }
    }
}

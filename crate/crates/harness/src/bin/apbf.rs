use std::path::PathBuf;
use std::process::ExitCode;

use apbf_core::{LodModel, SolverMode};
use apbf_harness::bench::{bench, format_table, parse_modes};
use apbf_harness::metrics::{compare_runs, MetricsFile, DEFAULT_TOLERANCE_PCT};
use apbf_harness::{build_scenario, run, HarnessError, Overrides, RunOptions};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "apbf",
    version,
    about = "Adaptive position based fluids: run, compare and benchmark scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pbf,
    Apbf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lod {
    Dtc,
    Dtvs,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write per-frame metrics.
    Run {
        /// Built-in name (dam_break, double_dam_break, multi_dam_break) or config file.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Fixed iteration count for pbf mode (default: the scenario's maximum).
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long, value_enum)]
        lod_model: Option<Lod>,
        /// Fraction of the full particle count.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Single-threaded with time_ms written as 0, for byte-identical output.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        out: PathBuf,
        /// Write a level-coloured PPM every k frames.
        #[arg(long, value_name = "K")]
        dump_images: Option<u32>,
        /// Write a particle CSV every k frames.
        #[arg(long, value_name = "K")]
        dump_particles: Option<u32>,
    },
    /// Compare the average-density series of two metrics files.
    Compare {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE_PCT)]
        tolerance_pct: f64,
    },
    /// Median frame time and iteration totals for several modes.
    Bench {
        #[arg(long)]
        scenario: String,
        /// Comma-separated list, e.g. pbf:6,pbf:3,apbf:dtvs,apbf:dtc
        #[arg(long, default_value = "pbf,apbf:dtvs,apbf:dtc")]
        modes: String,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            iterations,
            lod_model,
            scale,
            frames,
            seed,
            deterministic,
            out,
            dump_images,
            dump_particles,
        } => {
            let overrides = Overrides {
                frames,
                seed,
                mode: mode.map(|m| match m {
                    Mode::Pbf => SolverMode::Pbf,
                    Mode::Apbf => SolverMode::Apbf,
                }),
                iterations,
                lod_model: lod_model.map(|m| match m {
                    Lod::Dtc => LodModel::Dtc,
                    Lod::Dtvs => LodModel::Dtvs,
                }),
            };
            let spec = build_scenario(&scenario, scale, &overrides)?;
            let opts = RunOptions {
                out: Some(out.clone()),
                deterministic,
                dump_images,
                dump_particles,
            };
            let report = run(spec, &opts)?;
            println!(
                "{} frames, median frame {:.3} ms, {} particle iterations, max speed {:.4}; metrics in {}",
                report.stats.len(),
                report.median_frame_ms,
                report.total_iterations,
                report.max_speed,
                out.join("metrics.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            reference,
            test,
            tolerance_pct,
        } => {
            let a = MetricsFile::read(&reference)?;
            let b = MetricsFile::read(&test)?;
            let c = compare_runs(&a, &b, tolerance_pct)?;
            println!(
                "max |avg density difference| = {:.6} percentage points at frame {} (tolerance {}): {}",
                c.max_difference,
                c.worst_frame,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" }
            );
            Ok(if c.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Bench {
            scenario,
            modes,
            reps,
            scale,
            frames,
            seed,
        } => {
            let spec = build_scenario(
                &scenario,
                scale,
                &Overrides {
                    frames,
                    seed,
                    ..Default::default()
                },
            )?;
            let modes = parse_modes(&modes)?;
            let rows = bench(&spec, &modes, reps)?;
            print!("{}", format_table(&rows, spec.solver.range.n_max()));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

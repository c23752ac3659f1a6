use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cpgd_core::channel::Point3;
use cpgd_core::decmap::reduce_map;
use cpgd_sim::config::{ExperimentConfig, SweepPlane};
use cpgd_sim::error::{SimError, SimResult};
use cpgd_sim::experiment::{
    run_association, run_map_experiment, run_sweep_experiment, summary_row, write_map_outputs,
};
use cpgd_sim::mapfile::MapFile;
use cpgd_sim::output::{ensure_dir, write_csv, write_json, Manifest};
use cpgd_sim::validate;
use serde::Deserialize;

/// Exit code for runs that finished but did not converge.
const NON_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "cpgd", version, about = "Decoding maps, association and rate sweeps for multi-color VLC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decoding maps.
    #[command(subcommand)]
    Map(MapCommand),
    /// Transmitter-user association.
    #[command(subcommand)]
    Assoc(AssocCommand),
    /// User-grid sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Run the oracle suites.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the reports as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MapCommand {
    /// Build, reduce and export one map per filter.
    Build(Box<Common>),
    /// Re-reduce a map file with new thresholds.
    Reduce {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        tau_diff: f64,
        #[arg(long, default_value_t = 0.1)]
        tau_loss: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a summary of a map file, or one cell with --at.
    Inspect {
        #[arg(long)]
        map: PathBuf,
        /// Grid position `x,y`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        at: Option<[f64; 2]>,
    },
}

#[derive(Subcommand)]
enum AssocCommand {
    /// Associate users on the configured grid at --anchor, or listed in --positions.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Lowest-coordinate user of the grid, `x,y,z`.
        #[arg(long, value_parser = parse_point, conflicts_with = "positions", allow_hyphen_values = true)]
        anchor: Option<Point3>,
        /// CSV with columns x,y,z.
        #[arg(long)]
        positions: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Sweep the user grid over a plane.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_plane)]
        plane: Option<SweepPlane>,
        /// Anchor range along the first axis, `lo,hi`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        u: Option<[f64; 2]>,
        /// Anchor range along the second axis, `lo,hi`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        v: Option<[f64; 2]>,
        #[arg(long)]
        sweep_step: Option<f64>,
        /// The fixed coordinate (z on xy, x on yz).
        #[arg(long, allow_hyphen_values = true)]
        fixed: Option<f64>,
    },
}

/// Flags mirroring the experiment configuration; they override --config.
#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled scene name or scene file.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Receiver filter index (repeatable).
    #[arg(long = "filter")]
    filters: Vec<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    tau_diff: Option<f64>,
    #[arg(long)]
    tau_loss: Option<f64>,
    #[arg(long)]
    no_symmetry: bool,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    crossover_rate: Option<f64>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    #[arg(long)]
    elitism: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

impl Common {
    fn config(&self) -> SimResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            scene => scene, out => out, seed => seed, step => map.step, tau => map.tau,
            tau_diff => map.tau_diff, tau_loss => map.tau_loss, rows => users.rows,
            cols => users.cols, spacing => users.spacing, population => ga.population,
            generations => ga.generations, crossover_rate => ga.crossover_rate,
            mutation_rate => ga.mutation_rate, elitism => ga.elitism,
            epsilon => update.epsilon, max_rounds => update.max_rounds,
        );
        if !self.filters.is_empty() {
            c.filters = self.filters.clone();
        }
        if self.no_symmetry {
            c.map.symmetry = false;
        }
        Ok(c)
    }
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_point(s: &str) -> Result<Point3, String> {
    let [x, y, z] = parse_floats::<3>(s)?;
    Ok(Point3::new(x, y, z))
}

fn parse_plane(s: &str) -> Result<SweepPlane, String> {
    match s {
        "xy" => Ok(SweepPlane::Xy),
        "yz" => Ok(SweepPlane::Yz),
        _ => Err("plane must be xy or yz".into()),
    }
}

#[derive(Deserialize)]
struct PositionRow {
    x: f64,
    y: f64,
    z: f64,
}

fn read_positions(path: &Path) -> SimResult<Vec<Point3>> {
    let file = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize::<PositionRow>()
        .map(|r| r.map(|p| Point3::new(p.x, p.y, p.z)).map_err(SimError::from))
        .collect()
}

/// Runs a command that writes into `out` and finishes its manifest.
fn with_manifest(
    command: &str,
    config: &ExperimentConfig,
    out: &Path,
    run: impl FnOnce(&mut Manifest) -> SimResult<()>,
) -> SimResult<u8> {
    ensure_dir(out)?;
    let mut manifest = Manifest::new(command, config.seed, config)?;
    let start = Instant::now();
    run(&mut manifest)?;
    manifest.wall_time_ms = start.elapsed().as_millis();
    let warned = !manifest.warnings.is_empty();
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let path = manifest.write(out)?;
    eprintln!("wrote {}", path.display());
    Ok(if warned { NON_CONVERGENCE } else { 0 })
}

fn run(cli: Cli) -> SimResult<u8> {
    match cli.command {
        Command::Map(MapCommand::Build(common)) => {
            let config = common.config()?;
            config.validate()?;
            let out = config.out.clone();
            with_manifest("map build", &config, &out, |m| {
                for o in run_map_experiment(&config, &out)? {
                    let s = summary_row(&o.map, &o.clustering);
                    println!(
                        "filter {}: {} samples, {} clusters, compression {:.1}%, max average loss {:.3e}",
                        s.filter,
                        s.samples,
                        s.clusters,
                        100.0 * s.compression_ratio,
                        s.max_average_loss
                    );
                    m.outputs.extend(o.files);
                }
                m.outputs.push(out.join("map_summary.csv"));
                Ok(())
            })
        }
        Command::Map(MapCommand::Reduce { map, tau_diff, tau_loss, out }) => {
            if !(tau_diff > 0.0 && tau_loss > 0.0) {
                return Err(SimError::Config("clustering thresholds must be positive".into()));
            }
            let file = MapFile::read(&map)?;
            let decoding = file.to_map()?;
            let args = serde_json::json!({ "map": map, "tau_diff": tau_diff, "tau_loss": tau_loss });
            ensure_dir(&out)?;
            let mut manifest = Manifest::new("map reduce", 0, &args)?;
            let start = Instant::now();
            let clustering = reduce_map(&decoding, tau_diff, tau_loss)?;
            manifest.outputs = write_map_outputs(&decoding, &clustering, &file.scene_hash, tau_diff, tau_loss, &out)?;
            let summary = out.join("map_summary.csv");
            write_csv(&summary, &[summary_row(&decoding, &clustering)])?;
            manifest.outputs.push(summary);
            manifest.wall_time_ms = start.elapsed().as_millis();
            manifest.write(&out)?;
            println!("{} clusters, compression {:.1}%", clustering.len(), 100.0 * clustering.compression_ratio());
            Ok(0)
        }
        Command::Map(MapCommand::Inspect { map, at }) => {
            let file = MapFile::read(&map)?;
            let value = match at {
                None => serde_json::json!({
                    "format": file.format,
                    "version": file.version,
                    "scene_hash": file.scene_hash,
                    "settings": file.settings,
                    "grid": file.grid,
                    "noise_var": file.noise_var,
                    "cells": file.cells.len(),
                    "outage_cells": file.cells.iter().filter(|c| c.order.is_none()).count(),
                    "clustering": file.clustering,
                }),
                Some([x, y]) => {
                    let decoding = file.to_map()?;
                    let p = Point3::new(x, y, decoding.grid().z);
                    let cell = decoding
                        .grid()
                        .nearest(p)
                        .ok_or_else(|| SimError::Config(format!("({x}, {y}) is outside the map")))?;
                    serde_json::json!({ "cell": cell, "record": file.cells[cell] })
                }
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(0)
        }
        Command::Assoc(AssocCommand::Solve { common, anchor, positions }) => {
            let config = common.config()?;
            config.validate()?;
            let users = match (anchor, positions) {
                (_, Some(path)) => read_positions(&path)?,
                (anchor, None) => config.users.positions(
                    SweepPlane::Xy,
                    anchor.unwrap_or(Point3::new(0.0, 0.0, config.sweep.fixed_coord())),
                ),
            };
            if users.is_empty() {
                return Err(SimError::Config("no user positions".into()));
            }
            let out = config.out.clone();
            with_manifest("assoc solve", &config, &out, |m| {
                let (summary, files) = run_association(&config, &users, &out)?;
                println!(
                    "{} of {} users served; sum rate {:.6} (phase one {:.6}), min rate {:.6}, {} rounds",
                    summary.served, summary.users, summary.sum_rate, summary.phase_one_sum, summary.min_rate, summary.rounds
                );
                if !summary.converged {
                    m.warnings.push(format!("rate update did not converge in {} rounds", summary.rounds));
                }
                m.outputs.extend(files);
                Ok(())
            })
        }
        Command::Sweep(SweepCommand::Run { common, plane, u, v, sweep_step, fixed }) => {
            let mut config = common.config()?;
            if let Some(p) = plane {
                config.sweep.plane = p;
            }
            config.sweep.u = u.or(config.sweep.u);
            config.sweep.v = v.or(config.sweep.v);
            config.sweep.fixed = fixed.or(config.sweep.fixed);
            if let Some(s) = sweep_step {
                config.sweep.step = s;
            }
            config.validate()?;
            let out = config.out.clone();
            with_manifest("sweep run", &config, &out, |m| {
                let (rows, path) = run_sweep_experiment(&config, &out)?;
                let stuck = rows.iter().filter(|r| !r.converged).count();
                if stuck > 0 {
                    m.warnings.push(format!("{stuck} anchors did not converge"));
                }
                let ok = rows.iter().filter(|r| r.status == "ok").count();
                println!("{} anchors ({ok} solved) -> {}", rows.len(), path.display());
                m.outputs.push(path);
                Ok(())
            })
        }
        Command::Validate { seed, out } => {
            let reports = validate::run_all(seed)?;
            for r in &reports {
                println!("{}", r.line());
            }
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_json(&dir.join("validate.json"), &reports)?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(SimError::Check(format!("{failed} of {} suites failed", reports.len())));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

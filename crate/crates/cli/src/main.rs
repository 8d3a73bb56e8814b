use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use homog_cli::config::RunConfig;
use homog_cli::run::{run, RunOptions};
use homog_cli::{report, CliError};
use homog_core::closed_form::{stokes_radius, AnnulusSpec};
use homog_core::homog_lab::scenarios::{self, Settings};
use homog_core::mesh::{self, GradingSpec, Mesh};

#[derive(Parser)]
#[command(name = "homog", version, about = "Periodic homogenization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of a JSON configuration.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the solver tolerance of every scenario.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        vtk: bool,
    },
    /// Merge report CSVs, print the table and check the assertions.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the merged rows to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a mesh and dump it.
    Mesh {
        #[arg(value_enum)]
        kind: MeshKind,
        /// Elements per side (square).
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Lattice pitch (lattice).
        #[arg(long, default_value_t = 0.25)]
        pitch: f64,
        /// Outer circle radius.
        #[arg(long = "R", default_value_t = 0.4)]
        outer: f64,
        /// Inner circle radius.
        #[arg(long, default_value_t = 0.01)]
        r: f64,
        /// Cell half width (periodic cell, lattice).
        #[arg(long, default_value_t = 0.5)]
        half_width: f64,
        #[arg(long, default_value_t = 64)]
        layers: usize,
        #[arg(long, default_value_t = 1.3)]
        ratio: f64,
        #[arg(long, default_value_t = 0.05)]
        target_h: f64,
        #[arg(long, value_enum, default_value_t = MeshFormat::Text)]
        format: MeshFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a single cell problem and print its summary as JSON.
    Cell {
        #[arg(value_enum)]
        kind: CellKind,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Inner radius, instead of deriving it from eps and mu or gamma.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long = "R", default_value_t = 0.4)]
        outer: f64,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshKind {
    Square,
    Disk,
    PeriodicCell,
    Lattice,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshFormat {
    Text,
    Vtk,
}

#[derive(Clone, Copy, ValueEnum)]
enum CellKind {
    Z,
    V,
    Wsharp,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOMOG_LOG", "error")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("homog: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { config, out_dir, threads, tol, vtk } => {
            let cfg = RunConfig::load(&config)?;
            let (manifest, failed) = run(&cfg, &RunOptions { out_dir, threads, tol, vtk })?;
            for o in &manifest.outputs {
                println!("{}: {}", o.scenario, o.csv.display());
            }
            for f in &manifest.failures {
                eprintln!("failed: {f}");
            }
            Ok(if failed { 2 } else { 0 })
        }
        Command::Report { csv, out } => {
            let rows = report::merge(&csv)?;
            let stdout = io::stdout();
            let mut w = stdout.lock();
            report::write_table(&rows, &mut w).map_err(io_err)?;
            if let Some(path) = out {
                homog_cli::run::write_csv(&path, &rows)?;
            }
            let checks = report::checks(&rows);
            for c in &checks {
                writeln!(w, "{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).map_err(io_err)?;
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
        Command::Mesh { kind, n, pitch, outer, r, half_width, layers, ratio, target_h, format, out } => {
            let grading = GradingSpec { layers, ratio, target_h };
            let lab = |e: mesh::MeshError| CliError::Config(e.to_string());
            let ann = || AnnulusSpec::new(outer, r).map_err(|e| CliError::Config(e.to_string()));
            let m: Mesh = match kind {
                MeshKind::Square => mesh::structured_square(n, [0.0, 0.0], [1.0, 1.0], false).map_err(lab)?,
                MeshKind::Disk => mesh::disk_cell(outer, &grading, Some(r)).map_err(lab)?,
                MeshKind::PeriodicCell => mesh::periodic_cell(&ann()?, half_width, &grading).map_err(lab)?,
                MeshKind::Lattice => {
                    mesh::perforated_lattice([0.0, 0.0], [1.0, 1.0], pitch, &ann()?, half_width, &grading).map_err(lab)?
                }
            };
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
                None => Box::new(io::stdout().lock()),
            };
            let mut sink = BufWriter::new(sink);
            match format {
                MeshFormat::Text => m.write_text(&mut sink),
                MeshFormat::Vtk => m.write_vtk(&mut sink, &[]),
            }
            .and_then(|_| sink.flush())
            .map_err(io_err)?;
            eprintln!("{} vertices, {} triangles, h_min {:.3e}", m.num_vertices(), m.num_triangles(), m.h_min());
            Ok(0)
        }
        Command::Cell { kind, eps, mu, gamma, r, outer, tol } => {
            let mut settings = Settings::default();
            if let Some(t) = tol {
                settings.tol = t;
            }
            let need = |v: Option<f64>, what: &str| v.ok_or_else(|| CliError::Config(format!("--{what} is required")));
            let closed = |e: homog_core::closed_form::ClosedFormError| CliError::Config(e.to_string());
            let outcome = match kind {
                CellKind::Z => {
                    scenarios::cell_z("cell_z", need(eps, "eps")?, need(mu, "mu")?, outer, &settings)?
                }
                CellKind::V | CellKind::Wsharp => {
                    let r = match r {
                        Some(r) => r,
                        None => stokes_radius(need(gamma, "gamma")?, need(eps, "eps")?).map_err(closed)?,
                    };
                    if matches!(kind, CellKind::V) {
                        scenarios::cell_v("cell_v", r, eps, &settings)?
                    } else {
                        scenarios::cell_wsharp("cell_wsharp", r, eps, &settings)?
                    }
                }
            };
            let text = serde_json::to_string_pretty(&outcome).map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
            Ok(0)
        }
    }
}

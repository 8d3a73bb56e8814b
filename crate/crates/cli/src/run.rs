//! Executes every ladder point of every scenario and writes the report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use homog_core::homog_lab::scenarios::{self, Outcome, Settings};
use homog_core::homog_lab::{sort_rows, EffectiveReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, ScenarioConfig, ScenarioKind};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub tol: Option<f64>,
    pub vtk: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub outputs: Vec<ScenarioOutputs>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutputs {
    pub scenario: String,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// One ladder point.
#[derive(Debug, Clone)]
struct Job<'a> {
    scenario: &'a ScenarioConfig,
    eps: Option<f64>,
    r: Option<f64>,
    n: Option<usize>,
}

fn jobs(config: &RunConfig) -> Vec<Job<'_>> {
    let mut out = Vec::new();
    for s in &config.scenarios {
        if s.kind == ScenarioKind::Manufactured {
            out.extend(s.mesh.n.iter().map(|&n| Job { scenario: s, eps: None, r: None, n: Some(n) }));
        } else if !s.r_list.is_empty() {
            out.extend(s.r_list.iter().map(|&r| Job { scenario: s, eps: None, r: Some(r), n: None }));
        } else {
            out.extend(s.eps_list.iter().map(|&e| Job { scenario: s, eps: Some(e), r: None, n: None }));
        }
    }
    out
}

fn execute(job: &Job, settings: &Settings) -> homog_core::homog_lab::Result<Outcome> {
    let s = job.scenario;
    let name = s.name.as_str();
    let eps = job.eps.unwrap_or(f64::NAN);
    match s.kind {
        ScenarioKind::ScalarSmooth => scenarios::scalar_smooth(name, eps, s.amplitude, &s.f, settings),
        ScenarioKind::ScalarConcentrated => {
            scenarios::scalar_concentrated(name, eps, s.mu.unwrap_or_default(), s.outer, &s.f, settings)
        }
        ScenarioKind::StokesSmooth => scenarios::stokes_smooth(name, eps, s.amplitude, &s.f, settings),
        ScenarioKind::StokesConcentrated => {
            scenarios::stokes_concentrated(name, eps, s.gamma.unwrap_or_default(), &s.f, settings)
        }
        ScenarioKind::CellZ => scenarios::cell_z(name, eps, s.mu.unwrap_or_default(), s.outer, settings),
        ScenarioKind::CellV | ScenarioKind::CellWsharp => {
            let r = match job.r {
                Some(r) => r,
                None => homog_core::closed_form::stokes_radius(s.gamma.unwrap_or_default(), eps)?,
            };
            if s.kind == ScenarioKind::CellV {
                scenarios::cell_v(name, r, job.eps, settings)
            } else {
                scenarios::cell_wsharp(name, r, job.eps, settings)
            }
        }
        ScenarioKind::Manufactured => scenarios::manufactured(name, job.n.unwrap_or(4), settings),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn write_csv(path: &Path, rows: &[EffectiveReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if rows.is_empty() {
        w.write_record(EffectiveReport::COLUMNS).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs the configuration; returns the manifest and whether any row failed.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<(RunManifest, bool), CliError> {
    let started = now();
    fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", opts.out_dir.display())))?;
    let vtk_dir = opts.out_dir.join("vtk");
    if opts.vtk {
        fs::create_dir_all(&vtk_dir).map_err(|e| CliError::Io(format!("{}: {e}", vtk_dir.display())))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let jobs = jobs(config);
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut settings = job.scenario.settings();
                if let Some(t) = opts.tol {
                    settings.tol = t;
                }
                if opts.vtk {
                    settings.vtk_dir = Some(vtk_dir.clone());
                }
                log::info!("{} eps={:?} r={:?} n={:?}", job.scenario.name, job.eps, job.r, job.n);
                (job, execute(job, &settings))
            })
            .collect()
    });
    let mut failures = Vec::new();
    let mut outputs = Vec::new();
    for s in &config.scenarios {
        let mut rows = Vec::new();
        let mut details = Vec::new();
        for (job, res) in results.iter().filter(|(j, _)| std::ptr::eq(j.scenario, s)) {
            match res {
                Ok(o) => {
                    rows.push(o.row.clone());
                    details.push(o.clone());
                }
                Err(e) => {
                    let msg = format!("{} eps={:?} r={:?} n={:?}: {e}", s.name, job.eps, job.r, job.n);
                    log::error!("{msg}");
                    failures.push(msg);
                }
            }
        }
        sort_rows(&mut rows);
        let csv = opts.out_dir.join(format!("{}.csv", s.name));
        let json = opts.out_dir.join(format!("{}.json", s.name));
        write_csv(&csv, &rows)?;
        write_json(&json, &details)?;
        outputs.push(ScenarioOutputs { scenario: s.name.clone(), csv, json });
    }
    let manifest = RunManifest {
        config_hash: config.hash(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        started_unix: started,
        finished_unix: now(),
        failures: failures.clone(),
    };
    write_json(&opts.out_dir.join("manifest.json"), &manifest)?;
    Ok((manifest, !failures.is_empty()))
}

//! Run configuration: a JSON document listing scenarios.

use std::collections::BTreeSet;
use std::path::Path;

use homog_core::closed_form::{scalar_radius, stokes_radius};
use homog_core::homog_lab::scenarios::{Settings, Source};
use homog_core::mesh::GradingSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioKind {
    ScalarSmooth,
    ScalarConcentrated,
    StokesSmooth,
    StokesConcentrated,
    CellZ,
    CellV,
    CellWsharp,
    Manufactured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Refinement levels of the manufactured runs.
    pub n: Vec<usize>,
    pub elements_per_eps: f64,
    pub hom_n: usize,
    pub grading: GradingSpec,
    pub stokes_mesh_radius: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        let s = Settings::default();
        MeshConfig {
            n: vec![4, 8, 16, 32],
            elements_per_eps: s.elements_per_eps,
            hom_n: s.hom_n,
            grading: s.grading,
            stokes_mesh_radius: s.stokes_mesh_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Inner radii for cell sweeps given directly instead of through `eps_list`.
    #[serde(default)]
    pub r_list: Vec<f64>,
    #[serde(rename = "R", default = "default_outer")]
    pub outer: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub f: Source,
    #[serde(default = "default_margin")]
    pub interior_margin: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_p")]
    pub corrector_p: f64,
}

fn default_outer() -> f64 {
    0.4
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_margin() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-10
}
fn default_p() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<ScenarioConfig>,
}

impl ScenarioConfig {
    pub fn settings(&self) -> Settings {
        Settings {
            hom_n: self.mesh.hom_n,
            elements_per_eps: self.mesh.elements_per_eps,
            grading: self.mesh.grading,
            interior_margin: self.interior_margin,
            corrector_p: self.corrector_p,
            tol: self.tol,
            stokes_mesh_radius: self.mesh.stokes_mesh_radius,
            ..Settings::default()
        }
    }

    fn validate(&self, at: &str) -> Result<(), CliError> {
        let err = |field: &str, msg: String| fail(at, field, msg);
        use ScenarioKind::*;
        if self.name.trim().is_empty() {
            return err("name", "must not be empty".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return err("tol", format!("{} not in (0, 1)", self.tol));
        }
        if !(self.interior_margin > 0.0 && self.interior_margin < 0.5) {
            return err("interior_margin", format!("{} not in (0, 0.5)", self.interior_margin));
        }
        if !(1.0..2.0).contains(&self.corrector_p) {
            return err("corrector_p", format!("{} not in [1, 2)", self.corrector_p));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return err("amplitude", format!("{} must be positive", self.amplitude));
        }
        let m = &self.mesh;
        if !(m.elements_per_eps >= 2.0) {
            return err("mesh.elements_per_eps", format!("{} below 2", m.elements_per_eps));
        }
        if m.hom_n < 2 {
            return err("mesh.hom_n", format!("{} below 2", m.hom_n));
        }
        let g = &m.grading;
        if g.layers == 0 || !(g.ratio > 1.0) || !(g.target_h > 0.0) {
            return err("mesh.grading", format!("{g:?} needs layers > 0, ratio > 1, target_h > 0"));
        }
        if !(m.stokes_mesh_radius > 0.0 && m.stokes_mesh_radius < 1.0) {
            return err("mesh.stokes_mesh_radius", format!("{} not in (0, 1)", m.stokes_mesh_radius));
        }
        if let Err(e) = self.f.validate(matches!(self.kind, StokesSmooth | StokesConcentrated)) {
            return err("f", e);
        }
        let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
        if !self.r_list.is_empty() {
            if !matches!(self.kind, CellV | CellWsharp) {
                return err("r_list", "only used by CELL_V and CELL_WSHARP".into());
            }
            if !decreasing(&self.r_list) {
                return err("r_list", "must be strictly decreasing".into());
            }
            if let Some(r) = self.r_list.iter().find(|r| !(**r > 0.0 && **r < m.stokes_mesh_radius.min(1.0))) {
                return err("r_list", format!("{r} not in (0, {})", m.stokes_mesh_radius));
            }
        }
        if self.kind == Manufactured {
            if m.n.is_empty() || m.n.iter().any(|&n| n < 1) {
                return err("mesh.n", "needs positive refinement levels".into());
            }
            if !m.n.windows(2).all(|w| w[1] > w[0]) {
                return err("mesh.n", "must be strictly increasing".into());
            }
            return Ok(());
        }
        if self.eps_list.is_empty() && self.r_list.is_empty() {
            return err("eps_list", "must not be empty".into());
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return err("eps_list", "entries must lie in (0, 1]".into());
        }
        if !decreasing(&self.eps_list) {
            return err("eps_list", "must be strictly decreasing".into());
        }
        let need = |v: Option<f64>, field: &str| match v {
            Some(x) if x > 0.0 && x.is_finite() => Ok(x),
            Some(x) => fail(at, field, format!("{x} must be positive")),
            None => fail(at, field, format!("required for {:?}", self.kind)),
        };
        let whole_cells = |pitch: f64| {
            let k = (1.0 / pitch).round();
            k >= 1.0 && (k * pitch - 1.0).abs() < 1e-9
        };
        match self.kind {
            ScalarConcentrated | CellZ => {
                let mu = need(self.mu, "mu")?;
                if !(self.outer > 0.0 && self.outer < 0.5) {
                    return err("R", format!("{} not in (0, 1/2)", self.outer));
                }
                for &e in &self.eps_list {
                    if let Err(x) = scalar_radius(mu, e, self.outer) {
                        return err("eps_list", format!("eps = {e}: {x}"));
                    }
                    if self.kind == ScalarConcentrated && !whole_cells(e) {
                        return err("eps_list", format!("eps = {e} does not tile the unit square"));
                    }
                }
            }
            StokesConcentrated => {
                let gamma = need(self.gamma, "gamma")?;
                for &e in &self.eps_list {
                    match stokes_radius(gamma, e) {
                        Ok(r) if r < m.stokes_mesh_radius => {}
                        Ok(r) => return err("eps_list", format!("eps = {e}: r_eps = {r} not below the mesh radius")),
                        Err(x) => return err("eps_list", format!("eps = {e}: {x}")),
                    }
                    if !whole_cells(2.0 * e) {
                        return err("eps_list", format!("pitch 2 eps = {} does not tile the unit square", 2.0 * e));
                    }
                }
            }
            CellV | CellWsharp if !self.eps_list.is_empty() => {
                let gamma = need(self.gamma, "gamma")?;
                for &e in &self.eps_list {
                    match stokes_radius(gamma, e) {
                        Ok(r) if r < m.stokes_mesh_radius => {}
                        Ok(r) => return err("eps_list", format!("eps = {e}: r_eps = {r} not below the mesh radius")),
                        Err(x) => return err("eps_list", format!("eps = {e}: {x}")),
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn fail<T>(at: &str, field: &str, msg: String) -> Result<T, CliError> {
    Err(CliError::Config(format!("{at}.{field}: {msg}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("scenarios: must not be empty".into()));
        }
        let mut names = BTreeSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate(&format!("scenarios[{i}]"))?;
            if !names.insert(s.name.as_str()) {
                return Err(CliError::Config(format!("scenarios[{i}].name: duplicate '{}'", s.name)));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON (sorted keys, defaults filled in).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut canonical = String::new();
        write_canonical(&value, &mut canonical);
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

//! Run configuration: one TOML file with every default spelled out.
//!
//! `--set section.key=value` overrides are applied to the parsed TOML tree
//! before it is deserialized, so they are validated exactly like file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BBox, GridSpec, PointPattern};
use crate::io::{read_areas, Units};
use crate::joint::{JointPriors, JointVariant};
use crate::ppm::{IntensityKind, IntensityPriors};
use crate::recovery::{HoldoutRule, KernelPriors, GRID_ANCHOR_THRESHOLD, HIGDON_A};
use crate::validation::ValidationConfig;

/// Largest grid the dense `K × K` algebra is allowed to build.
pub const MAX_CELLS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub theft: TheftConfig,
    #[serde(default)]
    pub validate: ValidationConfig,
    #[serde(default)]
    pub conditional: ConditionalConfig,
    #[serde(default)]
    pub joint: JointConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            threads: 0,
            units: Units::default(),
            grid: GridConfig::default(),
            data: DataConfig::default(),
            mcmc: McmcConfig::default(),
            theft: TheftConfig::default(),
            validate: ValidationConfig::default(),
            conditional: ConditionalConfig::default(),
            joint: JointConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// `[xmin, xmax, ymin, ymax]` of a regular grid.
    pub bbox: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Membership grid: `cell_id,area[,x,y]` CSV. Overrides the regular grid.
    #[serde(default)]
    pub areas: Option<PathBuf>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bbox: [0.0, 10.0, 0.0, 10.0],
            nx: 10,
            ny: 10,
            areas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub points: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub keep: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            burn_in: 20_000,
            keep: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheftConfig {
    pub model: IntensityKind,
    /// Covariates besides the intercept; `None` runs stepwise BIC selection first.
    pub covariates: Option<Vec<String>>,
    pub standardize: bool,
    pub priors: IntensityPriors,
}

impl Default for TheftConfig {
    fn default() -> Self {
        Self {
            model: IntensityKind::Lgcp,
            covariates: None,
            standardize: true,
            priors: IntensityPriors::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Constant,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    Auto,
    Points,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalConfig {
    pub kernel: KernelChoice,
    pub phi_star: f64,
    pub a: f64,
    pub anchors: AnchorMode,
    pub grid_threshold: usize,
    /// `None`: 80 pairs, or half of them for large data.
    pub holdout: Option<HoldoutRule>,
    pub priors: KernelPriors,
    /// Display grid for predictive densities: cells per side around each test theft.
    pub density_cells: usize,
    /// Half-width of the display window, in units of the largest kernel scale.
    pub density_halfwidth: f64,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::Spatial,
            phi_star: 1.0,
            a: HIGDON_A,
            anchors: AnchorMode::Auto,
            grid_threshold: GRID_ANCHOR_THRESHOLD,
            holdout: None,
            priors: KernelPriors::default(),
            density_cells: 0,
            density_halfwidth: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub variant: JointVariant,
    /// Covariate columns entering the recovery and theft parts of the intensity.
    pub covariates_r: Vec<String>,
    pub covariates_t: Vec<String>,
    pub phi_star: f64,
    pub kernel_sigma: f64,
    pub priors: JointPriors,
    /// Share of complete pairs held out for count-based flow proportions.
    pub holdout_fraction: f64,
    /// Origin cells; empty picks the theft cell with most pairs.
    pub origin: Vec<usize>,
    /// `cell_id,partition_id` CSV; `None` uses `partition_blocks`.
    pub partition: Option<PathBuf>,
    /// Rectangular blocks `[bx, by]` of a regular grid.
    pub partition_blocks: [usize; 2],
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            variant: JointVariant::Dep,
            covariates_r: vec![],
            covariates_t: vec![],
            phi_star: 1.0,
            kernel_sigma: 1.0,
            priors: JointPriors::default(),
            holdout_fraction: 0.5,
            origin: vec![],
            partition: None,
            partition_blocks: [2, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulateKind {
    Theft,
    Pairs,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub kind: SimulateKind,
    /// Synthetic covariate names; `beta` has one entry more (intercept first).
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    /// LGCP field `(variance, decay)`; `None` simulates an NHPP.
    pub gp: Option<[f64; 2]>,
    pub recovery_prob: f64,
    pub kernel: KernelChoice,
    /// Constant kernel `[σ1, σ2, ρ]`.
    pub kernel_constant: [f64; 3],
    /// Spatial kernel scale `σ` (its `φ*` and `A` come from `[conditional]`).
    pub kernel_sigma: f64,
    pub joint: crate::simulate::JointTruth,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            kind: SimulateKind::Theft,
            covariates: vec!["x1".into(), "x2".into()],
            beta: vec![6.0, 1.0, 0.0],
            gp: Some([0.5, 1.0]),
            recovery_prob: 0.1,
            kernel: KernelChoice::Spatial,
            kernel_constant: [2.0, 1.5, 0.2],
            kernel_sigma: 1.0,
            joint: crate::simulate::JointTruth::default(),
        }
    }
}

/// Parse an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply `key.path=value` to a TOML tree, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Config file (if any) plus overrides. Relative data paths are resolved
    /// against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = dir.join(&*v);
                }
            }
        };
        fix(&mut self.data.points);
        fix(&mut self.data.covariates);
        fix(&mut self.data.pairs);
        fix(&mut self.grid.areas);
        fix(&mut self.joint.partition);
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.areas.is_none() {
            if g.nx == 0 || g.ny == 0 || g.nx * g.ny > MAX_CELLS {
                return Err(Error::Config(format!(
                    "grid must have between 1 and {MAX_CELLS} cells (got {}x{})",
                    g.nx, g.ny
                )));
            }
            BBox::new(g.bbox[0], g.bbox[1], g.bbox[2], g.bbox[3]).map_err(|e| Error::Config(e.to_string()))?;
        }
        let v = &self.validate;
        if !(v.p > 0.0 && v.p < 1.0) || !(v.nominal > 0.0 && v.nominal < 1.0) {
            return Err(Error::Config("validate.p and validate.nominal must lie in (0, 1)".into()));
        }
        let j = &self.joint;
        if !(0.0..1.0).contains(&j.holdout_fraction) {
            return Err(Error::Config("joint.holdout_fraction must lie in [0, 1)".into()));
        }
        let s = &self.simulate;
        if s.beta.len() != s.covariates.len() + 1 {
            return Err(Error::Config(format!(
                "simulate.beta needs {} entries (intercept + covariates), got {}",
                s.covariates.len() + 1,
                s.beta.len()
            )));
        }
        Ok(())
    }

    /// The analysis grid; membership grids take representatives from the areas
    /// file or, failing that, from the centroid of `pattern` in each cell.
    pub fn build_grid(&self, pattern: Option<&PointPattern>) -> Result<GridSpec> {
        let g = &self.grid;
        let grid = match &g.areas {
            Some(path) => {
                let (areas, reps) = read_areas(path, self.units)?;
                GridSpec::from_membership(&areas, reps, pattern)?
            }
            None => GridSpec::regular(BBox::new(g.bbox[0], g.bbox[1], g.bbox[2], g.bbox[3])?, g.nx, g.ny)?,
        };
        if grid.len() > MAX_CELLS {
            return Err(Error::Config(format!("grid has {} cells; the limit is {MAX_CELLS}", grid.len())));
        }
        Ok(grid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

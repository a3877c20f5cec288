use std::path::{Path, PathBuf};

use geocausal_core::analysis::MetaWeighting;
use geocausal_core::estimator::{EstimatorConfig, Specification};
use geocausal_core::panel::{Funder, PanelOptions};
use geocausal_core::simulator::WorldConfig;
use geocausal_core::vit::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Declarative run configuration, read from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Parallel funder×sector jobs; 1 keeps every stage sequential.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub panel: PanelOptions,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("geocausal-out")
}

fn one() -> usize {
    1
}

/// Paths to externally supplied data. Unset paths fall back to the
/// simulator's outputs inside the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub projects: Option<PathBuf>,
    pub neighborhoods: Option<PathBuf>,
    pub adm2: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    pub yearly_covariates: Option<PathBuf>,
    pub covariate_schema: Option<PathBuf>,
    pub tiles_dir: Option<PathBuf>,
    /// Directory of prebuilt `panel_*.csv` files.
    pub panel_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Selection {
    /// Empty selects every funder found.
    pub funders: Vec<Funder>,
    /// Empty selects every sector found.
    pub sectors: Vec<u32>,
    pub specifications: Vec<String>,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            funders: Vec::new(),
            sectors: Vec::new(),
            specifications: Specification::ALL.iter().map(|s| s.tag().to_string()).collect(),
        }
    }
}

impl Selection {
    pub fn specs(&self) -> CliResult<Vec<Specification>> {
        let mut out: Vec<Specification> = Vec::new();
        for s in &self.specifications {
            let spec: Specification = s.parse()?;
            if !out.contains(&spec) {
                out.push(spec);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn wants(&self, funder: Funder, sector: u32) -> bool {
        (self.funders.is_empty() || self.funders.contains(&funder))
            && (self.sectors.is_empty() || self.sectors.contains(&sector))
    }
}

/// One simulated funder×sector slice; unset fields take the world values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub funder: Funder,
    pub sector_code: u32,
    pub tau_true: Option<f64>,
    pub gamma_visible: Option<f64>,
    pub gamma_invisible: Option<f64>,
    pub gamma_tabular: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub world: WorldConfig,
    pub slices: Vec<SliceConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            slices: vec![SliceConfig {
                funder: Funder::WorldBank,
                sector_code: 110,
                tau_true: None,
                gamma_visible: None,
                gamma_invisible: None,
                gamma_tabular: None,
            }],
        }
    }
}

impl SimulateConfig {
    /// World configuration for slice `k`.
    pub fn world_for(&self, k: usize, seed: u64) -> WorldConfig {
        let s = &self.slices[k];
        let mut w = self.world.clone();
        w.seed = seed;
        w.slice = k as u64;
        w.funder = s.funder;
        w.sector_code = s.sector_code;
        w.tau_true = s.tau_true.unwrap_or(w.tau_true);
        w.gamma_visible = s.gamma_visible.unwrap_or(w.gamma_visible);
        w.gamma_invisible = s.gamma_invisible.unwrap_or(w.gamma_invisible);
        w.gamma_tabular = s.gamma_tabular.unwrap_or(w.gamma_tabular);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub cca_ridge: f64,
    pub meta_weighting: MetaWeighting,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cca_ridge: 1e-3,
            meta_weighting: MetaWeighting::Unweighted,
        }
    }
}

/// Sets `dotted.key` in `table` to `raw`, parsed as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `[simulate]` flattens the world settings, which rules out serde's
/// unknown-field check, so its keys are compared against the defaults here.
fn check_simulate_keys(table: &Table) -> CliResult<()> {
    let Some(sim) = table.get("simulate").and_then(Value::as_table) else {
        return Ok(());
    };
    let known: Table = toml::Table::try_from(SimulateConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut known: Vec<&str> = known.keys().map(String::as_str).collect();
    known.push("intercept");
    for key in sim.keys() {
        if !known.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown key `simulate.{key}`")));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if given), applies overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| geocausal_core::Error::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if !table.contains_key("seed") {
            return Err(CliError::Config(
                "`seed` is mandatory (set it in the config or with --seed)".into(),
            ));
        }
        check_simulate_keys(&table)?;
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.simulate.world.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        self.selection.specs()?;
        self.model.validate()?;
        self.train.validate()?;
        self.simulate.world.validate()?;
        if self.simulate.slices.is_empty() {
            return Err(CliError::Config("simulate.slices must not be empty".into()));
        }
        if !(self.analysis.cca_ridge >= 0.0) {
            return Err(CliError::Config("analysis.cca_ridge must be non-negative".into()));
        }
        for (name, p) in self.input_paths() {
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "inputs.{name} = {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn input_paths(&self) -> Vec<(&'static str, &PathBuf)> {
        let i = &self.inputs;
        [
            ("projects", &i.projects),
            ("neighborhoods", &i.neighborhoods),
            ("adm2", &i.adm2),
            ("outcomes", &i.outcomes),
            ("yearly_covariates", &i.yearly_covariates),
            ("covariate_schema", &i.covariate_schema),
            ("tiles_dir", &i.tiles_dir),
            ("panel_dir", &i.panel_dir),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.as_ref().map(|p| (n, p)))
        .collect()
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

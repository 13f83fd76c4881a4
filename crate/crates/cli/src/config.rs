//! The run configuration: one TOML file with a table per section.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Keys that no section declares are collected and reported together.

use std::path::Path;

use ldct_core::ct::{FanBeamGeometry, FbpFilter};
use ldct_core::features::{FilterBank, DEFAULT_CHANNELS, DEFAULT_LAYERS};
use ldct_core::regularizers::{GraphMode, RegularizerConfig, StorageChoice};
use ldct_core::sim::DoseModel;
use ldct_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    pub dose: DoseConfig,
    pub fbp: FbpConfig,
    pub filters: FiltersConfig,
    pub graph: GraphConfig,
    pub solver: SolverConfig,
    pub display: DisplayConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            phantom: PhantomConfig::default(),
            dose: DoseConfig::default(),
            fbp: FbpConfig::default(),
            filters: FiltersConfig::default(),
            graph: GraphConfig::default(),
            solver: SolverConfig {
                max_iters: 100,
                ..Default::default()
            },
            display: DisplayConfig::default(),
        }
    }
}

/// A scanner preset with per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// `desk` or `full`; fields given next to it override the preset.
    pub preset: String,
    #[serde(flatten)]
    pub scanner: FanBeamGeometry,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            scanner: FanBeamGeometry::desk(),
        }
    }
}

fn geometry_preset(name: &str) -> Result<FanBeamGeometry, CliError> {
    match name {
        "desk" => Ok(FanBeamGeometry::desk()),
        "full" => Ok(FanBeamGeometry::full()),
        other => Err(CliError::Config(format!(
            "geometry.preset must be \"desk\" or \"full\", got {other:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Attenuation (1/mm) of phantom intensity 1.
    pub mu_scale: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { mu_scale: 0.02 }
    }
}

/// One incident count or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DoseLevels {
    One(f64),
    Many(Vec<f64>),
}

impl DoseLevels {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            DoseLevels::One(v) => vec![*v],
            DoseLevels::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoseConfig {
    #[serde(rename = "I0")]
    pub i0: DoseLevels,
    pub sigma_e2: f64,
    /// Level `i` of the list is simulated with seed `seed + i`.
    pub seed: u64,
}

impl Default for DoseConfig {
    fn default() -> Self {
        Self {
            i0: DoseLevels::One(2.5e4),
            sigma_e2: 10.0,
            seed: 7,
        }
    }
}

impl DoseConfig {
    pub fn models(&self) -> Result<Vec<DoseModel>, CliError> {
        let levels = self.i0.to_vec();
        if levels.is_empty() {
            return Err(CliError::Config("dose.I0 lists no dose level".into()));
        }
        levels
            .iter()
            .enumerate()
            .map(|(i, &i0)| DoseModel::new(i0, self.sigma_e2, self.seed.wrapping_add(i as u64)).map_err(CliError::from))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbpConfig {
    pub filter: FbpFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiltersConfig {
    /// `tv`, `dct8`, `seeded-random`, `identity`, or a path to a bank file.
    pub bank: String,
    /// Scale of the `tv` and `dct8` presets.
    pub weight: f64,
    pub seed: u64,
    /// Depth and width of the `seeded-random` preset.
    pub layers: usize,
    pub channels: usize,
    /// If positive, replace the bank's inexact transposes by `w^T + E` with
    /// `||E||_F = transpose_perturbation ||w^T||_F`.
    pub transpose_perturbation: f64,
}

impl Default for FiltersConfig {
    fn default() -> Self {
        Self {
            bank: "tv".into(),
            weight: 0.1,
            seed: 0,
            layers: DEFAULT_LAYERS,
            channels: DEFAULT_CHANNELS,
            transpose_perturbation: 0.0,
        }
    }
}

impl FiltersConfig {
    pub fn build(&self) -> Result<FilterBank, CliError> {
        let bank = match self.bank.as_str() {
            "tv" => FilterBank::tv(self.weight),
            "dct8" => FilterBank::dct8(self.seed, self.weight),
            "seeded-random" => FilterBank::seeded_random(self.seed, self.layers, self.channels),
            "identity" => FilterBank::identity(),
            path => FilterBank::load(Path::new(path))?,
        };
        if self.transpose_perturbation > 0.0 {
            let perturbed = bank.perturbed_transposes(self.transpose_perturbation, self.seed);
            Ok(bank.with_inexact(perturbed)?)
        } else {
            Ok(bank)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub lambda: f64,
    pub kappa: usize,
    pub mode: GraphMode,
    pub storage: StorageChoice,
    pub window_radius: usize,
    pub sample_budget: usize,
    pub bandwidth_seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let r = RegularizerConfig::default();
        Self {
            lambda: r.lambda,
            kappa: r.kappa,
            mode: r.graph_mode,
            storage: r.storage,
            window_radius: r.window_radius,
            sample_budget: r.sample_budget,
            bandwidth_seed: r.bandwidth_seed,
        }
    }
}

impl GraphConfig {
    pub fn regularizer(&self) -> RegularizerConfig {
        RegularizerConfig {
            lambda: self.lambda,
            kappa: self.kappa,
            graph_mode: self.mode,
            storage: self.storage,
            window_radius: self.window_radius,
            sample_budget: self.sample_budget,
            bandwidth_seed: self.bandwidth_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisplayConfig {
    /// PNG window in HU.
    pub window_hu: [f64; 2],
    /// Attenuation mapped to 0 HU. The default is the phantom's brain
    /// value at the default `phantom.mu_scale`.
    pub mu_water: f64,
}

/// Default display window in HU.
pub const DEFAULT_WINDOW_HU: [f64; 2] = [-160.0, 240.0];

impl Default for DisplayConfig {
    fn default() -> Self {
        Self {
            window_hu: DEFAULT_WINDOW_HU,
            mu_water: 0.004,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config is not valid TOML: {}", e.message())))?;
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        expand_geometry_preset(&mut table)?;
        let config: Config = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid configuration: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.geometry.scanner.validate()?;
        self.solver.validate()?;
        self.graph.regularizer().validate()?;
        self.dose.models()?;
        if !(self.phantom.mu_scale > 0.0 && self.phantom.mu_scale.is_finite()) {
            return Err(CliError::Config("phantom.mu_scale must be positive".into()));
        }
        let [lo, hi] = self.display.window_hu;
        if !(lo < hi) || !(self.display.mu_water > 0.0) {
            return Err(CliError::Config(
                "display.window_hu must be increasing and display.mu_water positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn defaults_table() -> Table {
    match Value::try_from(Config::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

/// Dotted paths of `table` that the default configuration does not have.
/// Values that are not tables in the defaults are leaves, whatever their
/// contents.
pub fn unknown_keys(table: &Table) -> Vec<String> {
    fn walk(user: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
        for (key, value) in user {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match (known.get(key), value) {
                (None, _) => out.push(path),
                (Some(Value::Table(k)), Value::Table(u)) => walk(u, k, &path, out),
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(table, &defaults_table(), "", &mut out);
    out
}

/// Fills the geometry table with the preset's values for keys the user
/// did not set.
fn expand_geometry_preset(table: &mut Table) -> Result<(), CliError> {
    let geometry = table
        .entry("geometry")
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(user) = geometry else {
        return Err(CliError::Config("geometry must be a table".into()));
    };
    let preset = match user.get("preset") {
        None => "desk".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            return Err(CliError::Config(format!("geometry.preset must be a string, got {other}")));
        }
    };
    let base = GeometryConfig {
        scanner: geometry_preset(&preset)?,
        preset,
    };
    if let Value::Table(defaults) = Value::try_from(base).expect("geometry serializes") {
        for (k, v) in defaults {
            user.entry(k).or_insert(v);
        }
    }
    Ok(())
}

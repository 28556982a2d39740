//! Schema-versioned JSON configs, one per CLI subcommand.
//!
//! Configs load from JSON files; command-line flags override top-level keys
//! before deserialization, so every scalar a schema names is reachable both
//! ways. Unknown fields, unresolvable file references, and out-of-range
//! values are schema errors, which the driver maps to exit code 2.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{Exponent, GridSpec, SpectralField};
use crate::linalg::VectorNorm;
use crate::symbol::OperatorSymbol;
use crate::thick::ThickSet;

/// Reads a config file as a JSON object; no path means an empty object, so a
/// command can be driven by flags alone.
pub fn load_object(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::schema(format!("config '{}': {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::schema(format!("config '{}': {e}", path.display())))?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(Error::schema(format!(
            "config '{}' must be a JSON object",
            path.display()
        ))),
    }
}

/// Applies one KEY=VALUE override to a top-level key. The value parses as
/// JSON when it can and falls back to a plain string.
pub fn apply_override(obj: &mut Map<String, Value>, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::schema(format!("override '{spec}' must have the form KEY=VALUE")))?;
    if key.is_empty() {
        return Err(Error::schema(format!("override '{spec}' names no key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    obj.insert(key.to_string(), value);
    Ok(())
}

/// Decodes a merged object into a config struct. A missing schema_version
/// defaults to 1; unknown or ill-typed fields surface as schema errors
/// naming the field.
pub fn decode<T: serde::de::DeserializeOwned>(mut obj: Map<String, Value>) -> Result<T> {
    obj.entry("schema_version".to_string()).or_insert(Value::from(1u32));
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::schema(e.to_string()))
}

fn check_version(version: u32) -> Result<()> {
    if version != 1 {
        return Err(Error::schema(format!(
            "schema_version: unsupported value {version}, this build reads version 1"
        )));
    }
    Ok(())
}

/// Resolves a file reference relative to the config's directory.
pub fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_symbol(path: &Path) -> Result<OperatorSymbol> {
    OperatorSymbol::load(path)
        .map_err(|e| Error::schema(format!("symbol file '{}': {e}", path.display())))
}

pub fn load_set(path: &Path) -> Result<ThickSet> {
    ThickSet::load(path).map_err(|e| Error::schema(format!("set file '{}': {e}", path.display())))
}

pub fn load_field(path: &Path) -> Result<SpectralField> {
    SpectralField::load(path)
        .map_err(|e| Error::schema(format!("field file '{}': {e}", path.display())))
}

/// Grid given either as a full object or the compact form "d:N:Q:n".
pub fn grid_from_value(value: &Value) -> Result<GridSpec> {
    match value {
        Value::String(text) => parse_grid_flag(text),
        Value::Object(_) => serde_json::from_value(value.clone())
            .map_err(|e| Error::schema(format!("grid: {e}"))),
        _ => Err(Error::schema(
            "grid: must be a grid object or a \"d:N:Q:n\" string".to_string(),
        )),
    }
}

/// Parses "d:N:Q:n" into a grid with the Euclidean cell norm and state
/// exponent 2.
pub fn parse_grid_flag(text: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 4 {
        return Err(Error::schema(format!("grid: '{text}' must have the form d:N:Q:n")));
    }
    let dim: usize = parts[0]
        .parse()
        .map_err(|_| Error::schema(format!("grid: dimension '{}' is not an integer", parts[0])))?;
    let points: usize = parts[1]
        .parse()
        .map_err(|_| Error::schema(format!("grid: points '{}' is not an integer", parts[1])))?;
    let period: f64 = parts[2]
        .parse()
        .map_err(|_| Error::schema(format!("grid: period '{}' is not a number", parts[2])))?;
    let value_dim: usize = parts[3]
        .parse()
        .map_err(|_| Error::schema(format!("grid: value_dim '{}' is not an integer", parts[3])))?;
    GridSpec::new(dim, points, period, value_dim, VectorNorm::L2, 2.0)
        .map_err(|e| Error::schema(format!("grid: {e}")))
}

pub fn parse_norm(name: &str) -> Result<VectorNorm> {
    match name {
        "l1" => Ok(VectorNorm::L1),
        "l2" => Ok(VectorNorm::L2),
        "linf" => Ok(VectorNorm::LInf),
        _ => Err(Error::schema(format!("x_norm: '{name}' must be l1, l2, or linf"))),
    }
}

fn require<T: Copy>(field: Option<T>, name: &str, context: &str) -> Result<T> {
    field.ok_or_else(|| Error::schema(format!("{name}: required for {context}")))
}

fn check_lambda_band(lambda: &[f64], nyquist: f64, field: &str) -> Result<()> {
    if lambda.is_empty() {
        return Err(Error::schema(format!("{field}: needs at least one entry")));
    }
    for (i, &l) in lambda.iter().enumerate() {
        if !(l > 0.0) {
            return Err(Error::schema(format!("{field}[{i}]: {l} must be positive")));
        }
        if l > nyquist {
            return Err(Error::schema(format!(
                "{field}[{i}]: {l} exceeds the grid Nyquist frequency {nyquist}"
            )));
        }
    }
    Ok(())
}

fn default_norm() -> String {
    "l2".to_string()
}

fn default_ensemble() -> usize {
    32
}

fn exponent_two() -> Exponent {
    Exponent(2.0)
}

/// `grid-info`: echo the derived facts of one grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInfoConfig {
    pub schema_version: u32,
    pub grid: Value,
}

impl GridInfoConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        grid_from_value(&self.grid)
    }
}

/// `thick gen`: build a stripe or random thick set and write it out.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThickGenConfig {
    pub schema_version: u32,
    pub grid: Value,
    /// "stripes" or "random".
    pub kind: String,
    #[serde(default)]
    pub on_width: Option<f64>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub axis: usize,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub ell: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Output path of the set JSON.
    pub out: String,
}

impl ThickGenConfig {
    pub fn build(&self, base: &Path) -> Result<(ThickSet, PathBuf)> {
        check_version(self.schema_version)?;
        let grid = grid_from_value(&self.grid)?;
        let set = match self.kind.as_str() {
            "stripes" => {
                let on_width = require(self.on_width, "on_width", "kind \"stripes\"")?;
                let period = require(self.period, "period", "kind \"stripes\"")?;
                ThickSet::make_stripes(grid, on_width, period, self.axis)
                    .map_err(|e| Error::schema(format!("thick gen: {e}")))?
            }
            "random" => {
                let rho = require(self.rho, "rho", "kind \"random\"")?;
                let ell = self
                    .ell
                    .as_deref()
                    .ok_or_else(|| Error::schema("ell: required for kind \"random\"".to_string()))?;
                ThickSet::make_random_thick(grid, rho, ell, self.seed)
                    .map_err(|e| Error::schema(format!("thick gen: {e}")))?
            }
            other => {
                return Err(Error::schema(format!(
                    "kind: '{other}' must be \"stripes\" or \"random\""
                )))
            }
        };
        Ok((set, resolve(base, &self.out)))
    }
}

/// `thick verify`: re-certify a stored set against a box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThickVerifyConfig {
    pub schema_version: u32,
    pub set: String,
    pub ell: Vec<f64>,
    /// When set, the verified rho must reach this floor.
    #[serde(default)]
    pub rho_min: Option<f64>,
}

impl ThickVerifyConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        if self.ell.is_empty() {
            return Err(Error::schema("ell: needs at least one entry".to_string()));
        }
        for (i, &l) in self.ell.iter().enumerate() {
            if !(l > 0.0) {
                return Err(Error::schema(format!("ell[{i}]: {l} must be positive")));
            }
        }
        Ok(())
    }
}

/// `ls probe`: ensemble restriction ratios against the thickness bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsProbeConfig {
    pub schema_version: u32,
    pub set: String,
    /// Band widths of the test fields, one per axis.
    pub lambda: Vec<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Frozen calibration constant for the bound (rho/K)^{K(d + L.lambda)}.
    #[serde(default = "default_ls_k")]
    pub k: f64,
}

fn default_ls_k() -> f64 {
    10.0
}

impl LsProbeConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        check_version(self.schema_version)?;
        if self.ensemble == 0 {
            return Err(Error::schema("ensemble: must be at least 1".to_string()));
        }
        if !(self.k >= 1.0) {
            return Err(Error::schema(format!("k: {} must be at least 1", self.k)));
        }
        check_lambda_band(&self.lambda, grid.nyquist(), "lambda")?;
        if self.lambda.len() != grid.dim {
            return Err(Error::schema(format!(
                "lambda: got {} entries for dimension {}",
                self.lambda.len(),
                grid.dim
            )));
        }
        Ok(())
    }
}

/// `ls cubes`: good-cube classification and the guaranteed mass share.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsCubesConfig {
    pub schema_version: u32,
    pub grid: Value,
    pub band: Vec<f64>,
    /// Cube acceptance factor A, strictly above the dimension threshold.
    pub a: f64,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exponents at which the good-cube mass share is checked.
    #[serde(default = "default_mass_exponents")]
    pub exponents: Vec<Exponent>,
}

fn default_alpha_max() -> usize {
    6
}

fn default_mass_exponents() -> Vec<Exponent> {
    vec![Exponent(2.0), Exponent(f64::INFINITY)]
}

impl LsCubesConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        let grid = grid_from_value(&self.grid)?;
        check_lambda_band(&self.band, grid.nyquist(), "band")?;
        if self.band.len() != grid.dim {
            return Err(Error::schema(format!(
                "band: got {} entries for dimension {}",
                self.band.len(),
                grid.dim
            )));
        }
        let threshold = crate::ls::cube_threshold(grid.dim);
        if !(self.a > threshold) {
            return Err(Error::schema(format!(
                "a: {} must exceed the dimension-{} threshold {threshold}",
                self.a, grid.dim
            )));
        }
        for e in &self.exponents {
            if !(e.0 >= 1.0) {
                return Err(Error::schema(format!("exponents: {} must be at least 1", e.0)));
            }
        }
        Ok(grid)
    }
}

/// `ls bernstein`: derivative bounds for random band-limited fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsBernsteinConfig {
    pub schema_version: u32,
    pub grid: Value,
    pub band: Vec<f64>,
    /// Derivative multi-index, one order per axis.
    pub alpha: Vec<usize>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
}

impl LsBernsteinConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        let grid = grid_from_value(&self.grid)?;
        check_lambda_band(&self.band, grid.nyquist(), "band")?;
        if self.band.len() != grid.dim {
            return Err(Error::schema(format!(
                "band: got {} entries for dimension {}",
                self.band.len(),
                grid.dim
            )));
        }
        if self.alpha.len() != grid.dim {
            return Err(Error::schema(format!(
                "alpha: got {} entries for dimension {}",
                self.alpha.len(),
                grid.dim
            )));
        }
        Ok(grid)
    }
}

/// `ls remez`: polynomial sub-level comparison over random small-measure
/// unions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsRemezConfig {
    pub schema_version: u32,
    pub degree: usize,
    #[serde(default = "default_value_dim")]
    pub value_dim: usize,
    #[serde(default = "default_norm")]
    pub x_norm: String,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Total measure of the random sub-union, split over four intervals.
    #[serde(default = "default_measure")]
    pub measure: f64,
    /// When set, each sample must satisfy the comparison with this constant.
    #[serde(default)]
    pub c1: Option<f64>,
    /// Largest tolerated relative spread of fitted constants about the mean.
    #[serde(default = "default_stability")]
    pub stability: f64,
}

fn default_value_dim() -> usize {
    1
}

fn default_measure() -> f64 {
    0.2
}

fn default_stability() -> f64 {
    0.5
}

impl LsRemezConfig {
    pub fn validate(&self) -> Result<VectorNorm> {
        check_version(self.schema_version)?;
        if self.degree == 0 {
            return Err(Error::schema("degree: must be at least 1".to_string()));
        }
        if self.value_dim == 0 {
            return Err(Error::schema("value_dim: must be at least 1".to_string()));
        }
        if self.ensemble == 0 {
            return Err(Error::schema("ensemble: must be at least 1".to_string()));
        }
        if !(self.measure > 0.0 && self.measure < 1.0) {
            return Err(Error::schema(format!(
                "measure: {} must lie strictly between 0 and 1",
                self.measure
            )));
        }
        if let Some(c1) = self.c1 {
            if !(c1 > 0.0) {
                return Err(Error::schema(format!("c1: {c1} must be positive")));
            }
        }
        if !(self.stability > 0.0) {
            return Err(Error::schema(format!("stability: {} must be positive", self.stability)));
        }
        parse_norm(&self.x_norm)
    }
}

/// `symbol check`: normal-ellipticity certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolCheckConfig {
    pub schema_version: u32,
    pub symbol: String,
    #[serde(default = "default_norm")]
    pub x_norm: String,
    #[serde(default = "default_sphere_samples")]
    pub sphere_samples: usize,
    #[serde(default = "default_lambda_samples")]
    pub lambda_samples: usize,
    /// When set, the certified kappa must stay at or below this cap.
    #[serde(default)]
    pub kappa_max: Option<f64>,
}

fn default_sphere_samples() -> usize {
    4096
}

fn default_lambda_samples() -> usize {
    64
}

impl SymbolCheckConfig {
    pub fn validate(&self) -> Result<VectorNorm> {
        check_version(self.schema_version)?;
        parse_norm(&self.x_norm)
    }
}

/// `symbol sector`: closed-form sector parameters from an ellipticity
/// constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSectorConfig {
    pub schema_version: u32,
    pub kappa: f64,
}

impl SymbolSectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        if !(self.kappa >= 1.0) {
            return Err(Error::schema(format!("kappa: {} must be at least 1", self.kappa)));
        }
        Ok(())
    }
}

/// `prop decay`: fitted symbol-derivative decay along a frequency ray.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropDecayConfig {
    pub schema_version: u32,
    pub symbol: String,
    #[serde(default = "default_norm")]
    pub x_norm: String,
    /// Derivative multi-index, one order per axis.
    pub alpha: Vec<usize>,
    pub t_grid: Vec<f64>,
    /// Probe frequencies; defaults to a log-spaced diagonal ray.
    #[serde(default)]
    pub xi_grid: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_xi_max")]
    pub xi_max: f64,
    #[serde(default = "default_xi_count")]
    pub xi_count: usize,
    #[serde(default = "default_sphere_samples")]
    pub sphere_samples: usize,
    #[serde(default = "default_lambda_samples")]
    pub lambda_samples: usize,
    /// Largest tolerated count of finite-difference breakdowns.
    #[serde(default)]
    pub max_breakdowns: Option<usize>,
}

fn default_xi_max() -> f64 {
    8.0
}

fn default_xi_count() -> usize {
    12
}

impl PropDecayConfig {
    pub fn validate(&self) -> Result<VectorNorm> {
        check_version(self.schema_version)?;
        if self.t_grid.is_empty() {
            return Err(Error::schema("t_grid: needs at least one entry".to_string()));
        }
        for (i, &t) in self.t_grid.iter().enumerate() {
            if !(t > 0.0) {
                return Err(Error::schema(format!("t_grid[{i}]: {t} must be positive")));
            }
        }
        if self.xi_grid.is_none() {
            if !(self.xi_max > 0.5) {
                return Err(Error::schema(format!("xi_max: {} must exceed 0.5", self.xi_max)));
            }
            if self.xi_count < 2 {
                return Err(Error::schema("xi_count: must be at least 2".to_string()));
            }
        }
        parse_norm(&self.x_norm)
    }

    /// The configured frequencies, or log-spaced radii on the diagonal.
    pub fn frequencies(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(grid) = &self.xi_grid {
            for (i, xi) in grid.iter().enumerate() {
                if xi.len() != dim {
                    return Err(Error::schema(format!(
                        "xi_grid[{i}]: got {} entries for dimension {dim}",
                        xi.len()
                    )));
                }
            }
            return Ok(grid.clone());
        }
        let direction = 1.0 / (dim as f64).sqrt();
        let (lo, hi) = (0.5f64.ln(), self.xi_max.ln());
        Ok((0..self.xi_count)
            .map(|j| {
                let r = (lo + (hi - lo) * j as f64 / (self.xi_count - 1) as f64).exp();
                vec![r * direction; dim]
            })
            .collect())
    }
}

/// `prop dissipation`: high-frequency decay fit for the cut semigroup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropDissipationConfig {
    pub schema_version: u32,
    pub symbol: String,
    pub grid: Value,
    pub lambda_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Measurement exponent; overrides the grid's state exponent.
    #[serde(default)]
    pub p: Option<Exponent>,
    /// When set, the fitted decay rate must reach this floor.
    #[serde(default)]
    pub c2_min: Option<f64>,
    /// When set, the fitted prefactor must stay at or below this cap.
    #[serde(default)]
    pub c1_max: Option<f64>,
}

impl PropDissipationConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        let mut grid = grid_from_value(&self.grid)?;
        if let Some(p) = self.p {
            grid = GridSpec::new(grid.dim, grid.points, grid.period, grid.value_dim, grid.x_norm, p.0)
                .map_err(|e| Error::schema(format!("p: {e}")))?;
        }
        check_lambda_band(&self.lambda_grid, grid.nyquist(), "lambda_grid")?;
        if self.t_grid.is_empty() {
            return Err(Error::schema("t_grid: needs at least one entry".to_string()));
        }
        for (i, &t) in self.t_grid.iter().enumerate() {
            if !(t >= 0.0) {
                return Err(Error::schema(format!("t_grid[{i}]: {t} must be nonnegative")));
            }
        }
        if self.ensemble == 0 {
            return Err(Error::schema("ensemble: must be at least 1".to_string()));
        }
        Ok(grid)
    }
}

/// `prop generator`: first-order convergence of (I - V_t)/t to the symbol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropGeneratorConfig {
    pub schema_version: u32,
    pub symbol: String,
    pub grid: Value,
    pub band: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_generator_t_grid")]
    pub t_grid: Vec<f64>,
    /// Empirical convergence order must reach this floor.
    #[serde(default = "default_order_min")]
    pub order_min: f64,
}

fn default_generator_t_grid() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5]
}

fn default_order_min() -> f64 {
    0.9
}

impl PropGeneratorConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        let grid = grid_from_value(&self.grid)?;
        check_lambda_band(&self.band, grid.nyquist(), "band")?;
        if self.band.len() != grid.dim {
            return Err(Error::schema(format!(
                "band: got {} entries for dimension {}",
                self.band.len(),
                grid.dim
            )));
        }
        if self.t_grid.len() < 2 {
            return Err(Error::schema("t_grid: needs at least two entries".to_string()));
        }
        for (i, &t) in self.t_grid.iter().enumerate() {
            if !(t > 0.0) {
                return Err(Error::schema(format!("t_grid[{i}]: {t} must be positive")));
            }
        }
        Ok(grid)
    }
}

/// `prop multiplier`: seminorm and kernel-mass report for a named symbol
/// family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropMultiplierConfig {
    pub schema_version: u32,
    pub grid: Value,
    /// "cutoff" (needs lambda), "one", or "gaussian" (needs width).
    pub family: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default = "default_multiplier_epsilon")]
    pub epsilon: f64,
    /// When set, kernel L1 mass over seminorm must stay at or below this.
    #[serde(default)]
    pub ratio_max: Option<f64>,
}

fn default_multiplier_epsilon() -> f64 {
    0.5
}

impl PropMultiplierConfig {
    pub fn validate(&self) -> Result<GridSpec> {
        check_version(self.schema_version)?;
        let grid = grid_from_value(&self.grid)?;
        match self.family.as_str() {
            "cutoff" => {
                let lambda = require(self.lambda, "lambda", "family \"cutoff\"")?;
                if !(lambda > 0.0) {
                    return Err(Error::schema(format!("lambda: {lambda} must be positive")));
                }
                if lambda > grid.nyquist() {
                    return Err(Error::schema(format!(
                        "lambda: {lambda} exceeds the grid Nyquist frequency {}",
                        grid.nyquist()
                    )));
                }
            }
            "one" => {}
            "gaussian" => {
                let width = require(self.width, "width", "family \"gaussian\"")?;
                if !(width > 0.0) {
                    return Err(Error::schema(format!("width: {width} must be positive")));
                }
            }
            other => {
                return Err(Error::schema(format!(
                    "family: '{other}' must be \"cutoff\", \"one\", or \"gaussian\""
                )))
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::schema(format!("epsilon: {} must be positive", self.epsilon)));
        }
        Ok(grid)
    }
}

/// `obs probe`: empirical observability constants over a horizon sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsProbeConfig {
    pub schema_version: u32,
    pub symbol: String,
    pub set: String,
    /// Strictly increasing horizons; adjacent constants must not increase.
    pub horizons: Vec<f64>,
    #[serde(default = "exponent_two")]
    pub state_exponent: Exponent,
    #[serde(default = "exponent_two")]
    pub time_exponent: Exponent,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probe the adjoint semigroup instead of the forward one.
    #[serde(default)]
    pub adjoint: bool,
}

fn default_nodes() -> usize {
    128
}

/// Floors demanded by the observability probes: 32 ensemble members for a
/// stable constant estimate and 128 quadrature nodes for the time integral.
pub fn check_probe_sizes(ensemble: usize, nodes: usize) -> Result<()> {
    if ensemble < 32 {
        return Err(Error::schema(format!("ensemble: needs at least 32 members, got {ensemble}")));
    }
    if nodes < 128 {
        return Err(Error::schema(format!("nodes: needs at least 128, got {nodes}")));
    }
    Ok(())
}

impl ObsProbeConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        check_probe_sizes(self.ensemble, self.nodes)?;
        if self.horizons.is_empty() {
            return Err(Error::schema("horizons: needs at least one entry".to_string()));
        }
        for (i, &t) in self.horizons.iter().enumerate() {
            if !(t > 0.0) {
                return Err(Error::schema(format!("horizons[{i}]: {t} must be positive")));
            }
            if i > 0 && t <= self.horizons[i - 1] {
                return Err(Error::schema(format!(
                    "horizons[{i}]: {t} must exceed horizons[{}] = {}",
                    i - 1,
                    self.horizons[i - 1]
                )));
            }
        }
        Ok(())
    }
}

/// The y0 block of a control problem: a stored field or a seeded draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub band: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// `control run`: the problem record, referencing symbol/set/field files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRunConfig {
    pub schema_version: u32,
    pub symbol: String,
    pub set: String,
    pub y0: InitialStateConfig,
    pub horizon: f64,
    #[serde(default = "exponent_two")]
    pub state_exponent: Exponent,
    #[serde(default = "exponent_two")]
    pub time_exponent: Exponent,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// First stage frequency scale; must lie strictly below Nyquist.
    pub lambda0: f64,
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_time_steps() -> usize {
    16
}

impl ControlRunConfig {
    /// Loads the referenced files and assembles the problem on a grid whose
    /// state exponent is the configured one.
    pub fn build(&self, base: &Path) -> Result<crate::control::ControlProblem> {
        check_version(self.schema_version)?;
        let symbol = load_symbol(&resolve(base, &self.symbol))?;
        let set0 = load_set(&resolve(base, &self.set))?;
        let g0 = *set0.grid();
        if symbol.dim() != g0.dim || symbol.value_dim() != g0.value_dim {
            return Err(Error::schema(format!(
                "symbol: dimensions {}x{} do not match the set grid dim {} value_dim {}",
                symbol.dim(),
                symbol.value_dim(),
                g0.dim,
                g0.value_dim
            )));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::schema(format!("lambda0: {} must be positive", self.lambda0)));
        }
        if self.lambda0 >= g0.nyquist() {
            return Err(Error::schema(format!(
                "lambda0: {} must lie strictly below the grid Nyquist frequency {}",
                self.lambda0,
                g0.nyquist()
            )));
        }
        let grid = GridSpec::new(
            g0.dim,
            g0.points,
            g0.period,
            g0.value_dim,
            g0.x_norm,
            self.state_exponent.0,
        )
        .map_err(|e| Error::schema(format!("state_exponent: {e}")))?;
        let cert = set0.certified().cloned();
        let mut set = ThickSet::from_indicator(grid, set0.indicator().to_vec())
            .map_err(|e| Error::schema(format!("set: {e}")))?;
        if let Some(cert) = cert {
            set.certify(&cert.ell)
                .map_err(|e| Error::schema(format!("set: {e}")))?;
        }
        let y0 = match (&self.y0.file, &self.y0.band) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::schema(
                    "y0: needs exactly one of \"file\" or \"band\"".to_string(),
                ))
            }
            (Some(file), None) => {
                let f = load_field(&resolve(base, file))?;
                let fg = f.grid();
                if (fg.dim, fg.points, fg.value_dim) != (grid.dim, grid.points, grid.value_dim)
                    || fg.period != grid.period
                {
                    return Err(Error::schema(format!(
                        "y0.file: field grid {}:{}:{}:{} does not match the set grid {}:{}:{}:{}",
                        fg.dim,
                        fg.points,
                        fg.period,
                        fg.value_dim,
                        grid.dim,
                        grid.points,
                        grid.period,
                        grid.value_dim
                    )));
                }
                SpectralField::from_values(grid, f.values().to_vec())
                    .map_err(|e| Error::schema(format!("y0.file: {e}")))?
            }
            (None, Some(band)) => {
                check_lambda_band(band, grid.nyquist(), "y0.band")?;
                SpectralField::random_band_limited(grid, band, self.y0.seed.unwrap_or(0), 0)
                    .map_err(|e| Error::schema(format!("y0.band: {e}")))?
            }
        };
        Ok(crate::control::ControlProblem {
            symbol,
            y0,
            set,
            horizon: self.horizon,
            time_exponent: self.time_exponent.0,
            epsilon: self.epsilon,
            lambda0: self.lambda0,
            time_steps: self.time_steps,
        })
    }
}

/// `duality check`: compare a synthesized control's cost with the
/// adjoint-side observability bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityCheckConfig {
    pub schema_version: u32,
    /// Path to a control-run problem config.
    pub problem: String,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DualityCheckConfig {
    pub fn build(&self, base: &Path) -> Result<crate::control::ControlProblem> {
        check_version(self.schema_version)?;
        check_probe_sizes(self.ensemble, self.nodes)?;
        let path = resolve(base, &self.problem);
        let obj = load_object(Some(&path))?;
        let problem: ControlRunConfig = decode(obj)?;
        let problem_base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        problem.build(&problem_base)
    }
}

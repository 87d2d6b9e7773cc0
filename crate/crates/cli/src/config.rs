//! Experiment configuration: a TOML document with one table per module.
//!
//! Every table rejects unknown keys, and errors carry the dotted key path.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qbsde_core::numerics::{Grid, Region, SpaceGrid, TimeGrid, TimeRule};
use qbsde_core::qbsde::PicardSettings;
use qbsde_core::Expr;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Expand,
    Stability,
    Impact,
    ImpactExpand,
    Counterexample,
    Norms,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Expand => "expand",
            Experiment::Stability => "stability",
            Experiment::Impact => "impact",
            Experiment::ImpactExpand => "impact-expand",
            Experiment::Counterexample => "counterexample",
            Experiment::Norms => "norms",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bsde: Option<BsdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact: Option<ImpactConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
    pub nodes: usize,
    /// Defaults to `12 √T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Defaults to `4 √T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub core_radius: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 200,
            nodes: 401,
            half_width: None,
            core_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub region: Region,
    pub rule: TimeRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = PicardSettings::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
            region: p.region,
            rule: TimeRule::default(),
        }
    }
}

impl SolverConfig {
    pub fn picard(&self) -> PicardSettings {
        PicardSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            region: self.region,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    /// `f(z) = c z² / 2` in one dimension.
    Scalar { c: f64 },
    /// Constant symmetric tensor `α[i][j][k]`, row-major, `n³` entries.
    Tensor { n: usize, coefficients: Vec<f64> },
    Zero { n: usize },
}

impl DriverConfig {
    pub fn dim(&self) -> usize {
        match self {
            DriverConfig::Scalar { .. } => 1,
            DriverConfig::Tensor { n, .. } | DriverConfig::Zero { n } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeConfig {
    /// One expression in `x` per component.
    pub terminal: Vec<Expr>,
    pub a: f64,
    pub driver: DriverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpandConfig {
    pub order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Scales at which truncations are compared with the Picard solution.
    pub compare: Vec<f64>,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            order: 6,
            kappa: None,
            compare: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `Ξ' = Ξ + ε φ`.
    Terminal,
    /// `f' = (1 + ε) f`.
    Driver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub family: Family,
    /// `φ`, one expression per component; `cos(x)` in every component when empty.
    pub perturbation: Vec<Expr>,
    pub eps: Vec<f64>,
    pub p: f64,
    pub paths: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            family: Family::Terminal,
            perturbation: Vec::new(),
            eps: vec![1e-1, 1e-2, 1e-3],
            p: 2.0,
            paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelValue {
    Number(f64),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandConfig {
    /// `γ(t, x)`, one expression per asset.
    Field { gamma: Vec<Expr> },
    /// Levels held over `[τ_i, τ_{i+1})`; a level may depend on `x`, the state at `τ_i`.
    Simple { times: Vec<f64>, levels: Vec<Vec<LevelValue>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandStabilityConfig {
    /// Number of constant pieces of each approximation.
    pub pieces: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
}

fn default_p() -> f64 {
    2.0
}

fn default_paths() -> usize {
    100_000
}

fn default_true() -> bool {
    true
}

fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactConfig {
    /// One expression in `x` per asset.
    pub dividend: Vec<Expr>,
    pub demand: DemandConfig,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Expansion order for `impact-expand`.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Risk aversions at which the truncated expansion is compared with the solver.
    #[serde(default)]
    pub compare: Vec<f64>,
    /// Runs the backward-induction oracle for simple demands.
    #[serde(default = "default_true")]
    pub oracle: bool,
    /// Scaling factor `b` of the homogeneity check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<DemandStabilityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub paths: usize,
    pub dt: f64,
    pub a: Vec<f64>,
    /// `[a, T]` pairs for the solvability frontier.
    pub frontier: Vec<[f64; 2]>,
    /// `[a, T]` pairs for the reduction checks.
    pub reduction: Vec<[f64; 2]>,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            paths: 1_000_000,
            dt: 1e-4,
            a: vec![0.25, 0.5, 0.75, 1.05],
            frontier: vec![[0.5, 2.0], [1.0, 4.0]],
            reduction: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsConfig {
    pub p: Vec<f64>,
    pub paths: usize,
}

impl Default for NormsConfig {
    fn default() -> Self {
        Self {
            p: vec![2.0],
            paths: 10_000,
        }
    }
}

fn bad(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, CliError> {
        let cfg: Config = serde_path_to_error::deserialize(value)
            .map_err(|e| bad(e.path().to_string(), e.into_inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn needs_seed(&self) -> bool {
        match self.experiment {
            Experiment::Stability | Experiment::Counterexample | Experiment::Norms => true,
            Experiment::Impact => self.impact.as_ref().is_some_and(|i| i.stability.is_some()),
            _ => false,
        }
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        let time = TimeGrid::new(g.horizon, g.steps).map_err(|e| bad("grid.steps", e.to_string()))?;
        let space = match g.half_width {
            Some(w) => SpaceGrid::new(w, g.nodes),
            None => SpaceGrid::for_horizon(g.horizon, g.nodes),
        }
        .map_err(|e| bad("grid.nodes", e.to_string()))?;
        let grid = Grid::new(time, space);
        match g.core_radius {
            Some(r) => grid.with_core_radius(r).map_err(|e| bad("grid.core_radius", e.to_string())),
            None => Ok(grid),
        }
    }

    /// Checks everything the schema cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        use Experiment::*;
        let g = &self.grid;
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            return Err(bad("grid.horizon", format!("must be positive, got {}", g.horizon)));
        }
        if g.steps == 0 {
            return Err(bad("grid.steps", "must be positive"));
        }
        if g.nodes < 3 || g.nodes % 2 == 0 {
            return Err(bad("grid.nodes", format!("must be odd and at least 3, got {}", g.nodes)));
        }
        self.grid()?;
        if !(self.solver.tol > 0.0) {
            return Err(bad("solver.tol", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(bad("solver.max_iter", "must be positive"));
        }

        let used: &[&str] = match self.experiment {
            Solve => &["bsde"],
            Expand => &["bsde", "expand"],
            Stability => &["bsde", "stability"],
            Norms => &["bsde", "norms"],
            Impact | ImpactExpand => &["impact"],
            Counterexample => &["counterexample"],
        };
        let present = [
            ("bsde", self.bsde.is_some()),
            ("expand", self.expand.is_some()),
            ("stability", self.stability.is_some()),
            ("impact", self.impact.is_some()),
            ("counterexample", self.counterexample.is_some()),
            ("norms", self.norms.is_some()),
        ];
        for (name, is) in present {
            if is && !used.contains(&name) {
                return Err(bad(name, format!("section is not used by experiment `{}`", self.experiment)));
            }
        }
        if used.contains(&"bsde") && self.bsde.is_none() {
            return Err(bad("bsde", format!("section is required by experiment `{}`", self.experiment)));
        }
        if used.contains(&"impact") && self.impact.is_none() {
            return Err(bad("impact", format!("section is required by experiment `{}`", self.experiment)));
        }
        if self.needs_seed() && self.seed.is_none() {
            return Err(bad("seed", format!("experiment `{}` draws random paths and needs a seed", self.experiment)));
        }

        if let Some(b) = &self.bsde {
            validate_bsde(b)?;
        }
        if let Some(e) = &self.expand {
            if e.order == 0 {
                return Err(bad("expand.order", "must be at least 1"));
            }
            if let Some(k) = e.kappa.filter(|k| !(*k >= 1.0 && k.is_finite())) {
                return Err(bad("expand.kappa", format!("must be at least 1, got {k}")));
            }
        }
        if let Some(s) = &self.stability {
            let n = self.bsde.as_ref().map_or(1, |b| b.driver.dim());
            if !s.perturbation.is_empty() && s.perturbation.len() != n {
                return Err(bad(
                    "stability.perturbation",
                    format!("expected {n} expressions, got {}", s.perturbation.len()),
                ));
            }
            for (k, e) in s.perturbation.iter().enumerate() {
                if e.depends_on_t() {
                    return Err(bad(format!("stability.perturbation[{k}]"), "terminal perturbations depend on x only"));
                }
            }
            if s.eps.len() < 3 || s.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(bad("stability.eps", "needs at least three positive sizes"));
            }
            if !(s.p > 1.0) {
                return Err(bad("stability.p", "must exceed 1"));
            }
            if s.paths == 0 {
                return Err(bad("stability.paths", "must be positive"));
            }
            if s.family == Family::Driver && matches!(self.bsde.as_ref().map(|b| &b.driver), Some(DriverConfig::Zero { .. })) {
                return Err(bad("stability.family", "a zero driver has no driver perturbation"));
            }
        }
        if let Some(i) = &self.impact {
            self.validate_impact(i)?;
        }
        if let Some(c) = &self.counterexample {
            if !(c.dt > 0.0 && c.dt <= 1e-3) {
                return Err(bad("counterexample.dt", format!("must lie in (0, 1e-3], got {}", c.dt)));
            }
            if c.paths < 10_000 {
                return Err(bad("counterexample.paths", format!("at least 10000 paths are required, got {}", c.paths)));
            }
            if c.a.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return Err(bad("counterexample.a", "entries must be nonnegative"));
            }
            for (key, pairs) in [("counterexample.frontier", &c.frontier), ("counterexample.reduction", &c.reduction)] {
                for (k, [a, t]) in pairs.iter().enumerate() {
                    if !(*a > 0.0 && *t > 1.0) {
                        return Err(bad(format!("{key}[{k}]"), "needs a > 0 and T > 1"));
                    }
                }
            }
        }
        if let Some(n) = &self.norms {
            if n.p.is_empty() || n.p.iter().any(|p| !(*p > 1.0)) {
                return Err(bad("norms.p", "exponents must exceed 1"));
            }
            if n.paths == 0 {
                return Err(bad("norms.paths", "must be positive"));
            }
        }
        Ok(())
    }

    fn validate_impact(&self, i: &ImpactConfig) -> Result<(), CliError> {
        if !(i.a > 0.0 && i.a.is_finite()) {
            return Err(bad("impact.a", format!("risk aversion must be positive, got {}", i.a)));
        }
        if i.dividend.is_empty() {
            return Err(bad("impact.dividend", "needs one expression per asset"));
        }
        let n = i.dividend.len();
        for (k, e) in i.dividend.iter().enumerate() {
            if e.depends_on_t() {
                return Err(bad(format!("impact.dividend[{k}]"), "dividends depend on x only"));
            }
        }
        match &i.demand {
            DemandConfig::Field { gamma } => {
                if gamma.len() != n {
                    return Err(bad("impact.demand.gamma", format!("expected {n} expressions, got {}", gamma.len())));
                }
            }
            DemandConfig::Simple { times, levels } => {
                if times.len() < 2 || levels.len() + 1 != times.len() {
                    return Err(bad("impact.demand.levels", "needs one level per period between consecutive times"));
                }
                for (k, l) in levels.iter().enumerate() {
                    if l.len() != n {
                        return Err(bad(format!("impact.demand.levels[{k}]"), format!("expected {n} entries")));
                    }
                    for v in l {
                        if let LevelValue::Expr(e) = v {
                            if e.depends_on_t() {
                                return Err(bad(format!("impact.demand.levels[{k}]"), "levels depend on x only"));
                            }
                        }
                    }
                }
                if i.stability.is_some() {
                    return Err(bad("impact.stability", "demand stability approximates a field demand"));
                }
            }
        }
        if i.order == 0 {
            return Err(bad("impact.order", "must be at least 1"));
        }
        if let Some(b) = i.homogeneity.filter(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(bad("impact.homogeneity", format!("scaling must be positive, got {b}")));
        }
        if let Some(s) = &i.stability {
            if s.pieces.is_empty() || s.pieces.iter().any(|&m| m == 0 || self.grid.steps % m != 0) {
                return Err(bad(
                    "impact.stability.pieces",
                    format!("each count must divide grid.steps = {}", self.grid.steps),
                ));
            }
            if !(s.p > 1.0) {
                return Err(bad("impact.stability.p", "must exceed 1"));
            }
        }
        Ok(())
    }
}

fn validate_bsde(b: &BsdeConfig) -> Result<(), CliError> {
    if !b.a.is_finite() {
        return Err(bad("bsde.a", "must be finite"));
    }
    let n = b.driver.dim();
    if n == 0 {
        return Err(bad("bsde.driver.n", "must be positive"));
    }
    if b.terminal.len() != n {
        return Err(bad("bsde.terminal", format!("driver has {n} components, got {} expressions", b.terminal.len())));
    }
    for (k, e) in b.terminal.iter().enumerate() {
        if e.depends_on_t() {
            return Err(bad(format!("bsde.terminal[{k}]"), "terminal values depend on x only"));
        }
    }
    if let DriverConfig::Tensor { n, coefficients } = &b.driver {
        if coefficients.len() != n * n * n {
            return Err(bad(
                "bsde.driver.coefficients",
                format!("expected {} entries, got {}", n * n * n, coefficients.len()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOLVE: &str = r#"
experiment = "solve"

[bsde]
terminal = ["x"]
a = 0.5
driver = { kind = "scalar", c = 1.0 }
"#;

    fn schema_path(text: &str) -> String {
        match Config::from_toml(text) {
            Err(CliError::Schema { path, .. }) => path,
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_solve_config() {
        let c = Config::from_toml(SOLVE).unwrap();
        assert_eq!(c.experiment, Experiment::Solve);
        assert_eq!(c.grid, GridConfig::default());
        assert!(!c.needs_seed());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        assert_eq!(schema_path(&SOLVE.replace("a = 0.5", "a = 0.5\nspeed = 2")), "bsde.speed");
        assert_eq!(schema_path(&format!("{SOLVE}\n[grid]\nstep = 10\n")), "grid.step");
        assert_eq!(schema_path(&format!("{SOLVE}\n[grid]\nsteps = -1\n")), "grid.steps");
        assert_eq!(schema_path(&SOLVE.replace("\"x\"", "\"x +\"")), "bsde.terminal[0]");
    }

    #[test]
    fn semantic_errors_name_their_key() {
        assert_eq!(schema_path(&SOLVE.replace("solve", "norms")), "seed");
        assert_eq!(schema_path(&format!("{SOLVE}\n[counterexample]\n")), "counterexample");
        assert_eq!(schema_path(&format!("{SOLVE}\n[grid]\nnodes = 400\n")), "grid.nodes");
        assert_eq!(schema_path(&SOLVE.replace("[\"x\"]", "[\"x\", \"x\"]")), "bsde.terminal");
        assert_eq!(schema_path(&SOLVE.replace("\"x\"", "\"x*t\"")), "bsde.terminal[0]");
    }

    #[test]
    fn json_round_trip() {
        let c = Config::from_toml(SOLVE).unwrap();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(Config::from_json(&v).unwrap(), c);
    }
}

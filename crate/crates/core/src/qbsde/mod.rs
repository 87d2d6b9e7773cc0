//! Quadratic BSDE systems `Y_t = aΞ + ∫_t^T f(s, ζ_s) ds - ∫_t^T ζ_s dB_s` with `Ξ = h(B_T)`.

mod driver;
mod picard;
mod series;

pub use driver::{
    bilinear_source, driver_source, BilinearDriver, Coefficients, Driver, DriverFn, DriverKind,
    GrowthCheck, Loc, QuadraticDriver,
};
pub use picard::{picard_solve, PicardSettings};
pub use series::{expansion, EvaluatedSeries, ExpansionSeries, PartialSumCheck};

use serde::Serialize;

use crate::bmo::{hbmo_norm, terminal_bmo_norm, SupNorm};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction, Region, Scheme, Source, TimeRule};

/// An `n`-dimensional BSDE on a fixed grid with terminal values sampled at the spatial nodes.
#[derive(Debug, Clone)]
pub struct BsdeSpec {
    grid: Grid,
    rule: TimeRule,
    driver: DriverKind,
    terminal: Vec<f64>,
}

impl BsdeSpec {
    pub fn new(grid: Grid, driver: impl Into<DriverKind>, terminal: Vec<f64>) -> Result<Self> {
        let driver = driver.into();
        let n = driver.dim();
        if terminal.len() != n * grid.space.nodes() {
            return Err(Error::DimensionMismatch {
                what: "terminal values",
                expected: n * grid.space.nodes(),
                got: terminal.len(),
            });
        }
        if let Some(k) = terminal.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "terminal values",
                slice: grid.time.steps(),
                node: k / n,
                component: k % n,
            });
        }
        if let DriverKind::Bilinear(b) = &driver {
            b.check_grid(&grid)?;
        }
        Ok(Self {
            grid,
            rule: TimeRule::default(),
            driver,
            terminal,
        })
    }

    /// Terminal map `h(x) ∈ R^n` sampled at the spatial nodes.
    pub fn from_fn(
        grid: Grid,
        driver: impl Into<DriverKind>,
        h: impl Fn(f64, &mut [f64]),
    ) -> Result<Self> {
        let driver = driver.into();
        let n = driver.dim();
        let mut terminal = vec![0.0; n * grid.space.nodes()];
        for j in 0..grid.space.nodes() {
            h(grid.space.x(j), &mut terminal[j * n..(j + 1) * n]);
        }
        Self::new(grid, driver, terminal)
    }

    pub fn with_rule(mut self, rule: TimeRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_terminal(&self, terminal: Vec<f64>) -> Result<Self> {
        Ok(Self::new(self.grid, self.driver.clone(), terminal)?.with_rule(self.rule))
    }

    pub fn with_driver(&self, driver: impl Into<DriverKind>) -> Result<Self> {
        Ok(Self::new(self.grid, driver, self.terminal.clone())?.with_rule(self.rule))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rule(&self) -> TimeRule {
        self.rule
    }

    pub fn dim(&self) -> usize {
        self.driver.dim()
    }

    pub fn driver(&self) -> &DriverKind {
        &self.driver
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::with_rule(self.grid, self.rule)
    }

    /// `‖L‖_bmo` of `L_t = E_t[Ξ] - E[Ξ]` over `region`.
    pub fn terminal_norm(&self, region: Region) -> Result<SupNorm> {
        terminal_bmo_norm(&self.scheme()?, &self.terminal, region)
    }
}

/// Grid solution `(Y, ζ)` with diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub y: GridFunction,
    pub zeta: GridFunction,
    /// Largest scaled defect of the discrete equation on the core region.
    pub residual: f64,
    /// Largest `|ζ - ∂_x Y|` on the core region.
    pub gradient_gap: f64,
    pub hbmo_zeta: SupNorm,
    pub iterations: usize,
    /// Sup change of `ζ` per iteration.
    pub changes: Vec<f64>,
}

impl Solution {
    /// Largest ratio of successive changes over the last iterations.
    pub fn contraction_factor(&self) -> Option<f64> {
        let c = &self.changes;
        if c.len() < 3 {
            return None;
        }
        let tail = &c[c.len().saturating_sub(5)..];
        tail.windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .reduce(f64::max)
    }

    /// `Y(0, 0)`.
    pub fn y0(&self, grid: &Grid) -> &[f64] {
        self.y.at(0, grid.space.center())
    }
}

/// Summary record of a solution for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub residual: f64,
    pub gradient_gap: f64,
    pub hbmo_zeta: f64,
    pub iterations: usize,
    pub y00: Vec<f64>,
}

impl Solution {
    pub fn summary(&self, grid: &Grid) -> SolutionSummary {
        SolutionSummary {
            residual: self.residual,
            gradient_gap: self.gradient_gap,
            hbmo_zeta: self.hbmo_zeta.value,
            iterations: self.iterations,
            y00: self.y0(grid).to_vec(),
        }
    }
}

/// `Y^(1) = E_t[Ξ]` and its integrand `ζ^(1) = ∂_x Y^(1)`.
pub fn lift_terminal(spec: &BsdeSpec) -> Result<(GridFunction, GridFunction)> {
    let scheme = spec.scheme()?;
    let y = scheme.conditional_expectation(&spec.terminal)?;
    let z = scheme.gradient_x(&y);
    Ok((y, z))
}

/// Integrand of the martingale part of `E_t[∫_0^T f̃(s, μ_s, ν_s) ds]`.
pub fn bilinear_image(
    scheme: &Scheme,
    mu: &GridFunction,
    nu: &GridFunction,
    driver: &BilinearDriver,
) -> Result<GridFunction> {
    let src = bilinear_source(driver, scheme.grid(), mu, nu)?;
    let nx = scheme.grid().space.nodes();
    let u = scheme.backward_accumulate(&src, &vec![0.0; nx * driver.dim()])?;
    Ok(scheme.gradient_x(&u))
}

/// Defect diagnostics of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    /// `max |Y_i - E_i[Y_{i+1}] - (step integral of f(ζ))| / dt` on the core region.
    pub defect: f64,
    pub gradient_gap: f64,
    /// `max |Y(T) - a h|`.
    pub terminal_gap: f64,
}

/// Discrete defect of `(Y, ζ)` under the spec's time rule.
pub fn residual(spec: &BsdeSpec, y: &GridFunction, zeta: &GridFunction, a: f64) -> Result<Residual> {
    let grid = spec.grid;
    let n = spec.dim();
    driver::check_field(&grid, y, n, "solution values")?;
    driver::check_field(&grid, zeta, n, "solution integrand")?;
    let scheme = spec.scheme()?;
    let src = driver_source(&spec.driver, &grid, zeta)?;
    let Source::Intervals { left, right } = &src else {
        return Err(invalid("driver source has unexpected layout"));
    };
    let nt = grid.time.steps();
    let dt = grid.dt();
    let core = grid.indices(Region::Core);
    let mut defect = 0.0f64;
    for i in 0..nt {
        let (pred, l) = match spec.rule {
            TimeRule::LeftPoint => (scheme.step(y.slice(i + 1), n), left.slice(i)),
            TimeRule::Trapezoid => {
                let shifted: Vec<f64> = y
                    .slice(i + 1)
                    .iter()
                    .zip(right.slice(i))
                    .map(|(v, s)| v + 0.5 * dt * s)
                    .collect();
                (scheme.step(&shifted, n), left.slice(i))
            }
        };
        let w = match spec.rule {
            TimeRule::LeftPoint => dt,
            TimeRule::Trapezoid => 0.5 * dt,
        };
        for j in core.clone() {
            for c in 0..n {
                let k = j * n + c;
                let d = (y.slice(i)[k] - pred[k] - w * l[k]).abs() / dt;
                defect = defect.max(d);
            }
        }
    }
    let grad = scheme.gradient_x(y);
    let gradient_gap = grad.sub(zeta)?.sup_abs(&grid, Region::Core);
    let terminal_gap = y
        .slice(nt)
        .iter()
        .zip(&spec.terminal)
        .map(|(v, h)| (v - a * h).abs())
        .fold(0.0, f64::max);
    Ok(Residual {
        defect,
        gradient_gap,
        terminal_gap,
    })
}

/// Builds a [`Solution`] from a pair, computing every diagnostic.
pub(crate) fn finish(
    spec: &BsdeSpec,
    scheme: &Scheme,
    y: GridFunction,
    zeta: GridFunction,
    a: f64,
    iterations: usize,
    changes: Vec<f64>,
) -> Result<Solution> {
    let r = residual(spec, &y, &zeta, a)?;
    let hbmo_zeta = hbmo_norm(scheme, &zeta, Region::Core)?;
    Ok(Solution {
        y,
        zeta,
        residual: r.defect,
        gradient_gap: r.gradient_gap,
        hbmo_zeta,
        iterations,
        changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::with_resolution(1.0, 100, 401).unwrap()
    }

    #[test]
    fn lift_of_affine_and_constant() {
        let g = grid();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x).unwrap();
        let (y, z) = lift_terminal(&spec).unwrap();
        for i in 0..=100 {
            for j in g.indices(Region::Core) {
                assert!((y.get(i, j, 0) - g.space.x(j)).abs() < 1e-12);
                assert!((z.get(i, j, 0) - 1.0).abs() < 1e-12);
            }
        }
        let spec = spec.with_terminal(vec![5.0; 401]).unwrap();
        let (y, z) = lift_terminal(&spec).unwrap();
        assert!(y.values().iter().all(|&v| v == 5.0));
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_integral_has_no_martingale_part() {
        let g = grid();
        let s = Scheme::new(g).unwrap();
        let one = GridFunction::constant(&g, &[1.0]);
        let z = bilinear_image(&s, &one, &one, &BilinearDriver::scalar(1.0).unwrap()).unwrap();
        assert!(z.values().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn defect_detects_a_single_node_perturbation() {
        let g = Grid::with_resolution(1.0, 50, 201).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x).unwrap();
        let sol = picard_solve(&spec, 0.2, &PicardSettings::default()).unwrap();
        assert!(sol.residual < 1e-8);
        let mut y = sol.y.clone();
        let eps = 1e-3;
        let j = g.space.center();
        y.set(10, j, 0, y.get(10, j, 0) + eps);
        let r = residual(&spec, &y, &sol.zeta, 0.2).unwrap();
        assert!(r.defect >= eps / g.dt() * (1.0 - 1e-9));
    }
}

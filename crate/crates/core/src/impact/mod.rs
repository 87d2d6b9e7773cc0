//! Equilibrium prices of `n` risky assets paying `Ψ = ψ(B_T)` when a large
//! investor holds a demand `γ` against exponential-utility market makers.

mod demand;
mod density;
mod oracle;
mod series;
mod stability;

pub use demand::{Demand, Level, SimpleDemand};
pub use density::{density_check, path_density_check, DensityCheck, PathDensityCheck};
pub use oracle::{simple_demand_oracle, OraclePrices};
pub use series::{homogeneity_report, impact_expansion, leading_term, HomogeneityReport, ImpactSeries, SeriesPrices};
pub use stability::{demand_stability, write_stability_csv, DemandStabilityRow};

use serde::Serialize;

use crate::bmo::{terminal_bmo_norm, BmoConstants, SupNorm, DEFAULT_KAPPA};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction, Region, Scheme, Source, TimeRule};
use crate::qbsde::{picard_solve, BilinearDriver, BsdeSpec, Coefficients, PicardSettings, Solution};

/// Market primitives: grid, dividends, demand and the market makers' risk aversion `a`.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    grid: Grid,
    n: usize,
    dividend: Vec<f64>,
    demand: Demand,
    a: f64,
    rule: TimeRule,
}

impl MarketSpec {
    pub fn new(grid: Grid, dividend: Vec<f64>, demand: Demand, a: f64) -> Result<Self> {
        let n = demand.dim();
        let nx = grid.space.nodes();
        if dividend.len() != n * nx {
            return Err(Error::DimensionMismatch {
                what: "dividend values",
                expected: n * nx,
                got: dividend.len(),
            });
        }
        if let Some(k) = dividend.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "dividend values",
                slice: grid.time.steps(),
                node: k / n,
                component: k % n,
            });
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid(format!("risk aversion must be positive, got {a}")));
        }
        Ok(Self {
            grid,
            n,
            dividend,
            demand,
            a,
            rule: TimeRule::default(),
        })
    }

    /// Dividend map `ψ(x) ∈ R^n` sampled at the spatial nodes.
    pub fn from_fn(grid: Grid, psi: impl Fn(f64, &mut [f64]), demand: Demand, a: f64) -> Result<Self> {
        let n = demand.dim();
        let nx = grid.space.nodes();
        let mut dividend = vec![0.0; n * nx];
        for j in 0..nx {
            psi(grid.space.x(j), &mut dividend[j * n..(j + 1) * n]);
        }
        Self::new(grid, dividend, demand, a)
    }

    pub fn with_rule(mut self, rule: TimeRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_risk_aversion(&self, a: f64) -> Result<Self> {
        Ok(Self::new(self.grid, self.dividend.clone(), self.demand.clone(), a)?.with_rule(self.rule))
    }

    pub fn with_demand(&self, demand: Demand) -> Result<Self> {
        Ok(Self::new(self.grid, self.dividend.clone(), demand, self.a)?.with_rule(self.rule))
    }

    pub fn with_dividend(&self, dividend: Vec<f64>) -> Result<Self> {
        Ok(Self::new(self.grid, dividend, self.demand.clone(), self.a)?.with_rule(self.rule))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rule(&self) -> TimeRule {
        self.rule
    }

    pub fn assets(&self) -> usize {
        self.n
    }

    pub fn dividend(&self) -> &[f64] {
        &self.dividend
    }

    pub fn demand(&self) -> &Demand {
        &self.demand
    }

    pub fn risk_aversion(&self) -> f64 {
        self.a
    }

    pub fn scheme(&self) -> Result<Scheme> {
        Scheme::with_rule(self.grid, self.rule)
    }

    /// `‖Ψ‖_bmo` over `region`.
    pub fn dividend_bmo(&self, region: Region) -> Result<SupNorm> {
        terminal_bmo_norm(&self.scheme()?, &self.dividend, region)
    }

    /// System for `(aR, aS)` at unit scale: terminal `(0, Ψ)` and the impact driver.
    pub fn bsde_spec(&self) -> Result<BsdeSpec> {
        let driver = impact_driver(&self.grid, &self.demand)?;
        let n1 = self.n + 1;
        let nx = self.grid.space.nodes();
        let mut terminal = vec![0.0; n1 * nx];
        for j in 0..nx {
            terminal[j * n1 + 1..(j + 1) * n1].copy_from_slice(&self.dividend[j * self.n..(j + 1) * self.n]);
        }
        Ok(BsdeSpec::new(self.grid, driver, terminal)?.with_rule(self.rule))
    }
}

/// Coefficients of `g(u, v; w)` on `R^{1+n}`, row-major `(n+1)³`.
///
/// `g_0 = ((u_2·w)(v_2·w) - u_1 v_1) / 2` and
/// `g_{1+a} = -(u_{2,a} v_1 + v_{2,a} u_1 + u_{2,a}(v_2·w) + v_{2,a}(u_2·w)) / 2`.
pub fn impact_tensor(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let m = n + 1;
    let mut t = vec![0.0; m * m * m];
    let idx = |i: usize, j: usize, k: usize| (i * m + j) * m + k;
    t[idx(0, 0, 0)] = -0.5;
    for a in 0..n {
        for b in 0..n {
            t[idx(0, 1 + a, 1 + b)] = 0.5 * w[a] * w[b];
        }
    }
    for a in 0..n {
        t[idx(1 + a, 1 + a, 0)] = -0.5;
        t[idx(1 + a, 0, 1 + a)] = -0.5;
        for b in 0..n {
            t[idx(1 + a, 1 + a, 1 + b)] += -0.5 * w[b];
            t[idx(1 + a, 1 + b, 1 + a)] += -0.5 * w[b];
        }
    }
    t
}

/// Bilinear driver of the price system for a demand on `grid`.
pub fn impact_driver(grid: &Grid, demand: &Demand) -> Result<BilinearDriver> {
    let n = demand.dim();
    let m = n + 1;
    let width = m * m * m;
    let (left, right) = demand.intervals(grid)?;
    let first = &left.values()[..n];
    let constant = left
        .values()
        .chunks_exact(n)
        .chain(right.values().chunks_exact(n))
        .all(|c| c == first);
    if constant {
        return BilinearDriver::new(m, Coefficients::Constant(impact_tensor(first)));
    }
    let build = |g: &GridFunction| -> Result<GridFunction> {
        let data: Vec<f64> = g.values().chunks_exact(n).flat_map(impact_tensor).collect();
        GridFunction::from_vec(g.slices(), g.nx(), width, data)
    };
    BilinearDriver::new(
        m,
        Coefficients::Intervals {
            left: build(&left)?,
            right: build(&right)?,
        },
    )
}

/// Certified `Θ(n)` of the impact driver over demands with `|w| ≤ 1`.
///
/// By rotation invariance it suffices to scan `w = s e_1`, `s ∈ [0, 1]`.
pub fn impact_theta(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("at least one asset is required"));
    }
    let mut theta = 0.0f64;
    for k in 0..=16 {
        let mut w = vec![0.0; n];
        w[0] = k as f64 / 16.0;
        theta = theta.max(BilinearDriver::new(n + 1, Coefficients::Constant(impact_tensor(&w)))?.theta());
    }
    Ok(theta)
}

/// Sufficient smallness condition `a ‖γ‖_∞ ‖Ψ‖_bmo < c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Viability {
    pub product: f64,
    pub threshold: f64,
    pub demand_sup: f64,
    pub dividend_bmo: f64,
    pub theta: f64,
    pub kappa: f64,
    /// `κ` was not supplied, so the threshold is heuristic.
    pub kappa_defaulted: bool,
    pub viable: bool,
}

/// Evaluates the smallness condition; `threshold` defaults to `1 / (8 κ Θ(n))`.
pub fn check_viability_bound(market: &MarketSpec, kappa: Option<f64>, threshold: Option<f64>) -> Result<Viability> {
    let theta = impact_theta(market.n)?;
    let constants = match kappa {
        Some(k) => BmoConstants::with_kappa(k, theta)?,
        None => BmoConstants::new(theta)?,
    };
    let threshold = match threshold {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(invalid(format!("viability threshold must be positive, got {c}"))),
        None => 1.0 / (8.0 * constants.kappa * theta),
    };
    let demand_sup = market.demand.sup_norm();
    let dividend_bmo = market.dividend_bmo(Region::Core)?.value;
    let product = market.a * demand_sup * dividend_bmo;
    Ok(Viability {
        product,
        threshold,
        demand_sup,
        dividend_bmo,
        theta,
        kappa: kappa.unwrap_or(DEFAULT_KAPPA),
        kappa_defaulted: constants.kappa_defaulted,
        viable: product < threshold,
    })
}

/// `S`, `R` and their integrands on the grid.
#[derive(Debug, Clone)]
pub struct PriceSystem {
    pub a: f64,
    /// Prices, `n` components.
    pub s: GridFunction,
    /// Certainty equivalent of the remaining gains.
    pub r: GridFunction,
    /// Price volatility `σ = θ / a`.
    pub sigma: GridFunction,
    pub eta: GridFunction,
    pub theta: GridFunction,
    /// Market price of risk `α = η + θ·γ` per step.
    pub alpha: Source,
    /// `α(t_i+)` on the nodes, and `α(T)` on the last one.
    pub alpha_nodes: GridFunction,
}

impl PriceSystem {
    /// Recovers prices from the scaled system `(aR, aS)` with integrand `(η, θ)`.
    pub fn from_scaled(grid: &Grid, a: f64, y: &GridFunction, zeta: &GridFunction, demand: &Demand) -> Result<Self> {
        let n = y.dim() - 1;
        let s = components(y, 1, n).map(|v| v / a);
        let r = y.component(0).map(|v| v / a);
        let eta = zeta.component(0);
        let theta = components(zeta, 1, n);
        let sigma = theta.map(|v| v / a);
        let (alpha, alpha_nodes) = market_price_of_risk(grid, &eta, &theta, demand)?;
        Ok(Self {
            a,
            s,
            r,
            sigma,
            eta,
            theta,
            alpha,
            alpha_nodes,
        })
    }

    /// Builds the system from prices and certainty equivalents given on the nodes.
    pub fn from_prices(grid: &Grid, a: f64, s: GridFunction, r: GridFunction, demand: &Demand) -> Result<Self> {
        let dx = grid.dx();
        let sigma = crate::numerics::gradient_x(&s, dx);
        let theta = sigma.scaled(a);
        let eta = crate::numerics::gradient_x(&r, dx).scaled(a);
        let (alpha, alpha_nodes) = market_price_of_risk(grid, &eta, &theta, demand)?;
        Ok(Self {
            a,
            s,
            r,
            sigma,
            eta,
            theta,
            alpha,
            alpha_nodes,
        })
    }

    pub fn assets(&self) -> usize {
        self.s.dim()
    }

    /// `S_0` at `B_0 = 0`.
    pub fn s0(&self, grid: &Grid) -> &[f64] {
        self.s.at(0, grid.space.center())
    }

    /// Drift rate `σ α` of `S`, per step.
    pub fn drift(&self, grid: &Grid) -> Source {
        let nt = grid.time.steps();
        let nx = grid.space.nodes();
        let n = self.assets();
        let Source::Intervals { left: al, right: ar } = &self.alpha else {
            unreachable!("market price of risk is interval based");
        };
        let mut left = GridFunction::zeros(nt, nx, n);
        let mut right = GridFunction::zeros(nt, nx, n);
        for i in 0..nt {
            for j in 0..nx {
                let (l, r) = (al.get(i, j, 0), ar.get(i, j, 0));
                for c in 0..n {
                    left.set(i, j, c, self.sigma.get(i, j, c) * l);
                    right.set(i, j, c, self.sigma.get(i + 1, j, c) * r);
                }
            }
        }
        Source::Intervals { left, right }
    }
}

fn components(g: &GridFunction, first: usize, count: usize) -> GridFunction {
    let parts: Vec<GridFunction> = (first..first + count).map(|c| g.component(c)).collect();
    let refs: Vec<&GridFunction> = parts.iter().collect();
    GridFunction::stack(&refs).expect("components share a shape")
}

/// `α = η + θ·γ` at both ends of every step, and its forward-looking node values.
fn market_price_of_risk(
    grid: &Grid,
    eta: &GridFunction,
    theta: &GridFunction,
    demand: &Demand,
) -> Result<(Source, GridFunction)> {
    let (gl, gr) = demand.intervals(grid)?;
    let nt = grid.time.steps();
    let nx = grid.space.nodes();
    let mut left = GridFunction::zeros(nt, nx, 1);
    let mut right = GridFunction::zeros(nt, nx, 1);
    let dot = |i: usize, j: usize, g: &GridFunction, s: usize| -> f64 {
        theta.at(i, j).iter().zip(g.at(s, j)).map(|(a, b)| a * b).sum()
    };
    for i in 0..nt {
        for j in 0..nx {
            left.set(i, j, 0, eta.get(i, j, 0) + dot(i, j, &gl, i));
            right.set(i, j, 0, eta.get(i + 1, j, 0) + dot(i + 1, j, &gr, i));
        }
    }
    let mut nodes = GridFunction::on_nodes(grid, 1);
    for i in 0..nt {
        nodes.slice_mut(i).copy_from_slice(left.slice(i));
    }
    nodes.slice_mut(nt).copy_from_slice(right.slice(nt - 1));
    Ok((Source::Intervals { left, right }, nodes))
}

/// Prices with the BSDE solution and diagnostics.
#[derive(Debug, Clone)]
pub struct ImpactSolution {
    pub prices: PriceSystem,
    pub solution: Solution,
    pub viability: Viability,
    pub density: DensityCheck,
}

/// Solves the price system by Picard iteration at scale `a`.
pub fn solve_prices(market: &MarketSpec, settings: &PicardSettings) -> Result<ImpactSolution> {
    let spec = market.bsde_spec()?;
    let solution = picard_solve(&spec, market.a, settings)?;
    let prices = PriceSystem::from_scaled(&market.grid, market.a, &solution.y, &solution.zeta, &market.demand)?;
    let viability = check_viability_bound(market, None, None)?;
    let density = density_check(&market.scheme()?, &prices)?;
    Ok(ImpactSolution {
        prices,
        solution,
        viability,
        density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qbsde::Driver;

    fn bachelier(a: f64, gamma: f64) -> MarketSpec {
        let g = Grid::with_resolution(1.0, 100, 401).unwrap();
        MarketSpec::from_fn(g, |x, o| o[0] = x, Demand::constant(&g, &[gamma]), a).unwrap()
    }

    #[test]
    fn tensor_reproduces_the_driver() {
        let w = [0.7, -0.3];
        let t = impact_tensor(&w);
        let d = BilinearDriver::new(3, Coefficients::Constant(t)).unwrap();
        let z = [0.4, 1.1, -0.6];
        let mut out = [0.0; 3];
        let loc = crate::qbsde::Loc {
            step: 0,
            right: false,
            node: 0,
            t: 0.0,
            x: 0.0,
        };
        d.eval(&loc, &z, &mut out);
        let (eta, th) = (z[0], [z[1], z[2]]);
        let tg = th[0] * w[0] + th[1] * w[1];
        assert!((out[0] - 0.5 * (tg * tg - eta * eta)).abs() < 1e-15);
        for c in 0..2 {
            assert!((out[1 + c] + th[c] * (eta + tg)).abs() < 1e-15);
        }
    }

    #[test]
    fn bachelier_prices() {
        let (a, gamma) = (0.5, 0.8);
        let m = bachelier(a, gamma);
        let sol = solve_prices(&m, &PicardSettings::default()).unwrap();
        let g = m.grid();
        for i in (0..=100).step_by(10) {
            let t = g.time.t(i);
            for j in g.indices(Region::Core).step_by(10) {
                let x = g.space.x(j);
                assert!((sol.prices.s.get(i, j, 0) - (x - a * gamma * (1.0 - t))).abs() < 1e-9);
                assert!((sol.prices.sigma.get(i, j, 0) - 1.0).abs() < 1e-9);
                assert!((sol.prices.alpha_nodes.get(i, j, 0) - a * gamma).abs() < 1e-9);
                assert!((sol.prices.r.get(i, j, 0) - 0.5 * a * gamma * gamma * (1.0 - t)).abs() < 1e-9);
            }
        }
        assert!((sol.viability.product - a * gamma).abs() < 1e-9);
        assert!(sol.viability.kappa_defaulted);
        assert!(sol.density.normalization_gap < 1e-8);
        assert!(sol.density.q_drift < 1e-6, "{}", sol.density.q_drift);
    }

    #[test]
    fn recovery_identities() {
        let g = Grid::with_resolution(1.0, 40, 201).unwrap();
        let demand = Demand::Field(GridFunction::from_fn(&g, 1, |t, x, o| o[0] = 0.5 + 0.3 * t + 0.1 * x.tanh()));
        let m = MarketSpec::from_fn(g, |x, o| o[0] = x + 0.3 * x.sin(), demand, 0.5).unwrap();
        let sol = solve_prices(&m, &PicardSettings::default()).unwrap();
        let p = &sol.prices;
        let Source::Intervals { left, .. } = &p.alpha else { panic!() };
        let (gl, _) = m.demand().intervals(&g).unwrap();
        for i in 0..40 {
            for j in 0..201 {
                let want = p.eta.get(i, j, 0) + p.theta.get(i, j, 0) * gl.get(i, j, 0);
                assert_eq!(left.get(i, j, 0), want);
                let th = p.theta.get(i, j, 0);
                assert!((p.a * p.sigma.get(i, j, 0) - th).abs() <= f64::EPSILON * th.abs());
            }
        }
    }

    #[test]
    fn viability_product() {
        let m = bachelier(0.1, 1.0);
        let v = check_viability_bound(&m, None, None).unwrap();
        assert!((v.product - 0.1).abs() < 1e-9);
        assert!((v.threshold - 1.0 / (8.0 * v.theta)).abs() < 1e-15);
        let v = check_viability_bound(&m, None, Some(0.05)).unwrap();
        assert!(!v.viable);
        assert!(check_viability_bound(&m, None, Some(-1.0)).is_err());
    }

    #[test]
    fn theta_of_unit_demand_dominates_zero_demand() {
        let t1 = impact_theta(1).unwrap();
        let zero = BilinearDriver::new(2, Coefficients::Constant(impact_tensor(&[0.0]))).unwrap().theta();
        assert!(t1 >= zero && zero >= 0.5);
        assert!(impact_theta(0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid::with_resolution(1.0, 10, 21).unwrap();
        let d = Demand::constant(&g, &[1.0]);
        assert!(MarketSpec::new(g, vec![0.0; 20], d.clone(), 1.0).is_err());
        assert!(MarketSpec::new(g, vec![0.0; 21], d.clone(), 0.0).is_err());
        let mut v = vec![0.0; 21];
        v[3] = f64::NAN;
        assert!(matches!(MarketSpec::new(g, v, d, 1.0), Err(Error::NonFinite { node: 3, .. })));
    }
}

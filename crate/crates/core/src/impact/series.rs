use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::{GridFunction, Region, Source};
use crate::qbsde::{expansion, ExpansionSeries, PicardSettings};

use super::{check_viability_bound, solve_prices, MarketSpec, PriceSystem};

/// Coefficients of prices, volatilities and market price of risk in powers of `a`.
#[derive(Debug, Clone)]
pub struct ImpactSeries {
    /// Expansion of `(aR, aS)`, one order beyond the price coefficients.
    pub system: ExpansionSeries,
    /// `S^(k)`, `k = 0..=K`.
    pub prices: Vec<GridFunction>,
    /// `σ^(k) = ζ_2^(k+1)`, `k = 0..=K`.
    pub sigma: Vec<GridFunction>,
    /// `α^(k) = ζ_1^(k) + ζ_2^(k)·γ`, `k = 1..=K` (stored from index 0).
    pub alpha: Vec<Source>,
    /// `c / (‖γ‖_∞ ‖Ψ‖_bmo)` with `c = 1 / (8 κ Θ(n))`; heuristic since `κ` is defaulted.
    pub rho: Option<f64>,
}

/// Truncated sums at a given `a`.
#[derive(Debug, Clone)]
pub struct SeriesPrices {
    pub s: GridFunction,
    pub sigma: GridFunction,
    pub alpha: Source,
}

/// Expands the price system to order `order` in `a`.
pub fn impact_expansion(market: &MarketSpec, order: usize) -> Result<ImpactSeries> {
    let grid = *market.grid();
    let spec = market.bsde_spec()?;
    let system = expansion(&spec, order + 1, None, Region::Core)?;
    let scheme = market.scheme()?;
    let n = market.assets();
    let nx = grid.space.nodes();
    let (gl, gr) = market.demand().intervals(&grid)?;
    let split = |z: &GridFunction| -> (GridFunction, GridFunction) {
        let parts: Vec<GridFunction> = (1..=n).map(|c| z.component(c)).collect();
        let refs: Vec<&GridFunction> = parts.iter().collect();
        (z.component(0), GridFunction::stack(&refs).expect("components share a shape"))
    };
    let parts: Vec<(GridFunction, GridFunction)> = system.zeta.iter().map(split).collect();
    let mut prices = vec![split(&system.y[0]).1];
    let zero = vec![0.0; nx * n];
    let nt = grid.time.steps();
    for k in 1..=order {
        // -Σ_{l+m=k+1} ζ_2^l (ζ_1^m + ζ_2^m·γ)
        let mut left = GridFunction::zeros(nt, nx, n);
        let mut right = GridFunction::zeros(nt, nx, n);
        for l in 1..=k {
            let m = k + 1 - l;
            let (e_m, t_m) = &parts[m - 1];
            let (_, t_l) = &parts[l - 1];
            for i in 0..nt {
                for j in 0..nx {
                    let lm = e_m.get(i, j, 0) + dot(t_m.at(i, j), gl.at(i, j));
                    let rm = e_m.get(i + 1, j, 0) + dot(t_m.at(i + 1, j), gr.at(i, j));
                    for c in 0..n {
                        left.at_mut(i, j)[c] -= t_l.get(i, j, c) * lm;
                        right.at_mut(i, j)[c] -= t_l.get(i + 1, j, c) * rm;
                    }
                }
            }
        }
        prices.push(scheme.backward_accumulate(&Source::Intervals { left, right }, &zero)?);
    }
    let sigma = parts.iter().map(|(_, t)| t.clone()).collect();
    let alpha = parts[..order]
        .iter()
        .map(|(e, t)| {
            let mut left = GridFunction::zeros(nt, nx, 1);
            let mut right = GridFunction::zeros(nt, nx, 1);
            for i in 0..nt {
                for j in 0..nx {
                    left.set(i, j, 0, e.get(i, j, 0) + dot(t.at(i, j), gl.at(i, j)));
                    right.set(i, j, 0, e.get(i + 1, j, 0) + dot(t.at(i + 1, j), gr.at(i, j)));
                }
            }
            Source::Intervals { left, right }
        })
        .collect();
    let v = check_viability_bound(&market.with_risk_aversion(1.0)?, None, None)?;
    let rho = (v.product > 0.0).then(|| v.threshold / v.product);
    Ok(ImpactSeries {
        system,
        prices,
        sigma,
        alpha,
        rho,
    })
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl ImpactSeries {
    pub fn order(&self) -> usize {
        self.prices.len() - 1
    }

    /// `S^(k)` read off the system expansion as `Y_2^(k+1)`.
    pub fn price_from_system(&self, k: usize) -> GridFunction {
        let y = &self.system.y[k];
        let parts: Vec<GridFunction> = (1..y.dim()).map(|c| y.component(c)).collect();
        let refs: Vec<&GridFunction> = parts.iter().collect();
        GridFunction::stack(&refs).expect("components share a shape")
    }

    /// `Σ_{k≤K} S^(k) a^k`, `Σ_{k≤K} σ^(k) a^k` and `Σ_{1≤k≤K} α^(k) a^k`.
    pub fn evaluate(&self, a: f64, order: usize) -> Result<SeriesPrices> {
        if order > self.order() {
            return Err(invalid(format!("order {order} exceeds the stored order {}", self.order())));
        }
        let mut s = self.prices[0].clone();
        let mut sigma = self.sigma[0].clone();
        let Source::Intervals { left, right } = &self.alpha[0] else {
            unreachable!("coefficients are interval based");
        };
        let mut al = left.scaled(0.0);
        let mut ar = right.scaled(0.0);
        let mut p = 1.0;
        for k in 1..=order {
            p *= a;
            s.axpy(p, &self.prices[k])?;
            sigma.axpy(p, &self.sigma[k])?;
            let Source::Intervals { left, right } = &self.alpha[k - 1] else {
                unreachable!("coefficients are interval based");
            };
            al.axpy(p, left)?;
            ar.axpy(p, right)?;
        }
        Ok(SeriesPrices {
            s,
            sigma,
            alpha: Source::Intervals { left: al, right: ar },
        })
    }
}

/// First-order price correction `-E_t ∫_t^T σ_0 (σ_0·γ) ds`.
pub fn leading_term(market: &MarketSpec) -> Result<GridFunction> {
    let grid = *market.grid();
    let scheme = market.scheme()?;
    let n = market.assets();
    let nx = grid.space.nodes();
    let nt = grid.time.steps();
    let sigma0 = scheme.gradient_x(&scheme.conditional_expectation(market.dividend())?);
    let (gl, gr) = market.demand().intervals(&grid)?;
    let mut left = GridFunction::zeros(nt, nx, n);
    let mut right = GridFunction::zeros(nt, nx, n);
    for i in 0..nt {
        for j in 0..nx {
            let l = dot(sigma0.at(i, j), gl.at(i, j));
            let r = dot(sigma0.at(i + 1, j), gr.at(i, j));
            for c in 0..n {
                left.set(i, j, c, -sigma0.get(i, j, c) * l);
                right.set(i, j, c, -sigma0.get(i + 1, j, c) * r);
            }
        }
    }
    scheme.backward_accumulate(&Source::Intervals { left, right }, &vec![0.0; nx * n])
}

/// Relative deviations between the three rescaled markets `(bγ, a, Ψ)`, `(γ, ba, Ψ)` and `(γ, a, bΨ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityReport {
    pub b: f64,
    /// `(identity, relative sup deviation on the core region)`.
    pub deviations: Vec<(String, f64)>,
}

impl HomogeneityReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().map(|d| d.1).fold(0.0, f64::max)
    }
}

pub fn homogeneity_report(market: &MarketSpec, b: f64, settings: &PicardSettings) -> Result<HomogeneityReport> {
    if !(b.is_finite() && b > 0.0) {
        return Err(invalid(format!("scaling factor must be positive, got {b}")));
    }
    let grid = *market.grid();
    let by_demand = market.with_demand(market.demand().scaled(b))?;
    let by_aversion = market.with_risk_aversion(b * market.risk_aversion())?;
    let by_dividend = market.with_dividend(market.dividend().iter().map(|v| b * v).collect())?;
    let p1 = solve_prices(&by_demand, settings)?.prices;
    let p2 = solve_prices(&by_aversion, settings)?.prices;
    let p3 = solve_prices(&by_dividend, settings)?.prices;
    let rel = |x: &GridFunction, y: &GridFunction| -> Result<f64> {
        let d = x.sup_diff(y, &grid, Region::Core)?;
        let s = x.sup_abs(&grid, Region::Core).max(y.sup_abs(&grid, Region::Core));
        Ok(if s > 0.0 { d / s } else { d })
    };
    let alpha_rel = |x: &PriceSystem, y: &PriceSystem| -> Result<f64> {
        let (Source::Intervals { left: xl, right: xr }, Source::Intervals { left: yl, right: yr }) = (&x.alpha, &y.alpha)
        else {
            return Err(invalid("market price of risk must be interval based"));
        };
        let core = |g: &GridFunction| -> Result<f64> { Ok(g.sup_abs(&grid, Region::Core)) };
        let d = xl.sub(yl).and_then(|v| core(&v))?.max(xr.sub(yr).and_then(|v| core(&v))?);
        let s = core(xl)?.max(core(xr)?).max(core(yl)?).max(core(yr)?);
        Ok(if s > 0.0 { d / s } else { d })
    };
    let s3 = p3.s.scaled(1.0 / b);
    let sig3 = p3.sigma.scaled(1.0 / b);
    Ok(HomogeneityReport {
        b,
        deviations: vec![
            ("S(bγ,a,Ψ) = S(γ,ba,Ψ)".into(), rel(&p1.s, &p2.s)?),
            ("S(bγ,a,Ψ) = S(γ,a,bΨ)/b".into(), rel(&p1.s, &s3)?),
            ("σ(bγ,a,Ψ) = σ(γ,ba,Ψ)".into(), rel(&p1.sigma, &p2.sigma)?),
            ("σ(bγ,a,Ψ) = σ(γ,a,bΨ)/b".into(), rel(&p1.sigma, &sig3)?),
            ("α(bγ,a,Ψ) = α(γ,ba,Ψ)".into(), alpha_rel(&p1, &p2)?),
            ("α(bγ,a,Ψ) = α(γ,a,bΨ)".into(), alpha_rel(&p1, &p3)?),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::Demand;
    use crate::numerics::Grid;

    fn market(g: Grid, a: f64) -> MarketSpec {
        let d = Demand::Field(GridFunction::from_fn(&g, 1, |t, _, o| o[0] = 0.5 + t));
        MarketSpec::from_fn(g, |x, o| o[0] = x + 0.3 * x.sin(), d, a).unwrap()
    }

    #[test]
    fn price_formula_matches_system_coefficients() {
        let g = Grid::with_resolution(1.0, 50, 201).unwrap();
        let s = impact_expansion(&market(g, 0.3), 3).unwrap();
        for k in 0..=3 {
            let d = s.prices[k].sup_diff(&s.price_from_system(k), &g, Region::Full).unwrap();
            assert!(d < 1e-12, "order {k}: {d}");
        }
        let lt = leading_term(&market(g, 0.3)).unwrap();
        assert!(lt.sup_diff(&s.prices[1], &g, Region::Full).unwrap() < 1e-12);
        assert!(s.rho.is_some());
    }

    #[test]
    fn truncated_series_approaches_the_solution() {
        let g = Grid::with_resolution(1.0, 50, 201).unwrap();
        let a = 0.2;
        let m = market(g, a);
        let s = impact_expansion(&m, 4).unwrap();
        let exact = solve_prices(&m, &PicardSettings { tol: 1e-13, ..Default::default() }).unwrap().prices;
        let mut prev = f64::INFINITY;
        for k in 1..=4 {
            let e = s.evaluate(a, k).unwrap().s.sup_diff(&exact.s, &g, Region::Core).unwrap();
            assert!(e < prev, "order {k}: {e} vs {prev}");
            prev = e;
        }
        assert!(prev < 1e-4);
        assert!(s.evaluate(a, 5).is_err());
    }

    #[test]
    fn homogeneity_with_power_of_two() {
        let g = Grid::with_resolution(1.0, 40, 201).unwrap();
        let settings = PicardSettings {
            tol: 1e-12,
            ..Default::default()
        };
        let r = homogeneity_report(&market(g, 0.25), 2.0, &settings).unwrap();
        assert_eq!(r.deviations.len(), 6);
        assert!(r.max_deviation() < 1e-8, "{:?}", r.deviations);
    }
}

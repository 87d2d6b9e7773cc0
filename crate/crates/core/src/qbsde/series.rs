use serde::Serialize;

use crate::bmo::{hbmo_norm, BmoConstants, SupNorm};
use crate::error::{invalid, Result};
use crate::numerics::{GridFunction, Region, Source};

use super::driver::{bilinear_source, BilinearDriver};
use super::{finish, lift_terminal, BsdeSpec, Solution};

/// Coefficients `(Y^(k), ζ^(k))`, `k = 1..=K`, of the expansion in `a`.
#[derive(Debug, Clone)]
pub struct ExpansionSeries {
    spec: BsdeSpec,
    pub y: Vec<GridFunction>,
    pub zeta: Vec<GridFunction>,
    /// `‖ζ^(k)‖_Hbmo` over `region`.
    pub coeff_norms: Vec<SupNorm>,
    pub region: Region,
    pub constants: BmoConstants,
    /// `‖L‖_bmo` over `region`.
    pub lnorm: f64,
    /// `1 / (8 κ Θ ‖L‖)`; absent for a deterministic terminal value.
    pub rho: Option<f64>,
}

/// Partial sums `Σ_{k≤K} ‖ζ^(k)‖ ρ^k` against `1 / (4 κ Θ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSumCheck {
    pub partial_sums: Vec<f64>,
    pub bound: f64,
    pub holds: bool,
}

/// A truncated sum with its remainder estimate.
#[derive(Debug, Clone)]
pub struct EvaluatedSeries {
    pub solution: Solution,
    /// Geometric estimate of `‖Σ_{k>K} ζ^(k) a^k‖_Hbmo`; infinite when the coefficients do not decay.
    pub tail_bound: f64,
    /// Whether `|a| < ρ`; `None` when `ρ` is undefined.
    pub inside_radius: Option<bool>,
}

/// Expansion of the solution in powers of `a` up to order `order`.
///
/// `kappa` defaults to 1 and the resulting radius is then only heuristic.
pub fn expansion(spec: &BsdeSpec, order: usize, kappa: Option<f64>, region: Region) -> Result<ExpansionSeries> {
    if order < 1 {
        return Err(invalid("expansion order must be at least 1"));
    }
    let driver = spec
        .driver()
        .as_bilinear()
        .ok_or_else(|| invalid("the expansion requires a bilinear driver"))?;
    let scheme = spec.scheme()?;
    let grid = *spec.grid();
    let n = spec.dim();
    let nx = grid.space.nodes();
    let (y1, z1) = lift_terminal(spec)?;
    let mut y = vec![y1];
    let mut zeta = vec![z1];
    let zero = vec![0.0; nx * n];
    for k in 2..=order {
        let src = coefficient_source(driver, spec, &zeta, k)?;
        let u = scheme.backward_accumulate(&src, &zero)?;
        zeta.push(scheme.gradient_x(&u));
        y.push(u);
    }
    let coeff_norms = zeta
        .iter()
        .map(|z| hbmo_norm(&scheme, z, region))
        .collect::<Result<Vec<_>>>()?;
    let theta = driver.theta();
    let constants = if theta > 0.0 {
        match kappa {
            Some(k) => BmoConstants::with_kappa(k, theta)?,
            None => BmoConstants::new(theta)?,
        }
    } else {
        // A zero driver has no radius constraint; keep a placeholder bound.
        BmoConstants {
            kappa: kappa.unwrap_or(crate::bmo::DEFAULT_KAPPA),
            theta: 0.0,
            kappa_defaulted: kappa.is_none(),
        }
    };
    let lnorm = coeff_norms[0].value;
    let rho = if theta > 0.0 && lnorm > 0.0 {
        Some(constants.radius(lnorm)?)
    } else {
        None
    };
    Ok(ExpansionSeries {
        spec: spec.clone(),
        y,
        zeta,
        coeff_norms,
        region,
        constants,
        lnorm,
        rho,
    })
}

/// `Σ_{l+m=k} f̃(ζ^(l), ζ^(m))`, pairing `(l, m)` with `(m, l)`.
fn coefficient_source(
    driver: &BilinearDriver,
    spec: &BsdeSpec,
    zeta: &[GridFunction],
    k: usize,
) -> Result<Source> {
    let grid = spec.grid();
    let mut total: Option<(GridFunction, GridFunction)> = None;
    for l in 1..=k / 2 {
        let m = k - l;
        let Source::Intervals { left, right } = bilinear_source(driver, grid, &zeta[l - 1], &zeta[m - 1])? else {
            unreachable!("bilinear sources are interval based");
        };
        let w = if l == m { 1.0 } else { 2.0 };
        match &mut total {
            None => total = Some((left.scaled(w), right.scaled(w))),
            Some((tl, tr)) => {
                tl.axpy(w, &left)?;
                tr.axpy(w, &right)?;
            }
        }
    }
    let (left, right) = total.expect("k >= 2 has at least one pair");
    Ok(Source::Intervals { left, right })
}

impl ExpansionSeries {
    pub fn spec(&self) -> &BsdeSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.zeta.len()
    }

    /// `(Σ_{k≤K} Y^(k) a^k, Σ_{k≤K} ζ^(k) a^k)`.
    pub fn partial_sum(&self, a: f64, order: usize) -> (GridFunction, GridFunction) {
        let order = order.min(self.order());
        let mut y = GridFunction::zeros(self.y[0].slices(), self.y[0].nx(), self.y[0].dim());
        let mut z = y.clone();
        let mut p = 1.0;
        for k in 0..order {
            p *= a;
            y.axpy(p, &self.y[k]).expect("coefficients share a shape");
            z.axpy(p, &self.zeta[k]).expect("coefficients share a shape");
        }
        (y, z)
    }

    /// Sums all stored orders at `a` and attaches a geometric remainder estimate.
    pub fn evaluate(&self, a: f64) -> Result<EvaluatedSeries> {
        let scheme = self.spec.scheme()?;
        let (y, z) = self.partial_sum(a, self.order());
        let solution = finish(&self.spec, &scheme, y, z, a, 0, Vec::new())?;
        Ok(EvaluatedSeries {
            solution,
            tail_bound: self.tail_bound(a),
            inside_radius: self.rho.map(|r| a.abs() < r),
        })
    }

    /// `‖ζ^(K)‖ |a|^K q / (1 - q)` with `q = |a|` times the largest recent coefficient ratio.
    pub fn tail_bound(&self, a: f64) -> f64 {
        let norms: Vec<f64> = self.coeff_norms.iter().map(|s| s.value).collect();
        let k = norms.len();
        let last = norms[k - 1];
        if last == 0.0 || a == 0.0 {
            return 0.0;
        }
        let ratio = norms[k.saturating_sub(4)..]
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .reduce(f64::max);
        let Some(ratio) = ratio else {
            return f64::INFINITY;
        };
        let q = a.abs() * ratio;
        if q >= 1.0 {
            return f64::INFINITY;
        }
        last * a.abs().powi(k as i32) * q / (1.0 - q)
    }

    pub fn partial_sum_check(&self) -> Option<PartialSumCheck> {
        let rho = self.rho?;
        let mut acc = 0.0;
        let mut p = 1.0;
        let partial_sums: Vec<f64> = self
            .coeff_norms
            .iter()
            .map(|s| {
                p *= rho;
                acc += s.value * p;
                acc
            })
            .collect();
        let bound = self.constants.partial_sum_bound();
        Some(PartialSumCheck {
            holds: partial_sums.iter().all(|&s| s <= bound),
            partial_sums,
            bound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Grid;

    #[test]
    fn linear_terminal_series_terminates() {
        let g = Grid::with_resolution(1.0, 100, 401).unwrap();
        let c = 2.0;
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(c).unwrap(), |x, o| o[0] = x).unwrap();
        let s = expansion(&spec, 4, None, Region::Core).unwrap();
        for k in 1..4 {
            let e = s.zeta[k].sup_abs(&g, Region::Core);
            assert!(e < 1e-8, "order {} {e}", k + 1);
        }
        for i in 0..=100 {
            let t = g.time.t(i);
            for j in g.indices(Region::Core) {
                assert!((s.y[1].get(i, j, 0) - c * (1.0 - t) / 2.0).abs() < 1e-10);
                assert!(s.y[2].get(i, j, 0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_terminal_and_zero_driver() {
        let g = Grid::with_resolution(1.0, 20, 101).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |_, o| o[0] = 0.0).unwrap();
        let s = expansion(&spec, 3, None, Region::Core).unwrap();
        assert!(s.y.iter().chain(&s.zeta).all(|f| f.values().iter().all(|&v| v == 0.0)));
        assert!(s.rho.is_none());
        let spec = BsdeSpec::from_fn(g, BilinearDriver::zero(1).unwrap(), |x, o| o[0] = x.sin()).unwrap();
        let s = expansion(&spec, 3, None, Region::Core).unwrap();
        assert!(s.zeta[1..].iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_order_zero() {
        let g = Grid::with_resolution(1.0, 4, 11).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x).unwrap();
        assert!(expansion(&spec, 0, None, Region::Core).is_err());
    }
}

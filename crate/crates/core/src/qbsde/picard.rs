use serde::{Deserialize, Serialize};

use crate::error::{invalid, DivergenceReport, Error, Result};
use crate::numerics::{GridFunction, Region};

use super::driver::{check_field, driver_source};
use super::{finish, lift_terminal, BsdeSpec, Solution};

/// Iterate norms above this are treated as a blow-up.
const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Region on which the stopping rule measures changes.
    pub region: Region,
    /// Initial iterate; `a ζ^(1)` when absent.
    #[serde(skip)]
    pub start: Option<GridFunction>,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            region: Region::Core,
            start: None,
        }
    }
}

/// Fixed point of `ζ ↦ ∂_x E_t[aΞ + ∫_t^T f(s, ζ_s) ds]`.
pub fn picard_solve(spec: &BsdeSpec, a: f64, settings: &PicardSettings) -> Result<Solution> {
    if !(settings.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {}", settings.tol)));
    }
    if !a.is_finite() {
        return Err(invalid(format!("scale must be finite, got {a}")));
    }
    let grid = *spec.grid();
    let scheme = spec.scheme()?;
    let n = spec.dim();
    let terminal: Vec<f64> = spec.terminal().iter().map(|h| a * h).collect();
    let mut zeta = match &settings.start {
        Some(z) => {
            check_field(&grid, z, n, "initial iterate")?;
            z.clone()
        }
        None => lift_terminal(spec)?.1.scaled(a),
    };
    let mut changes = Vec::new();
    let mut norms = Vec::new();
    for it in 1..=settings.max_iter.max(1) {
        let src = driver_source(spec.driver(), &grid, &zeta)?;
        let y = scheme.backward_accumulate(&src, &terminal);
        let y = match y {
            Ok(y) => y,
            Err(Error::NonFinite { .. }) => {
                return Err(diverged(spec, a, it, changes, norms));
            }
            Err(e) => return Err(e),
        };
        let next = scheme.gradient_x(&y);
        let change = next.sup_diff(&zeta, &grid, settings.region)?;
        let norm = next.sup_abs(&grid, settings.region);
        changes.push(change);
        norms.push(norm);
        zeta = next;
        if !change.is_finite() || norm > BLOW_UP {
            return Err(diverged(spec, a, it, changes, norms));
        }
        if change < settings.tol {
            let src = driver_source(spec.driver(), &grid, &zeta)?;
            let y = scheme.backward_accumulate(&src, &terminal)?;
            return finish(spec, &scheme, y, zeta, a, it, changes);
        }
    }
    Err(diverged(spec, a, settings.max_iter, changes, norms))
}

fn diverged(spec: &BsdeSpec, a: f64, iterations: usize, changes: Vec<f64>, norms: Vec<f64>) -> Error {
    let lnorm = spec
        .terminal_norm(Region::Core)
        .map(|s| s.value)
        .unwrap_or(f64::NAN);
    Error::Divergence(Box::new(DivergenceReport {
        iterations,
        changes,
        iterate_norms: norms,
        smallness_product: a.abs() * lnorm,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{quad_expect, Grid};
    use crate::qbsde::{BilinearDriver, QuadraticDriver};

    /// `(1/c) log E[exp(c a h(x + √(T-t) Z))]`.
    fn cole_hopf(c: f64, a: f64, h: impl Fn(f64) -> f64, t: f64, x: f64) -> f64 {
        quad_expect(|y| (c * a * h(y)).exp(), x, 1.0 - t).unwrap().ln() / c
    }

    #[test]
    fn zero_scale_gives_zero_solution() {
        let g = Grid::with_resolution(1.0, 20, 101).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x * x).unwrap();
        let s = picard_solve(&spec, 0.0, &PicardSettings::default()).unwrap();
        assert_eq!(s.iterations, 1);
        assert!(s.y.values().iter().all(|&v| v == 0.0));
        assert!(s.zeta.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_terminal_matches_closed_form() {
        let g = Grid::with_resolution(1.0, 200, 401).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x).unwrap();
        let s = picard_solve(&spec, 0.2, &PicardSettings::default()).unwrap();
        let mut err = 0.0f64;
        for i in 0..=200 {
            let t = g.time.t(i);
            for j in g.indices(Region::Core) {
                let x = g.space.x(j);
                err = err.max((s.y.get(i, j, 0) - cole_hopf(1.0, 0.2, |y| y, t, x)).abs());
            }
        }
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn quadratic_driver_path_agrees_with_bilinear() {
        let g = Grid::with_resolution(1.0, 50, 201).unwrap();
        let h = |x: f64, o: &mut [f64]| o[0] = (x).sin();
        let b = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), h).unwrap();
        let q = QuadraticDriver::new(1, 0.5, |_, _, z, o| o[0] = 0.5 * z[0] * z[0]).unwrap();
        let qspec = BsdeSpec::from_fn(g, q, h).unwrap();
        let s1 = picard_solve(&b, 0.3, &PicardSettings::default()).unwrap();
        let s2 = picard_solve(&qspec, 0.3, &PicardSettings::default()).unwrap();
        assert!(s1.y.sup_diff(&s2.y, &g, Region::Full).unwrap() < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        let g = Grid::with_resolution(1.0, 50, 201).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x * x).unwrap();
        let settings = PicardSettings {
            max_iter: 60,
            ..Default::default()
        };
        match picard_solve(&spec, 2.0, &settings) {
            Err(Error::Divergence(r)) => {
                assert!(r.smallness_product > 1.0);
                assert_eq!(r.changes.len(), r.iterations);
            }
            other => panic!("expected divergence, got {:?}", other.map(|s| s.iterations)),
        }
    }
}

//! BMO norms of integrands, terminal conditions and semimartingales on the grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction, PathBundle, Region, Scheme, Source};

pub const DEFAULT_KAPPA: f64 = 1.0;

/// Constants entering the convergence radius `ρ = 1 / (8 κ Θ ‖L‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmoConstants {
    pub kappa: f64,
    pub theta: f64,
    /// True when `kappa` was not supplied and the default was used.
    pub kappa_defaulted: bool,
}

impl BmoConstants {
    pub fn new(theta: f64) -> Result<Self> {
        let mut c = Self::with_kappa(DEFAULT_KAPPA, theta)?;
        c.kappa_defaulted = true;
        Ok(c)
    }

    pub fn with_kappa(kappa: f64, theta: f64) -> Result<Self> {
        if !(kappa >= 1.0 && kappa.is_finite()) {
            return Err(invalid(format!("kappa must be >= 1, got {kappa}")));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(invalid(format!("driver bound must be positive, got {theta}")));
        }
        Ok(Self {
            kappa,
            theta,
            kappa_defaulted: false,
        })
    }

    pub fn radius(&self, lnorm: f64) -> Result<f64> {
        radius(self, lnorm)
    }

    /// Right-hand side `1 / (4 κ Θ)` of the partial-sum bound on series coefficients.
    pub fn partial_sum_bound(&self) -> f64 {
        1.0 / (4.0 * self.kappa * self.theta)
    }
}

/// `ρ = 1 / (8 κ Θ ‖L‖)`; undefined for a deterministic terminal value.
pub fn radius(constants: &BmoConstants, lnorm: f64) -> Result<f64> {
    if !(lnorm > 0.0) {
        return Err(invalid(format!(
            "radius undefined for terminal norm {lnorm}; the solution is linear in a"
        )));
    }
    Ok(1.0 / (8.0 * constants.kappa * constants.theta * lnorm))
}

/// Grid supremum together with the node where it is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupNorm {
    pub value: f64,
    pub t_argmax: f64,
    pub x_argmax: f64,
}

impl SupNorm {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            t_argmax: 0.0,
            x_argmax: 0.0,
        }
    }
}

/// Supremum of `|u|` over `region` for a scalar field on the time nodes.
/// Ties resolve to the earliest slice, then the leftmost node.
pub fn sup_with_argmax(grid: &Grid, u: &GridFunction, region: Region) -> SupNorm {
    let mut best = SupNorm::zero();
    let mut found = false;
    for i in 0..u.slices() {
        for j in grid.indices(region) {
            let v = u.at(i, j).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !found || v > best.value {
                found = true;
                best = SupNorm {
                    value: v,
                    t_argmax: grid.time.t(i),
                    x_argmax: grid.space.x(j),
                };
            }
        }
    }
    best
}

/// `E_t[∫_t^T |ζ_s|² ds]` on every node.
pub fn conditional_energy(scheme: &Scheme, zeta: &Source) -> Result<GridFunction> {
    let nx = scheme.grid().space.nodes();
    let sq = zeta.norm(true);
    scheme.backward_accumulate(&sq, &vec![0.0; nx])
}

/// `sup_{t,x} (E_t ∫_t^T |ζ|² ds)^{1/2}` for an integrand given on the time nodes.
pub fn hbmo_norm(scheme: &Scheme, zeta: &GridFunction, region: Region) -> Result<SupNorm> {
    hbmo_norm_source(scheme, &Source::Nodes(zeta.clone()), region)
}

pub fn hbmo_norm_source(scheme: &Scheme, zeta: &Source, region: Region) -> Result<SupNorm> {
    if matches!(zeta, Source::Zero) {
        return Ok(SupNorm::zero());
    }
    let e = conditional_energy(scheme, zeta)?;
    // Round-off can push a vanishing energy slightly below zero.
    let r = e.map(|v| v.max(0.0).sqrt());
    Ok(sup_with_argmax(scheme.grid(), &r, region))
}

/// BMO norm of `L_t = E_t[h(B_T)] - E[h(B_T)]`, given `h` on the spatial nodes.
pub fn terminal_bmo_norm(scheme: &Scheme, terminal: &[f64], region: Region) -> Result<SupNorm> {
    let y = scheme.conditional_expectation(terminal)?;
    hbmo_norm(scheme, &scheme.gradient_x(&y), region)
}

/// Martingale / finite-variation split `dY = drift dt + ζ dB` of a grid process.
#[derive(Debug, Clone, Copy)]
pub struct Decomposition<'a> {
    pub zeta: &'a GridFunction,
    pub drift: &'a Source,
}

/// Path values of `(∫_0^T |ζ|² ds)^{1/2}` via trapezoid sums at grid times.
pub fn quadratic_variation_paths(grid: &Grid, zeta: &Source, paths: &PathBundle) -> Result<Vec<f64>> {
    path_integral(grid, &zeta.norm(true), paths).map(|v| v.into_iter().map(|q| q.max(0.0).sqrt()).collect())
}

/// Path values of `∫_0^T |s| ds` via trapezoid sums at grid times.
pub fn total_variation_paths(grid: &Grid, rate: &Source, paths: &PathBundle) -> Result<Vec<f64>> {
    path_integral(grid, &rate.norm(false), paths)
}

fn check_paths(grid: &Grid, paths: &PathBundle) -> Result<()> {
    if paths.nsteps() != grid.time.steps() || (paths.dt() - grid.dt()).abs() > 1e-12 * grid.dt() {
        return Err(Error::DimensionMismatch {
            what: "path bundle time steps",
            expected: grid.time.steps(),
            got: paths.nsteps(),
        });
    }
    Ok(())
}

/// `∫_0^T s(t, B_t) dt` along every path for a scalar, nonnegative rate.
fn path_integral(grid: &Grid, rate: &Source, paths: &PathBundle) -> Result<Vec<f64>> {
    check_paths(grid, paths)?;
    let Some((left, right)) = rate.as_intervals(grid, Some(1)) else {
        return Ok(vec![0.0; paths.npaths()]);
    };
    let dt = grid.dt();
    Ok(paths.map_paths(|b| {
        let mut acc = 0.0;
        for i in 0..grid.time.steps() {
            let l = left.interpolate_scalar(grid, i, b[i]);
            let r = right.interpolate_scalar(grid, i, b[i + 1]);
            acc += 0.5 * dt * (l + r);
        }
        acc
    }))
}

/// `(E|X|^p)^{1/p}` of a sample, summed in index order.
pub fn lp_norm(values: &[f64], p: f64) -> f64 {
    let n = values.len() as f64;
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / n).powf(1.0 / p)
}

/// `H^p` norm `(E[(∫|ζ|² ds)^{p/2}])^{1/p}` estimated over `paths`.
pub fn hp_norm(grid: &Grid, zeta: &Source, p: f64, paths: &PathBundle) -> Result<f64> {
    Ok(lp_norm(&quadratic_variation_paths(grid, zeta, paths)?, p))
}

/// `L^p` norm of `g(B_T)` for `g` given on the spatial nodes.
pub fn terminal_lp_norm(grid: &Grid, g: &[f64], p: f64, paths: &PathBundle) -> Result<f64> {
    check_paths(grid, paths)?;
    let f = GridFunction::from_vec(1, grid.space.nodes(), 1, g.to_vec())?;
    let vals: Vec<f64> = paths
        .terminal_values()
        .into_iter()
        .map(|x| f.interpolate_scalar(grid, 0, x))
        .collect();
    Ok(lp_norm(&vals, p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRow {
    pub quantity: String,
    pub value: f64,
    pub t_argmax: Option<f64>,
    pub x_argmax: Option<f64>,
}

/// Semimartingale norms of a grid process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub y0: f64,
    pub hbmo: SupNorm,
    /// `sup E_t ∫_t^T |drift| ds`.
    pub variation_bmo: SupNorm,
    pub sbmo: f64,
    /// `(p, S^p norm, martingale part, variation part)`.
    pub sp: Vec<(f64, f64, f64, f64)>,
}

impl NormReport {
    pub fn rows(&self) -> Vec<NormRow> {
        let sup = |q: &str, s: &SupNorm| NormRow {
            quantity: q.to_string(),
            value: s.value,
            t_argmax: Some(s.t_argmax),
            x_argmax: Some(s.x_argmax),
        };
        let plain = |q: String, v: f64| NormRow {
            quantity: q,
            value: v,
            t_argmax: None,
            x_argmax: None,
        };
        let mut rows = vec![
            plain("y0".into(), self.y0),
            sup("hbmo", &self.hbmo),
            sup("variation_bmo", &self.variation_bmo),
            NormRow {
                quantity: "sbmo".into(),
                value: self.sbmo,
                t_argmax: Some(self.hbmo.t_argmax),
                x_argmax: Some(self.hbmo.x_argmax),
            },
        ];
        for &(p, total, m, a) in &self.sp {
            rows.push(plain(format!("sp[{p}]"), total));
            rows.push(plain(format!("sp[{p}].martingale"), m));
            rows.push(plain(format!("sp[{p}].variation"), a));
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        for row in self.rows() {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `|Y_0| + ‖·‖` norms of `Y` with the supplied split, `S^p` estimated over `paths`.
pub fn semimartingale_norms(
    scheme: &Scheme,
    y: &GridFunction,
    split: Option<Decomposition<'_>>,
    ps: &[f64],
    paths: &PathBundle,
    region: Region,
) -> Result<NormReport> {
    let split = split.ok_or_else(|| invalid("semimartingale norms need a martingale/drift decomposition"))?;
    if let Some(&p) = ps.iter().find(|&&p| !(p > 1.0)) {
        return Err(invalid(format!("S^p exponent must exceed 1, got {p}")));
    }
    let grid = scheme.grid();
    let c = grid.space.center();
    let y0 = y.at(0, c).iter().map(|v| v * v).sum::<f64>().sqrt();
    let zeta = Source::Nodes(split.zeta.clone());
    let hbmo = hbmo_norm_source(scheme, &zeta, region)?;
    let variation_bmo = match split.drift {
        Source::Zero => SupNorm::zero(),
        d => {
            let nx = grid.space.nodes();
            let e = scheme.backward_accumulate(&d.norm(false), &vec![0.0; nx])?;
            sup_with_argmax(grid, &e, region)
        }
    };
    let qv = quadratic_variation_paths(grid, &zeta, paths)?;
    let tv = total_variation_paths(grid, split.drift, paths)?;
    let sp = ps
        .iter()
        .map(|&p| {
            let m = lp_norm(&qv, p);
            let a = lp_norm(&tv, p);
            (p, y0 + m + a, m, a)
        })
        .collect();
    Ok(NormReport {
        y0,
        hbmo,
        variation_bmo,
        sbmo: y0 + hbmo.value + variation_bmo.value,
        sp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{quad_expect, sample_paths};

    fn scheme(nt: usize, nx: usize) -> Scheme {
        Scheme::new(Grid::with_resolution(1.0, nt, nx).unwrap()).unwrap()
    }

    #[test]
    fn radius_arithmetic() {
        let c = BmoConstants::new(0.5).unwrap();
        assert!(c.kappa_defaulted);
        assert_eq!(c.radius(1.0).unwrap(), 0.25);
        assert_eq!(c.radius(2.0).unwrap(), 0.125);
        let d = BmoConstants::new(1.0).unwrap();
        assert_eq!(d.radius(1.0).unwrap(), 0.5 * c.radius(1.0).unwrap());
        assert!(c.radius(0.0).is_err());
        assert!(BmoConstants::with_kappa(0.5, 1.0).is_err());
    }

    #[test]
    fn constant_integrand() {
        let s = scheme(40, 101);
        let g = *s.grid();
        let z = GridFunction::constant(&g, &[0.7]);
        let n = hbmo_norm(&s, &z, Region::Full).unwrap();
        assert!((n.value - 0.7).abs() < 1e-13);
        assert_eq!(n.t_argmax, 0.0);
        let zero = GridFunction::on_nodes(&g, 1);
        assert_eq!(hbmo_norm(&s, &zero, Region::Full).unwrap().value, 0.0);
    }

    #[test]
    fn linear_integrand_matches_closed_form_on_core() {
        let s = scheme(100, 401);
        let g = *s.grid();
        let z = GridFunction::from_fn(&g, 1, |_, x, o| o[0] = x);
        let e = conditional_energy(&s, &Source::Nodes(z)).unwrap();
        for i in (0..=100).step_by(10) {
            let t = g.time.t(i);
            for j in g.indices(Region::Core).step_by(20) {
                let x = g.space.x(j);
                let exact = x * x * (1.0 - t) + 0.5 * (1.0 - t) * (1.0 - t);
                // Independent check of the closed form by quadrature in s.
                let n = 200;
                let mut q = 0.0;
                for k in 0..n {
                    let s = t + (k as f64 + 0.5) * (1.0 - t) / n as f64;
                    q += quad_expect(|y| y * y, x, s - t).unwrap() * (1.0 - t) / n as f64;
                }
                assert!((q - exact).abs() < 1e-4 * (1.0 + exact));
                assert!((e.get(i, j, 0) - exact).abs() < 1e-6 * (1.0 + exact), "{t} {x}");
            }
        }
    }

    #[test]
    fn terminal_norms() {
        let s = scheme(100, 401);
        let x: Vec<f64> = s.grid().space.points().collect();
        let n = terminal_bmo_norm(&s, &x, Region::Full).unwrap();
        assert!((n.value - 1.0).abs() < 1e-10);
        let shifted: Vec<f64> = x.iter().map(|v| v + 4.0).collect();
        let m = terminal_bmo_norm(&s, &shifted, Region::Full).unwrap();
        assert!((m.value - n.value).abs() < 1e-12);
        let c = vec![2.0; x.len()];
        assert_eq!(terminal_bmo_norm(&s, &c, Region::Full).unwrap().value, 0.0);
    }

    #[test]
    fn brownian_motion_norms() {
        let s = scheme(50, 201);
        let g = *s.grid();
        let y = GridFunction::from_fn(&g, 1, |_, x, o| o[0] = x);
        let z = GridFunction::constant(&g, &[1.0]);
        let paths = sample_paths(3, 2000, &g.time).unwrap();
        let split = Decomposition {
            zeta: &z,
            drift: &Source::Zero,
        };
        let r = semimartingale_norms(&s, &y, Some(split), &[2.0], &paths, Region::Core).unwrap();
        assert!((r.sp[0].2 - 1.0).abs() < 1e-12);
        assert_eq!(r.sp[0].3, 0.0);
        assert!(semimartingale_norms(&s, &y, None, &[2.0], &paths, Region::Core).is_err());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quantity,value,t_argmax,x_argmax\n"));
    }

    #[test]
    fn deterministic_drift() {
        let s = scheme(50, 201);
        let g = *s.grid();
        let y = GridFunction::from_fn(&g, 1, |t, _, o| o[0] = t);
        let z = GridFunction::on_nodes(&g, 1);
        let drift = Source::Nodes(GridFunction::constant(&g, &[1.0]));
        let paths = sample_paths(3, 100, &g.time).unwrap();
        let r = semimartingale_norms(
            &s,
            &y,
            Some(Decomposition { zeta: &z, drift: &drift }),
            &[2.0],
            &paths,
            Region::Full,
        )
        .unwrap();
        assert!((r.sp[0].3 - 1.0).abs() < 1e-12);
        assert!((r.variation_bmo.value - 1.0).abs() < 1e-12);
    }
}

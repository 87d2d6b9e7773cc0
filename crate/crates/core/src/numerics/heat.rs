use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::field::{GridFunction, Source};
use super::grid::{Grid, SpaceGrid};

/// Kernel truncation in standard deviations.
pub const TRUNCATION: f64 = 8.0;

/// Sampled Gaussian kernel on a uniform lattice.
///
/// The sampling width is tuned by bisection so that the discrete second moment
/// equals the requested variance, which makes one step exact on quadratics.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernel {
    variance: f64,
    dx: f64,
    /// `weights[k - 1]` multiplies `u(x ± k dx)`.
    weights: Vec<f64>,
}

impl HeatKernel {
    pub fn new(variance: f64, dx: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(invalid(format!("kernel variance must be >= 0, got {variance}")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(invalid(format!("lattice spacing must be positive, got {dx}")));
        }
        if variance == 0.0 {
            return Ok(Self {
                variance,
                dx,
                weights: Vec::new(),
            });
        }
        let target = variance / (dx * dx);
        let sigma = target.sqrt();
        let mut reach = (TRUNCATION * sigma).ceil().max(1.0) as usize;
        // A uniform kernel is the widest one of a given reach.
        while (reach * (reach + 1)) as f64 / 3.0 <= target {
            reach += 1;
        }
        let moment = |s: f64| -> (f64, Vec<f64>) {
            let raw: Vec<f64> = (1..=reach)
                .map(|k| (-((k * k) as f64) / (2.0 * s * s)).exp())
                .collect();
            let mass = 1.0 + 2.0 * raw.iter().sum::<f64>();
            let var = 2.0 * raw
                .iter()
                .enumerate()
                .map(|(i, w)| ((i + 1) * (i + 1)) as f64 * w)
                .sum::<f64>()
                / mass;
            (var, raw.into_iter().map(|w| w / mass).collect())
        };
        let (mut lo, mut hi) = (0.0, sigma.max(1.0));
        while moment(hi).0 < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if moment(mid).0 < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (var_lo, w_lo) = moment(lo);
        let (var_hi, w_hi) = moment(hi);
        let weights = if (var_lo - target).abs() <= (var_hi - target).abs() {
            w_lo
        } else {
            w_hi
        };
        Ok(Self {
            variance,
            dx,
            weights,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Number of lattice neighbours on each side.
    pub fn reach(&self) -> usize {
        self.weights.len()
    }

    /// Off-centre weights `w_1, ..., w_K`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Second moment of the discrete kernel in physical units.
    pub fn discrete_variance(&self) -> f64 {
        2.0 * self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| ((i + 1) * (i + 1)) as f64 * w)
            .sum::<f64>()
            * self.dx
            * self.dx
    }

    /// `out = K * u` for an interleaved `dim`-vector slice, with constant
    /// extrapolation past the edges.
    pub fn apply_into(&self, u: &[f64], dim: usize, out: &mut [f64]) {
        let nx = u.len() / dim;
        let last = nx - 1;
        for j in 0..nx {
            for c in 0..dim {
                let uj = u[j * dim + c];
                let mut acc = 0.0;
                for (k, w) in self.weights.iter().enumerate().rev() {
                    let k = k + 1;
                    let up = u[(j + k).min(last) * dim + c];
                    let dn = u[j.saturating_sub(k) * dim + c];
                    acc += w * ((up - uj) + (dn - uj));
                }
                out[j * dim + c] = uj + acc;
            }
        }
    }

    pub fn apply(&self, u: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, dim, &mut out);
        out
    }
}

/// One backward conditional-expectation step `v(x) = E[u(x + B_dt)]`.
pub fn heat_step(space: &SpaceGrid, u: &[f64], dim: usize, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    check_slice(u, dim, space.nodes(), "heat step input")?;
    Ok(HeatKernel::new(dt, space.dx())?.apply(u, dim))
}

fn check_slice(u: &[f64], dim: usize, nx: usize, what: &'static str) -> Result<()> {
    if dim == 0 || u.len() != nx * dim {
        return Err(Error::DimensionMismatch {
            what,
            expected: nx * dim.max(1),
            got: u.len(),
        });
    }
    if let Some(k) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what,
            slice: 0,
            node: k / dim,
            component: k % dim,
        });
    }
    Ok(())
}

/// Quadrature of the `ds` integral over one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// `dt * s(t_i)`.
    LeftPoint,
    /// `dt/2 * (s(t_i) + E_{t_i}[s(t_{i+1})])`.
    #[default]
    Trapezoid,
}

/// Backward conditional-expectation engine on a fixed grid.
#[derive(Debug, Clone)]
pub struct Scheme {
    grid: Grid,
    rule: TimeRule,
    kernel: HeatKernel,
}

impl Scheme {
    pub fn new(grid: Grid) -> Result<Self> {
        Self::with_rule(grid, TimeRule::default())
    }

    pub fn with_rule(grid: Grid, rule: TimeRule) -> Result<Self> {
        let kernel = HeatKernel::new(grid.dt(), grid.dx())?;
        Ok(Self { grid, rule, kernel })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rule(&self) -> TimeRule {
        self.rule
    }

    pub fn kernel(&self) -> &HeatKernel {
        &self.kernel
    }

    /// One grid step backwards.
    pub fn step(&self, u: &[f64], dim: usize) -> Vec<f64> {
        self.kernel.apply(u, dim)
    }

    /// Conditional expectation across `steps` grid steps.
    pub fn sweep(&self, u: &[f64], dim: usize, steps: usize) -> Vec<f64> {
        let mut cur = u.to_vec();
        let mut next = vec![0.0; u.len()];
        for _ in 0..steps {
            self.kernel.apply_into(&cur, dim, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// `u(t_i, x) = E[terminal(B_T) + ∫_{t_i}^T source ds | B_{t_i} = x]`.
    pub fn backward_accumulate(&self, source: &Source, terminal: &[f64]) -> Result<GridFunction> {
        let nx = self.grid.space.nodes();
        let dim = match source.dim() {
            Some(d) => d,
            None if nx > 0 && terminal.len() % nx == 0 => terminal.len() / nx,
            None => 0,
        };
        check_slice(terminal, dim, nx, "terminal slice")?;
        source.validate(&self.grid, dim)?;
        let nt = self.grid.time.steps();
        let dt = self.grid.dt();
        let mut out = GridFunction::on_nodes(&self.grid, dim);
        out.slice_mut(nt).copy_from_slice(terminal);
        let mut buf = vec![0.0; nx * dim];
        for i in (0..nt).rev() {
            let (head, tail) = out.values_mut().split_at_mut((i + 1) * nx * dim);
            let next = &tail[..nx * dim];
            let cur = &mut head[i * nx * dim..];
            match (self.rule, source.left(i), source.right(i)) {
                (_, None, _) | (_, _, None) => self.kernel.apply_into(next, dim, cur),
                (TimeRule::LeftPoint, Some(l), _) => {
                    self.kernel.apply_into(next, dim, cur);
                    for (c, s) in cur.iter_mut().zip(l) {
                        *c += dt * s;
                    }
                }
                (TimeRule::Trapezoid, Some(l), Some(r)) => {
                    for ((b, n), s) in buf.iter_mut().zip(next).zip(r) {
                        *b = n + 0.5 * dt * s;
                    }
                    self.kernel.apply_into(&buf, dim, cur);
                    for (c, s) in cur.iter_mut().zip(l) {
                        *c += 0.5 * dt * s;
                    }
                }
            }
        }
        out.check_finite("accumulated expectation")?;
        Ok(out)
    }

    /// `E_t[h(B_T)]` on the whole grid.
    pub fn conditional_expectation(&self, terminal: &[f64]) -> Result<GridFunction> {
        self.backward_accumulate(&Source::Zero, terminal)
    }

    /// Samples `h` at the spatial nodes as an interleaved slice.
    pub fn sample_terminal(&self, dim: usize, h: impl Fn(f64, &mut [f64])) -> Vec<f64> {
        let nx = self.grid.space.nodes();
        let mut out = vec![0.0; nx * dim];
        for j in 0..nx {
            h(self.grid.space.x(j), &mut out[j * dim..(j + 1) * dim]);
        }
        out
    }

    pub fn gradient_x(&self, u: &GridFunction) -> GridFunction {
        gradient_x(u, self.grid.dx())
    }
}

/// Spatial derivative of every slice: central differences inside, second
/// order one-sided differences at the two edge nodes.
pub fn gradient_x(u: &GridFunction, dx: f64) -> GridFunction {
    let mut out = GridFunction::zeros(u.slices(), u.nx(), u.dim());
    for i in 0..u.slices() {
        gradient_slice_into(u.slice(i), u.dim(), dx, out.slice_mut(i));
    }
    out
}

pub fn gradient_slice(u: &[f64], dim: usize, dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    gradient_slice_into(u, dim, dx, &mut out);
    out
}

fn gradient_slice_into(u: &[f64], dim: usize, dx: f64, out: &mut [f64]) {
    let nx = u.len() / dim;
    let at = |j: usize, c: usize| u[j * dim + c];
    for c in 0..dim {
        if nx < 3 {
            let g = (at(nx - 1, c) - at(0, c)) / (dx * (nx - 1).max(1) as f64);
            for j in 0..nx {
                out[j * dim + c] = g;
            }
            continue;
        }
        out[c] = (-3.0 * at(0, c) + 4.0 * at(1, c) - at(2, c)) / (2.0 * dx);
        for j in 1..nx - 1 {
            out[j * dim + c] = (at(j + 1, c) - at(j - 1, c)) / (2.0 * dx);
        }
        let l = nx - 1;
        out[l * dim + c] = (3.0 * at(l, c) - 4.0 * at(l - 1, c) + at(l - 2, c)) / (2.0 * dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SpaceGrid {
        SpaceGrid::new(12.0, 401).unwrap()
    }

    #[test]
    fn kernel_matches_requested_variance() {
        for &(var, dx) in &[(0.005, 0.06), (1e-4, 0.06), (0.3, 0.01), (2.0, 0.5)] {
            let k = HeatKernel::new(var, dx).unwrap();
            assert!((k.discrete_variance() - var).abs() <= 1e-14 * var.max(1.0), "{var} {dx}");
        }
    }

    #[test]
    fn constants_affine_and_quadratics() {
        let s = space();
        let dt = 0.01;
        let c = vec![3.0; s.nodes()];
        assert_eq!(heat_step(&s, &c, 1, dt).unwrap(), c);
        let x: Vec<f64> = s.points().collect();
        let v = heat_step(&s, &x, 1, dt).unwrap();
        let q: Vec<f64> = x.iter().map(|x| x * x).collect();
        let w = heat_step(&s, &q, 1, dt).unwrap();
        let k = HeatKernel::new(dt, s.dx()).unwrap().reach();
        for j in k..s.nodes() - k {
            assert!((v[j] - x[j]).abs() <= 1e-12);
            assert!((w[j] - x[j] * x[j] - dt).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let s = space();
        let mut u = vec![0.0; s.nodes()];
        u[17] = f64::INFINITY;
        match heat_step(&s, &u, 1, 0.01) {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, 17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_source_integrates_exactly() {
        let g = Grid::with_resolution(1.0, 50, 101).unwrap();
        for rule in [TimeRule::LeftPoint, TimeRule::Trapezoid] {
            let sch = Scheme::with_rule(g, rule).unwrap();
            let src = Source::Nodes(GridFunction::constant(&g, &[2.5]));
            let u = sch.backward_accumulate(&src, &vec![0.0; 101]).unwrap();
            for i in 0..=50 {
                for j in 0..101 {
                    assert!((u.get(i, j, 0) - 2.5 * (1.0 - g.time.t(i))).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_is_exact_for_affine_and_quadratic() {
        let g = Grid::with_resolution(1.0, 2, 11).unwrap();
        let u = GridFunction::from_fn(&g, 2, |_, x, o| {
            o[0] = 2.0 * x - 1.0;
            o[1] = x * x;
        });
        let d = gradient_x(&u, g.dx());
        for i in 0..3 {
            for j in 0..11 {
                let x = g.space.x(j);
                assert!((d.get(i, j, 0) - 2.0).abs() < 1e-12);
                assert!((d.get(i, j, 1) - 2.0 * x).abs() < 1e-10);
            }
        }
    }
}

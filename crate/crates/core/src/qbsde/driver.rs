use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::numerics::{path_rng, Grid, GridFunction, Source};

/// Seed of the sampler that certifies driver bounds.
const CERTIFY_SEED: u64 = 0x5eed_0b0d;
/// Random pairs drawn per sampled node when certifying bounds.
const CERTIFY_PAIRS: usize = 24;

/// Where a driver is evaluated: an endpoint of time step `step`, seen from inside the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loc {
    pub step: usize,
    /// False for `t_step`, true for `t_{step+1}`.
    pub right: bool,
    pub node: usize,
    pub t: f64,
    pub x: f64,
}

impl Loc {
    pub fn slice(&self) -> usize {
        self.step + usize::from(self.right)
    }
}

/// Generator `f(t, x, z)` of an `n`-dimensional BSDE with `z ∈ R^n` (one Brownian factor).
pub trait Driver: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, loc: &Loc, z: &[f64], out: &mut [f64]);
}

/// Evaluates `f(ζ)` at both endpoints of every step.
pub fn driver_source(driver: &dyn Driver, grid: &Grid, zeta: &GridFunction) -> Result<Source> {
    let n = driver.dim();
    check_field(grid, zeta, n, "integrand")?;
    let nt = grid.time.steps();
    let nx = grid.space.nodes();
    let mut left = GridFunction::zeros(nt, nx, n);
    let mut right = GridFunction::zeros(nt, nx, n);
    for step in 0..nt {
        for node in 0..nx {
            for (right_end, out) in [(false, &mut left), (true, &mut right)] {
                let loc = at(grid, step, right_end, node);
                driver.eval(&loc, zeta.at(loc.slice(), node), out.at_mut(step, node));
            }
        }
    }
    left.check_finite("driver values")?;
    right.check_finite("driver values")?;
    Ok(Source::Intervals { left, right })
}

pub(crate) fn at(grid: &Grid, step: usize, right: bool, node: usize) -> Loc {
    Loc {
        step,
        right,
        node,
        t: grid.time.t(step + usize::from(right)),
        x: grid.space.x(node),
    }
}

pub(crate) fn check_field(grid: &Grid, f: &GridFunction, dim: usize, what: &'static str) -> Result<()> {
    if f.dim() != dim {
        return Err(Error::DimensionMismatch {
            what,
            expected: dim,
            got: f.dim(),
        });
    }
    if f.slices() != grid.time.nodes() || f.nx() != grid.space.nodes() {
        return Err(Error::DimensionMismatch {
            what,
            expected: grid.time.nodes() * grid.space.nodes(),
            got: f.slices() * f.nx(),
        });
    }
    Ok(())
}

/// Coefficients `α_{ijk}` of a bilinear driver, stored row-major with `n³` entries per location.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Constant(Vec<f64>),
    /// One tensor per time node.
    Nodes(GridFunction),
    /// Tensors at both endpoints of every step, for coefficients that jump at grid times.
    Intervals {
        left: GridFunction,
        right: GridFunction,
    },
}

/// Symmetric bilinear driver `f̃^i(u, v) = Σ_{jk} α_{ijk}(t, x) u_j v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearDriver {
    n: usize,
    coeffs: Coefficients,
    theta: f64,
    theta_upper: f64,
}

impl BilinearDriver {
    pub fn new(n: usize, coeffs: Coefficients) -> Result<Self> {
        if n == 0 {
            return Err(invalid("driver dimension must be positive"));
        }
        let width = n * n * n;
        let tensors: Vec<&[f64]> = match &coeffs {
            Coefficients::Constant(a) => {
                if a.len() != width {
                    return Err(Error::DimensionMismatch {
                        what: "coefficient tensor",
                        expected: width,
                        got: a.len(),
                    });
                }
                vec![a.as_slice()]
            }
            Coefficients::Nodes(g) => {
                check_width(g, width)?;
                g.values().chunks_exact(width).collect()
            }
            Coefficients::Intervals { left, right } => {
                check_width(left, width)?;
                check_width(right, width)?;
                if !left.same_shape(right) {
                    return Err(invalid("left and right coefficient fields differ in shape"));
                }
                left.values()
                    .chunks_exact(width)
                    .chain(right.values().chunks_exact(width))
                    .collect()
            }
        };
        let mut theta = 0.0f64;
        let mut theta_upper = 0.0f64;
        let mut rng = path_rng(CERTIFY_SEED, 0);
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut out = vec![0.0; n];
        for a in &tensors {
            if let Some(k) = a.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite driver coefficient at entry {k}")));
            }
            check_symmetric(a, n)?;
            theta_upper = theta_upper.max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
            for j in 0..n {
                for k in 0..n {
                    u.fill(0.0);
                    v.fill(0.0);
                    u[j] = 1.0;
                    v[k] = 1.0;
                    apply(a, n, &u, &v, &mut out);
                    theta = theta.max(norm(&out));
                }
            }
            for _ in 0..CERTIFY_PAIRS {
                random_unit(&mut rng, &mut u);
                random_unit(&mut rng, &mut v);
                apply(a, n, &u, &v, &mut out);
                theta = theta.max(norm(&out));
            }
        }
        Ok(Self {
            n,
            coeffs,
            theta,
            theta_upper,
        })
    }

    /// Scalar driver `f̃(u, v) = c u v / 2`.
    pub fn scalar(c: f64) -> Result<Self> {
        Self::new(1, Coefficients::Constant(vec![0.5 * c]))
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::new(n, Coefficients::Constant(vec![0.0; n * n * n]))
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    /// Bound `|f̃(u, v)| ≤ Θ |u| |v|` certified by sampling unit vectors at every location.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Frobenius bound on the coefficient tensor, a guaranteed upper bound for `Θ`.
    pub fn theta_upper(&self) -> f64 {
        self.theta_upper
    }

    pub fn scaled(&self, s: f64) -> Self {
        let coeffs = match &self.coeffs {
            Coefficients::Constant(a) => Coefficients::Constant(a.iter().map(|v| s * v).collect()),
            Coefficients::Nodes(g) => Coefficients::Nodes(g.scaled(s)),
            Coefficients::Intervals { left, right } => Coefficients::Intervals {
                left: left.scaled(s),
                right: right.scaled(s),
            },
        };
        Self {
            n: self.n,
            coeffs,
            theta: s.abs() * self.theta,
            theta_upper: s.abs() * self.theta_upper,
        }
    }

    pub fn tensor(&self, loc: &Loc) -> &[f64] {
        match &self.coeffs {
            Coefficients::Constant(a) => a,
            Coefficients::Nodes(g) => g.at(loc.slice(), loc.node),
            Coefficients::Intervals { left, right } => {
                if loc.right {
                    right.at(loc.step, loc.node)
                } else {
                    left.at(loc.step, loc.node)
                }
            }
        }
    }

    pub fn eval_bilinear(&self, loc: &Loc, u: &[f64], v: &[f64], out: &mut [f64]) {
        apply(self.tensor(loc), self.n, u, v, out);
    }

    /// Checks that the coefficient fields live on `grid`.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let nx = grid.space.nodes();
        let nt = grid.time.steps();
        let ok = |g: &GridFunction, slices: usize| g.slices() == slices && g.nx() == nx;
        let fine = match &self.coeffs {
            Coefficients::Constant(_) => true,
            Coefficients::Nodes(g) => ok(g, nt + 1),
            Coefficients::Intervals { left, .. } => ok(left, nt),
        };
        if fine {
            Ok(())
        } else {
            Err(invalid("driver coefficients are not sampled on the solver grid"))
        }
    }
}

impl Driver for BilinearDriver {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, loc: &Loc, z: &[f64], out: &mut [f64]) {
        self.eval_bilinear(loc, z, z, out);
    }
}

fn check_width(g: &GridFunction, width: usize) -> Result<()> {
    if g.dim() == width {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: "coefficient field",
            expected: width,
            got: g.dim(),
        })
    }
}

fn check_symmetric(a: &[f64], n: usize) -> Result<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            for k in 0..j {
                let d = a[(i * n + j) * n + k] - a[(i * n + k) * n + j];
                if d.abs() > 1e-12 * scale {
                    return Err(invalid(format!(
                        "driver coefficients not symmetric in entries ({i},{j},{k})"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn apply(a: &[f64], n: usize, u: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let row = &a[i * n * n..(i + 1) * n * n];
        let mut acc = 0.0;
        for j in 0..n {
            if u[j] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for k in 0..n {
                inner += row[j * n + k] * v[k];
            }
            acc += u[j] * inner;
        }
        *o = acc;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(rng: &mut impl Rng, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let r = norm(out);
        if r > 1e-12 {
            out.iter_mut().for_each(|v| *v /= r);
            return;
        }
    }
}

/// `f̃(μ, ν)` at both endpoints of every step.
pub fn bilinear_source(
    driver: &BilinearDriver,
    grid: &Grid,
    mu: &GridFunction,
    nu: &GridFunction,
) -> Result<Source> {
    let n = driver.dim();
    check_field(grid, mu, n, "first bilinear argument")?;
    check_field(grid, nu, n, "second bilinear argument")?;
    driver.check_grid(grid)?;
    let nt = grid.time.steps();
    let nx = grid.space.nodes();
    let mut left = GridFunction::zeros(nt, nx, n);
    let mut right = GridFunction::zeros(nt, nx, n);
    for step in 0..nt {
        for node in 0..nx {
            for (r, out) in [(false, &mut left), (true, &mut right)] {
                let loc = at(grid, step, r, node);
                let s = loc.slice();
                driver.eval_bilinear(&loc, mu.at(s, node), nu.at(s, node), out.at_mut(step, node));
            }
        }
    }
    Ok(Source::Intervals { left, right })
}

pub type DriverFn = dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync;

/// General quadratic driver `f(t, x, z)` with modulus `Θ`.
#[derive(Clone)]
pub struct QuadraticDriver {
    n: usize,
    theta: f64,
    f: Arc<DriverFn>,
}

impl fmt::Debug for QuadraticDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticDriver")
            .field("n", &self.n)
            .field("theta", &self.theta)
            .finish_non_exhaustive()
    }
}

/// Result of sampling the quadratic growth conditions of a driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthCheck {
    /// Largest `|f(u) - f(v)| / (|u - v| (|u| + |v|))` seen.
    pub max_ratio: f64,
    /// Largest `|f(t, x, 0)|` seen.
    pub max_at_zero: f64,
    pub holds: bool,
}

impl QuadraticDriver {
    pub fn new(
        n: usize,
        theta: f64,
        f: impl Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("driver dimension must be positive"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(invalid(format!("driver modulus must be positive, got {theta}")));
        }
        Ok(Self {
            n,
            theta,
            f: Arc::new(f),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn call(&self, t: f64, x: f64, z: &[f64], out: &mut [f64]) {
        (self.f)(t, x, z, out)
    }

    /// Samples the growth conditions on `pairs` random pairs with norms up to `scale`, at
    /// every `stride`-th node of `grid`.
    pub fn check_growth(&self, grid: &Grid, pairs: usize, scale: f64, stride: usize) -> GrowthCheck {
        let n = self.n;
        let mut rng = path_rng(CERTIFY_SEED, 1);
        let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
        let (mut fu, mut fv) = (vec![0.0; n], vec![0.0; n]);
        let zero = vec![0.0; n];
        let mut max_ratio = 0.0f64;
        let mut max_at_zero = 0.0f64;
        let stride = stride.max(1);
        for i in (0..grid.time.nodes()).step_by(stride) {
            for j in (0..grid.space.nodes()).step_by(stride) {
                let (t, x) = (grid.time.t(i), grid.space.x(j));
                self.call(t, x, &zero, &mut fu);
                max_at_zero = max_at_zero.max(norm(&fu));
                for _ in 0..pairs {
                    random_unit(&mut rng, &mut u);
                    random_unit(&mut rng, &mut v);
                    let (ru, rv): (f64, f64) = (rng.random::<f64>() * scale, rng.random::<f64>() * scale);
                    u.iter_mut().for_each(|c| *c *= ru);
                    v.iter_mut().for_each(|c| *c *= rv);
                    self.call(t, x, &u, &mut fu);
                    self.call(t, x, &v, &mut fv);
                    let diff: f64 = fu.iter().zip(&fv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    let du: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    let denom = du * (norm(&u) + norm(&v));
                    if denom > 1e-14 {
                        max_ratio = max_ratio.max(diff / denom);
                    }
                }
            }
        }
        GrowthCheck {
            max_ratio,
            max_at_zero,
            holds: max_at_zero == 0.0 && max_ratio <= self.theta * (1.0 + 1e-12),
        }
    }
}

impl Driver for QuadraticDriver {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, loc: &Loc, z: &[f64], out: &mut [f64]) {
        self.call(loc.t, loc.x, z, out)
    }
}

/// Either driver class accepted by the solvers.
#[derive(Debug, Clone)]
pub enum DriverKind {
    Bilinear(BilinearDriver),
    Quadratic(QuadraticDriver),
}

impl DriverKind {
    pub fn theta(&self) -> f64 {
        match self {
            DriverKind::Bilinear(b) => b.theta(),
            DriverKind::Quadratic(q) => q.theta(),
        }
    }

    pub fn as_bilinear(&self) -> Option<&BilinearDriver> {
        match self {
            DriverKind::Bilinear(b) => Some(b),
            DriverKind::Quadratic(_) => None,
        }
    }
}

impl Driver for DriverKind {
    fn dim(&self) -> usize {
        match self {
            DriverKind::Bilinear(b) => b.dim(),
            DriverKind::Quadratic(q) => q.dim(),
        }
    }

    fn eval(&self, loc: &Loc, z: &[f64], out: &mut [f64]) {
        match self {
            DriverKind::Bilinear(b) => b.eval(loc, z, out),
            DriverKind::Quadratic(q) => q.eval(loc, z, out),
        }
    }
}

impl From<BilinearDriver> for DriverKind {
    fn from(b: BilinearDriver) -> Self {
        DriverKind::Bilinear(b)
    }
}

impl From<QuadraticDriver> for DriverKind {
    fn from(q: QuadraticDriver) -> Self {
        DriverKind::Quadratic(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc() -> Loc {
        Loc {
            step: 0,
            right: false,
            node: 0,
            t: 0.0,
            x: 0.0,
        }
    }

    #[test]
    fn scalar_driver_bound_is_exact() {
        let d = BilinearDriver::scalar(3.0).unwrap();
        assert_eq!(d.theta(), 1.5);
        let mut out = [0.0];
        d.eval_bilinear(&loc(), &[2.0], &[5.0], &mut out);
        assert_eq!(out[0], 15.0);
    }

    #[test]
    fn rejects_asymmetric_tensor() {
        // α_{0,0,1} = 1, α_{0,1,0} = 0.
        let a = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(BilinearDriver::new(2, Coefficients::Constant(a)).is_err());
    }

    #[test]
    fn sampled_bound_never_exceeds_frobenius() {
        let a = vec![1.0, 0.5, 0.5, -2.0, 0.3, 0.0, 0.0, 0.7];
        let d = BilinearDriver::new(2, Coefficients::Constant(a)).unwrap();
        assert!(d.theta() > 0.0 && d.theta() <= d.theta_upper());
    }

    #[test]
    fn quadratic_growth_check() {
        let g = Grid::with_resolution(1.0, 4, 9).unwrap();
        let q = QuadraticDriver::new(1, 0.5, |_, _, z, o| o[0] = 0.5 * z[0] * z[0]).unwrap();
        let c = q.check_growth(&g, 16, 3.0, 2);
        assert!(c.holds, "{c:?}");
        let bad = QuadraticDriver::new(1, 0.5, |_, _, z, o| o[0] = 0.5 * z[0] * z[0] + 0.1).unwrap();
        assert!(!bad.check_growth(&g, 4, 1.0, 4).holds);
    }
}

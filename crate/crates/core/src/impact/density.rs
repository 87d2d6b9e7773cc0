use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::{mean_and_stderr, Grid, GridFunction, HeatKernel, PathBundle, Region, Scheme, Source};

use super::PriceSystem;

/// Grid checks of the density `Z = E(-∫ α dB)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityCheck {
    /// `|E[Z_T] - 1|` at the origin, with the discrete kernel tilted by `exp(-α ΔB - α² dt / 2)`.
    pub normalization_gap: f64,
    /// `max |E^Q_i[S_{i+1}] - S_i| / dt` over the core region.
    pub q_drift: f64,
}

/// `Σ_k w_k e^{-α k dx} u(x + k dx)`, normalized either by the discrete mass or by `e^{α² dt / 2}`.
fn tilted_step(kernel: &HeatKernel, dx: f64, alpha: &[f64], u: &[f64], dim: usize, exact_mass: bool) -> Vec<f64> {
    let nx = alpha.len();
    let last = nx - 1;
    let w = kernel.weights();
    let w0 = 1.0 - 2.0 * w.iter().sum::<f64>();
    let mut out = vec![0.0; u.len()];
    for j in 0..nx {
        let a = alpha[j];
        let mut mass = w0;
        let mut acc = vec![0.0; dim];
        for c in 0..dim {
            acc[c] = w0 * u[j * dim + c];
        }
        for (k, wk) in w.iter().enumerate() {
            let k = k + 1;
            let up = wk * (-a * k as f64 * dx).exp();
            let dn = wk * (a * k as f64 * dx).exp();
            mass += up + dn;
            let (ju, jd) = ((j + k).min(last), j.saturating_sub(k));
            for c in 0..dim {
                acc[c] += up * u[ju * dim + c] + dn * u[jd * dim + c];
            }
        }
        let norm = if exact_mass {
            mass
        } else {
            (0.5 * a * a * kernel.variance()).exp()
        };
        for c in 0..dim {
            out[j * dim + c] = acc[c] / norm;
        }
    }
    out
}

pub fn density_check(scheme: &Scheme, prices: &PriceSystem) -> Result<DensityCheck> {
    let grid = scheme.grid();
    let nt = grid.time.steps();
    let nx = grid.space.nodes();
    let dx = grid.dx();
    let dt = grid.dt();
    let n = prices.assets();
    let Source::Intervals { left, .. } = &prices.alpha else {
        return Err(invalid("market price of risk must be interval based"));
    };
    let kernel = scheme.kernel();
    let mut v = vec![1.0; nx];
    for i in (0..nt).rev() {
        v = tilted_step(kernel, dx, left.slice(i), &v, 1, false);
    }
    let normalization_gap = (v[grid.space.center()] - 1.0).abs();
    let core = grid.indices(Region::Core);
    let mut q_drift = 0.0f64;
    for i in 0..nt {
        let e = tilted_step(kernel, dx, left.slice(i), prices.s.slice(i + 1), n, true);
        let cur = prices.s.slice(i);
        for j in core.clone() {
            for c in 0..n {
                q_drift = q_drift.max((e[j * n + c] - cur[j * n + c]).abs() / dt);
            }
        }
    }
    Ok(DensityCheck {
        normalization_gap,
        q_drift,
    })
}

/// Monte Carlo checks of `E[Z_T] = 1` and `E[Z_T Ψ] = S_0` at 95% confidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDensityCheck {
    pub mean_z: f64,
    pub stderr_z: f64,
    /// `E[Z_T (S_T - S_0)]` per asset.
    pub price_gap: Vec<f64>,
    pub price_stderr: Vec<f64>,
    pub pass: bool,
}

pub fn path_density_check(grid: &Grid, prices: &PriceSystem, paths: &PathBundle) -> Result<PathDensityCheck> {
    if paths.nsteps() != grid.time.steps() {
        return Err(invalid("paths must use the price grid's time steps"));
    }
    let Source::Intervals { left, .. } = &prices.alpha else {
        return Err(invalid("market price of risk must be interval based"));
    };
    let nt = grid.time.steps();
    let dt = grid.dt();
    let n = prices.assets();
    let terminal = GridFunction::from_vec(1, grid.space.nodes(), n, prices.s.slice(nt).to_vec())?;
    let s0 = prices.s0(grid).to_vec();
    let logz = paths.map_paths(|b| {
        let mut l = 0.0;
        for i in 0..nt {
            let a = left.interpolate_scalar(grid, i, b[i]);
            l -= a * (b[i + 1] - b[i]) + 0.5 * a * a * dt;
        }
        l
    });
    let z: Vec<f64> = logz.iter().map(|l| l.exp()).collect();
    let (mean_z, stderr_z) = mean_and_stderr(&z);
    let mut pass = (mean_z - 1.0).abs() <= 1.96 * stderr_z;
    let bt = paths.terminal_values();
    let mut price_gap = Vec::with_capacity(n);
    let mut price_stderr = Vec::with_capacity(n);
    let mut buf = vec![0.0; n];
    for c in 0..n {
        let w: Vec<f64> = z
            .iter()
            .zip(&bt)
            .map(|(zp, &x)| {
                terminal.interpolate(grid, 0, x, &mut buf);
                zp * (buf[c] - s0[c])
            })
            .collect();
        let (m, se) = mean_and_stderr(&w);
        pass &= m.abs() <= 1.96 * se;
        price_gap.push(m);
        price_stderr.push(se);
    }
    Ok(PathDensityCheck {
        mean_z,
        stderr_z,
        price_gap,
        price_stderr,
        pass,
    })
}

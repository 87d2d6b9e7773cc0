use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction};

use super::demand::{Demand, Level};
use super::{MarketSpec, PriceSystem};

/// Prices of a simple demand by backward induction over its periods.
#[derive(Debug, Clone)]
pub struct OraclePrices {
    /// Breakpoint node indices.
    pub breakpoints: Vec<usize>,
    /// `S_{τ_i}` on the spatial nodes, one entry per breakpoint.
    pub s_breakpoints: Vec<Vec<f64>>,
    /// `R_{τ_i}` on the spatial nodes.
    pub r_breakpoints: Vec<Vec<f64>>,
    /// Full price system; absent when some level depends on the state.
    pub prices: Option<PriceSystem>,
}

/// Within a period of level `θ`,
/// `S_t = E_t[S_{τ+} D] / E_t[D]` and `R_t = -θ·S_t - log E_t[D] / a`
/// with `D = exp(-a θ·S_{τ+} - a R_{τ+})`.
pub fn simple_demand_oracle(market: &MarketSpec) -> Result<OraclePrices> {
    let Demand::Simple(sd) = market.demand() else {
        return Err(invalid("the oracle needs a simple demand"));
    };
    let grid = *market.grid();
    let scheme = market.scheme()?;
    let a = market.risk_aversion();
    let n = market.assets();
    let nx = grid.space.nodes();
    let nt = grid.time.steps();
    let bp = sd.breakpoints().to_vec();
    let full = !sd.has_state_levels();
    let mut s_all = full.then(|| GridFunction::on_nodes(&grid, n));
    let mut r_all = full.then(|| GridFunction::on_nodes(&grid, 1));
    let mut s_end = market.dividend().to_vec();
    let mut r_end = vec![0.0; nx];
    if let (Some(s), Some(_)) = (&mut s_all, &mut r_all) {
        s.slice_mut(nt).copy_from_slice(&s_end);
    }
    let mut s_bp = vec![Vec::new(); bp.len()];
    let mut r_bp = vec![Vec::new(); bp.len()];
    s_bp[bp.len() - 1] = s_end.clone();
    r_bp[bp.len() - 1] = r_end.clone();
    for p in (0..bp.len() - 1).rev() {
        let (k0, k1) = (bp[p], bp[p + 1]);
        match &sd.levels()[p] {
            Level::Constant(theta) => {
                let (mut u, shift) = tilt(&grid, a, theta, &s_end, &r_end, None)?;
                for i in (k0..k1).rev() {
                    u = scheme.step(&u, n + 1);
                    let (s, r) = unpack(&grid, a, theta, &u, shift, i)?;
                    if let (Some(sa), Some(ra)) = (&mut s_all, &mut r_all) {
                        sa.slice_mut(i).copy_from_slice(&s);
                        ra.slice_mut(i).copy_from_slice(&r);
                    }
                    if i == k0 {
                        s_end = s;
                        r_end = r;
                    }
                }
            }
            Level::State(levels) => {
                let steps = k1 - k0;
                let rows: Vec<Result<(Vec<f64>, f64)>> = (0..nx)
                    .into_par_iter()
                    .map(|y| {
                        let theta = &levels[y * n..(y + 1) * n];
                        let (u, shift) = tilt(&grid, a, theta, &s_end, &r_end, Some(y))?;
                        let u = scheme.sweep(&u, n + 1, steps);
                        let d = u[y * (n + 1)];
                        if !(d > 0.0 && d.is_finite()) {
                            return Err(moment_error(k0, y));
                        }
                        let s: Vec<f64> = (0..n).map(|c| u[y * (n + 1) + 1 + c] / d).collect();
                        let ts: f64 = theta.iter().zip(&s).map(|(t, v)| t * v).sum();
                        Ok((s, -ts - (d.ln() + shift) / a))
                    })
                    .collect();
                let mut s = vec![0.0; nx * n];
                let mut r = vec![0.0; nx];
                for (y, row) in rows.into_iter().enumerate() {
                    let (sy, ry) = row?;
                    s[y * n..(y + 1) * n].copy_from_slice(&sy);
                    r[y] = ry;
                }
                s_end = s;
                r_end = r;
            }
        }
        s_bp[p] = s_end.clone();
        r_bp[p] = r_end.clone();
    }
    let prices = match (s_all, r_all) {
        (Some(s), Some(r)) => Some(PriceSystem::from_prices(&grid, a, s, r, market.demand())?),
        _ => None,
    };
    Ok(OraclePrices {
        breakpoints: bp,
        s_breakpoints: s_bp,
        r_breakpoints: r_bp,
        prices,
    })
}

fn moment_error(slice: usize, node: usize) -> Error {
    Error::ExponentialMoment(format!(
        "tilted expectation vanished or overflowed at slice {slice}, node {node}"
    ))
}

/// Interleaved `(D, S D)` at the period end, with `D` shifted by `exp(-shift)`.
///
/// The shift is the largest exponent over the nodes, or the one at `anchor`.
fn tilt(
    grid: &Grid,
    a: f64,
    theta: &[f64],
    s_end: &[f64],
    r_end: &[f64],
    anchor: Option<usize>,
) -> Result<(Vec<f64>, f64)> {
    let n = theta.len();
    let nx = grid.space.nodes();
    let expo: Vec<f64> = (0..nx)
        .map(|j| {
            let ts: f64 = theta.iter().zip(&s_end[j * n..(j + 1) * n]).map(|(t, v)| t * v).sum();
            -a * ts - a * r_end[j]
        })
        .collect();
    let shift = match anchor {
        Some(j) => expo[j],
        None => expo.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    if !shift.is_finite() {
        return Err(Error::ExponentialMoment("non-finite tilt exponent".into()));
    }
    let mut u = vec![0.0; nx * (n + 1)];
    for j in 0..nx {
        let d = (expo[j] - shift).exp();
        if !d.is_finite() {
            return Err(moment_error(grid.time.steps(), j));
        }
        u[j * (n + 1)] = d;
        for c in 0..n {
            u[j * (n + 1) + 1 + c] = s_end[j * n + c] * d;
        }
    }
    Ok((u, shift))
}

fn unpack(grid: &Grid, a: f64, theta: &[f64], u: &[f64], shift: f64, slice: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = theta.len();
    let nx = grid.space.nodes();
    let mut s = vec![0.0; nx * n];
    let mut r = vec![0.0; nx];
    for j in 0..nx {
        let d = u[j * (n + 1)];
        if !(d > 0.0 && d.is_finite()) {
            return Err(moment_error(slice, j));
        }
        let mut ts = 0.0;
        for c in 0..n {
            let v = u[j * (n + 1) + 1 + c] / d;
            s[j * n + c] = v;
            ts += theta[c] * v;
        }
        r[j] = -ts - (d.ln() + shift) / a;
    }
    Ok((s, r))
}

//! Exit times of Brownian motion from `(-π/2, π/2)`, the exponential moment
//! `E[exp(a² τ / 2)] = 1 / cos(aπ/2)` and the maturity-dependent solvability frontier.
//!
//! Under the time change `⟨M⟩_t = t / (1 - t)` the stopped martingale
//! `M = ∫ (1 - s)^{-1} dB` becomes a standard Brownian motion, so `⟨M⟩_τ` is
//! sampled as a plain first-exit time.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bmo::terminal_bmo_norm;
use crate::error::{invalid, Result};
use crate::numerics::{path_rng, Grid, Region, Scheme};

/// Half-width of the exit interval.
pub const BARRIER: f64 = FRAC_PI_2;
/// Paths still inside after this long are redrawn.
pub const TIME_CAP: f64 = 1e3;
/// Moments at or above this `a` are reported with a tail diagnostic.
pub const HEAVY_TAIL_FROM: f64 = 0.8;

/// Blocks are merged only while `d² ≥ BLOCK_MARGIN · k dt`, keeping the exit probability inside a
/// merged block below `1e-12`.
const BLOCK_MARGIN: f64 = 64.0;
const MAX_BLOCK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ExitSample {
    pub values: Vec<f64>,
    /// Whether each path left through `+π/2`.
    pub upper: Vec<bool>,
    pub npaths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Paths redrawn after reaching the time cap.
    pub resampled: usize,
}

/// First-exit times by Euler steps with a Brownian-bridge crossing test.
///
/// Far from the barrier, runs of steps are merged into one Gaussian increment.
pub fn exit_time_samples(seed: u64, npaths: usize, dt: f64) -> Result<ExitSample> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(invalid(format!("time step must lie in (0, 1e-3], got {dt}")));
    }
    if npaths < 10_000 {
        return Err(invalid(format!("at least 10^4 paths are required, got {npaths}")));
    }
    exit_times_unchecked(seed, npaths, dt)
}

pub(crate) fn exit_times_unchecked(seed: u64, npaths: usize, dt: f64) -> Result<ExitSample> {
    let draws: Vec<(f64, bool, usize)> = (0..npaths)
        .into_par_iter()
        .map(|p| {
            let mut attempt = 0u64;
            loop {
                let mut rng = path_rng(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)), p as u64);
                if let Some((t, up)) = one_exit(&mut rng, dt) {
                    return (t, up, attempt as usize);
                }
                attempt += 1;
            }
        })
        .collect();
    Ok(ExitSample {
        values: draws.iter().map(|d| d.0).collect(),
        upper: draws.iter().map(|d| d.1).collect(),
        npaths,
        dt,
        seed,
        resampled: draws.iter().map(|d| d.2).sum(),
    })
}

fn one_exit<R: Rng>(rng: &mut R, dt: f64) -> Option<(f64, bool)> {
    let sd = dt.sqrt();
    let mut x = 0.0f64;
    let mut steps: u64 = 0;
    let cap = (TIME_CAP / dt).ceil() as u64;
    while steps < cap {
        let d = BARRIER - x.abs();
        let k = ((d * d) / (BLOCK_MARGIN * dt)).floor() as u64;
        if k >= 2 {
            let k = prev_power_of_two(k.min(MAX_BLOCK));
            let z: f64 = StandardNormal.sample(rng);
            x += (k as f64 * dt).sqrt() * z;
            steps += k;
            if x.abs() >= BARRIER {
                return Some((steps as f64 * dt, x > 0.0));
            }
            continue;
        }
        let z: f64 = StandardNormal.sample(rng);
        let next = x + sd * z;
        steps += 1;
        if next.abs() >= BARRIER {
            return Some((steps as f64 * dt, next > 0.0));
        }
        let pu = (-2.0 * (BARRIER - x) * (BARRIER - next) / dt).exp();
        let pl = (-2.0 * (BARRIER + x) * (BARRIER + next) / dt).exp();
        if pu + pl > 1e-16 {
            let u: f64 = rng.random();
            if u < pu {
                return Some((steps as f64 * dt, true));
            }
            if u < pu + pl {
                return Some((steps as f64 * dt, false));
            }
        }
        x = next;
    }
    None
}

fn prev_power_of_two(k: u64) -> u64 {
    1 << (63 - k.leading_zeros())
}

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error with pairwise sums.
pub fn pairwise_mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Running means over the first `n / 2^k` samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailDiagnostic {
    /// `(sample count, mean)` for successive doublings.
    pub running_means: Vec<(usize, f64)>,
    /// Relative change between the last two doublings.
    pub last_change: f64,
    /// Whether every change over the last three doublings is at most 5%.
    pub stabilized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub a: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `1 / cos(aπ/2)`; `None` on the divergent branch `a ≥ 1`.
    pub closed_form: Option<f64>,
    /// `a ≥ 0.8`: the sample variance is unreliable and `tail` is populated.
    pub heavy_tail: bool,
    pub tail: Option<TailDiagnostic>,
}

impl MomentEstimate {
    /// `3 stderr - |estimate - closed form|`.
    pub fn margin(&self) -> Option<f64> {
        self.closed_form.map(|c| 3.0 * self.stderr - (self.estimate - c).abs())
    }

    pub fn within_three_stderr(&self) -> Option<bool> {
        self.margin().map(|m| m >= 0.0)
    }
}

pub fn closed_form_moment(a: f64) -> Option<f64> {
    (a < 1.0).then(|| 1.0 / (a * FRAC_PI_2).cos())
}

/// `E[exp(a² τ / 2)]` over the sample.
pub fn exp_moment(a: f64, samples: &ExitSample) -> Result<MomentEstimate> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid(format!("moment parameter must be >= 0, got {a}")));
    }
    let w: Vec<f64> = samples.values.iter().map(|t| (0.5 * a * a * t).exp()).collect();
    let (estimate, stderr) = pairwise_mean_stderr(&w);
    let heavy_tail = a >= HEAVY_TAIL_FROM;
    let tail = heavy_tail.then(|| tail_diagnostic(&w));
    Ok(MomentEstimate {
        a,
        estimate,
        stderr,
        closed_form: closed_form_moment(a),
        heavy_tail,
        tail,
    })
}

fn tail_diagnostic(w: &[f64]) -> TailDiagnostic {
    let mut counts = Vec::new();
    let mut n = w.len();
    while n >= 1000 {
        counts.push(n);
        n /= 2;
    }
    counts.reverse();
    let running_means: Vec<(usize, f64)> = counts.iter().map(|&n| (n, pairwise_sum(&w[..n]) / n as f64)).collect();
    let changes: Vec<f64> = running_means
        .windows(2)
        .map(|p| ((p[1].1 - p[0].1) / p[0].1).abs())
        .collect();
    let last_change = changes.last().copied().unwrap_or(f64::NAN);
    let stabilized = changes.len() >= 3 && changes[changes.len() - 3..].iter().all(|&c| c <= 0.05);
    TailDiagnostic {
        running_means,
        last_change,
        stabilized,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frontier {
    pub a: f64,
    pub horizon: f64,
    /// `a (T - 1) / √T`.
    pub criterion: f64,
    /// `1 - criterion`.
    pub margin: f64,
    pub solvable: bool,
}

/// Solvability of the three-dimensional example: `a (T - 1) / √T < 1`.
pub fn solvability_frontier(a: f64, horizon: f64) -> Result<Frontier> {
    if !(horizon > 1.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must exceed 1, got {horizon}")));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid(format!("a must be positive, got {a}")));
    }
    let criterion = a * (horizon - 1.0) / horizon.sqrt();
    Ok(Frontier {
        a,
        horizon,
        criterion,
        margin: 1.0 - criterion,
        solvable: criterion < 1.0,
    })
}

/// Grid and sample checks of the explicit reductions of the three-dimensional example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionCheck {
    pub a: f64,
    pub horizon: f64,
    /// `ζ^1` from the grid at the origin, against `a / √T`.
    pub zeta1_grid: f64,
    pub zeta1_exact: f64,
    /// `‖(a/√T) B_T‖_bmo` on the grid, against `a`.
    pub xi_bmo_grid: f64,
    /// `Y^3_0 = log E[exp(b² ⟨M⟩_τ / 2)]` with `b = a (T - 1) / √T`, from the sample.
    pub y3_estimate: f64,
    /// `-log cos(bπ/2)`, absent when unsolvable.
    pub y3_closed_form: Option<f64>,
}

pub fn reduction_check(a: f64, horizon: f64, samples: &ExitSample) -> Result<ReductionCheck> {
    let f = solvability_frontier(a, horizon)?;
    let grid = Grid::with_resolution(horizon, 100, 401)?;
    let scheme = Scheme::new(grid)?;
    let c = a / horizon.sqrt();
    let terminal = scheme.sample_terminal(1, |x, o| o[0] = c * x);
    let y = scheme.conditional_expectation(&terminal)?;
    let z = scheme.gradient_x(&y);
    let zeta1_grid = z.get(0, grid.space.center(), 0);
    let xi_bmo_grid = terminal_bmo_norm(&scheme, &terminal, Region::Core)?.value;
    let b = f.criterion;
    let m = exp_moment(b, samples)?;
    Ok(ReductionCheck {
        a,
        horizon,
        zeta1_grid,
        zeta1_exact: c,
        xi_bmo_grid,
        y3_estimate: m.estimate.ln(),
        y3_closed_form: m.closed_form.map(|v| v.ln()),
    })
}

/// Writes `a,estimate,stderr,closed_form,margin` rows with LF line endings.
pub fn write_moments_csv<W: Write>(rows: &[MomentEstimate], w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        a: f64,
        estimate: f64,
        stderr: f64,
        closed_form: Option<f64>,
        margin: Option<f64>,
        heavy_tail: bool,
    }
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in rows {
        wr.serialize(Row {
            a: r.a,
            estimate: r.estimate,
            stderr: r.stderr,
            closed_form: r.closed_form,
            margin: r.margin(),
            heavy_tail: r.heavy_tail,
        })?;
    }
    wr.flush()?;
    Ok(())
}

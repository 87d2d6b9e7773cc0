use std::io::Write;

use serde::Serialize;

use crate::bmo::{hp_norm, lp_norm, total_variation_paths};
use crate::error::{invalid, Result};
use crate::numerics::{PathBundle, Source};
use crate::qbsde::PicardSettings;

use super::{solve_prices, MarketSpec};

/// Distance of the prices under a step-wise constant demand from those under the limit demand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandStabilityRow {
    /// Steps per period of the approximation.
    pub every: usize,
    /// `E ∫ |γ^m - γ| dt`.
    pub demand_l1: f64,
    pub s_gap0: f64,
    /// `S^p` norm of `S^m - S`.
    pub s_sp: f64,
    pub sigma_hp: f64,
    pub alpha_hp: f64,
    /// `‖S^m - S‖_{S^p} + ‖σ^m - σ‖_{H^p} + ‖α^m - α‖_{H^p}`.
    pub combined: f64,
}

/// Solves the market for its own demand and for step-wise constant approximations with
/// `every` steps per period, and measures the price gaps over `paths`.
pub fn demand_stability(
    market: &MarketSpec,
    every: &[usize],
    p: f64,
    paths: &PathBundle,
    settings: &PicardSettings,
) -> Result<Vec<DemandStabilityRow>> {
    if !(p > 1.0) {
        return Err(invalid(format!("exponent must exceed 1, got {p}")));
    }
    let grid = *market.grid();
    let limit = solve_prices(market, settings)?.prices;
    let limit_drift = limit.drift(&grid);
    let (gl, gr) = market.demand().intervals(&grid)?;
    let mut rows = Vec::with_capacity(every.len());
    for &m in every {
        let approx_demand = market.demand().piecewise_constant(&grid, m)?;
        let (al, ar) = approx_demand.intervals(&grid)?;
        let dgamma = Source::Intervals {
            left: al.sub(&gl)?,
            right: ar.sub(&gr)?,
        };
        let demand_l1 = lp_norm(&total_variation_paths(&grid, &dgamma, paths)?, 1.0);
        let prices = solve_prices(&market.with_demand(approx_demand)?, settings)?.prices;
        let c = grid.space.center();
        let s_gap0 = prices
            .s
            .at(0, c)
            .iter()
            .zip(limit.s.at(0, c))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let sigma_hp = hp_norm(&grid, &Source::Nodes(prices.sigma.sub(&limit.sigma)?), p, paths)?;
        let alpha_hp = hp_norm(&grid, &prices.alpha.sub(&limit.alpha, &grid)?, p, paths)?;
        let drift = prices.drift(&grid).sub(&limit_drift, &grid)?;
        let variation = lp_norm(&total_variation_paths(&grid, &drift, paths)?, p);
        let s_sp = s_gap0 + sigma_hp + variation;
        rows.push(DemandStabilityRow {
            every: m,
            demand_l1,
            s_gap0,
            s_sp,
            sigma_hp,
            alpha_hp,
            combined: s_sp + sigma_hp + alpha_hp,
        });
    }
    Ok(rows)
}

pub fn write_stability_csv<W: Write>(rows: &[DemandStabilityRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

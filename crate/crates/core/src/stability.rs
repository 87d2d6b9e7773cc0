//! Both sides of the stability estimates for perturbed terminal values and drivers.

use std::io::Write;

use serde::Serialize;

use crate::bmo::{hbmo_norm, hp_norm, lp_norm, quadratic_variation_paths, terminal_bmo_norm, total_variation_paths, sup_with_argmax};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction, PathBundle, Region, Source};
use crate::qbsde::{driver_source, picard_solve, BsdeSpec, Driver, PicardSettings, Solution};

/// Picard contraction factors above this are flagged.
pub const CONTRACTION_WARNING: f64 = 0.9;

/// Base and perturbed BSDE with an envelope `δ` of the driver difference.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub base: BsdeSpec,
    pub primed: BsdeSpec,
    /// `|f - f'| ≤ δ |z|²` on the time nodes.
    pub delta: GridFunction,
    pub p: f64,
}

impl PerturbationPair {
    pub fn new(base: BsdeSpec, primed: BsdeSpec, delta: GridFunction, p: f64) -> Result<Self> {
        if base.grid() != primed.grid() || base.dim() != primed.dim() {
            return Err(invalid("perturbation pair must share grid and dimension"));
        }
        if !(p > 1.0) {
            return Err(invalid(format!("exponent must exceed 1, got {p}")));
        }
        let g = base.grid();
        if delta.dim() != 1 || delta.slices() != g.time.nodes() || delta.nx() != g.space.nodes() {
            return Err(Error::DimensionMismatch {
                what: "delta envelope",
                expected: g.time.nodes() * g.space.nodes(),
                got: delta.values().len(),
            });
        }
        if let Some(v) = delta.values().iter().find(|v| !(**v >= 0.0)) {
            return Err(invalid(format!("delta must be nonnegative, found {v}")));
        }
        Ok(Self {
            base,
            primed,
            delta,
            p,
        })
    }

    /// Pair with the envelope sampled from the two drivers.
    pub fn sampled(base: BsdeSpec, primed: BsdeSpec, p: f64, z_samples: &[Vec<f64>]) -> Result<Self> {
        let delta = delta_bound(base.driver(), primed.driver(), base.grid(), z_samples)?;
        Self::new(base, primed, delta, p)
    }

    pub fn swapped(&self) -> Self {
        Self {
            base: self.primed.clone(),
            primed: self.base.clone(),
            delta: self.delta.clone(),
            p: self.p,
        }
    }
}

/// `sup_z |f(t,x,z) - f'(t,x,z)| / |z|²` over `z_samples` at every grid node.
pub fn delta_bound(
    f: &dyn Driver,
    f_primed: &dyn Driver,
    grid: &Grid,
    z_samples: &[Vec<f64>],
) -> Result<GridFunction> {
    let n = f.dim();
    if f_primed.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "perturbed driver",
            expected: n,
            got: f_primed.dim(),
        });
    }
    if z_samples.is_empty() {
        return Err(invalid("delta envelope needs at least one sample"));
    }
    for z in z_samples {
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                what: "sample point",
                expected: n,
                got: z.len(),
            });
        }
        if z.iter().all(|&v| v == 0.0) {
            return Err(invalid("sample set must exclude z = 0"));
        }
    }
    let nt = grid.time.steps();
    let mut out = GridFunction::on_nodes(grid, 1);
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..=nt {
        let (step, right) = if i < nt { (i, false) } else { (nt - 1, true) };
        for j in 0..grid.space.nodes() {
            let loc = crate::qbsde::Loc {
                step,
                right,
                node: j,
                t: grid.time.t(i),
                x: grid.space.x(j),
            };
            let mut m = 0.0f64;
            for z in z_samples {
                f.eval(&loc, z, &mut a);
                f_primed.eval(&loc, z, &mut b);
                let d: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                let r2: f64 = z.iter().map(|v| v * v).sum();
                m = m.max(d / r2);
            }
            out.set(i, j, 0, m);
        }
    }
    Ok(out)
}

/// Left- and right-hand sides of the four stability estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub diverged: bool,
    pub lhs_hp: f64,
    pub lhs_sp: f64,
    pub lhs_hbmo: f64,
    pub lhs_sbmo: f64,
    /// `‖L'_T - L_T‖_{L^p}`.
    pub dl_lp: f64,
    /// `‖Ξ' - Ξ‖_{L^p}`.
    pub dxi_lp: f64,
    /// `‖L' - L‖_bmo`.
    pub dl_bmo: f64,
    /// `‖√δ ζ‖²_{H^{2p}}`.
    pub delta_h2p_sq: f64,
    /// `‖√δ ζ‖²_Hbmo`.
    pub delta_hbmo_sq: f64,
    /// `|E[Ξ' - Ξ]|`.
    pub mean_dxi: f64,
    /// `‖ζ‖_Hbmo + ‖ζ'‖_Hbmo`.
    pub smallness: f64,
    /// `Θ` times `smallness`.
    pub smallness_product: f64,
    pub max_contraction: Option<f64>,
    pub contraction_flag: bool,
    /// `lhs / rhs` for the four estimates, in the order `H^p`, `S^p`, `Hbmo`, `Sbmo`.
    pub ratios: Option<[f64; 4]>,
}

impl StabilityReport {
    fn failed() -> Self {
        Self {
            diverged: true,
            lhs_hp: f64::NAN,
            lhs_sp: f64::NAN,
            lhs_hbmo: f64::NAN,
            lhs_sbmo: f64::NAN,
            dl_lp: f64::NAN,
            dxi_lp: f64::NAN,
            dl_bmo: f64::NAN,
            delta_h2p_sq: f64::NAN,
            delta_hbmo_sq: f64::NAN,
            mean_dxi: f64::NAN,
            smallness: f64::NAN,
            smallness_product: f64::NAN,
            max_contraction: None,
            contraction_flag: false,
            ratios: None,
        }
    }

    pub fn rhs(&self) -> [f64; 4] {
        [
            self.dl_lp + self.delta_h2p_sq,
            self.dxi_lp + self.delta_h2p_sq,
            self.dl_bmo + self.delta_hbmo_sq,
            self.mean_dxi + self.dl_bmo + self.delta_hbmo_sq,
        ]
    }

    pub fn lhs(&self) -> [f64; 4] {
        [self.lhs_hp, self.lhs_sp, self.lhs_hbmo, self.lhs_sbmo]
    }
}

/// Solves both equations at scale `a` and evaluates both sides of every estimate.
pub fn compare(
    pair: &PerturbationPair,
    a: f64,
    settings: &PicardSettings,
    paths: &PathBundle,
    region: Region,
) -> Result<StabilityReport> {
    let (s, sp) = match (
        picard_solve(&pair.base, a, settings),
        picard_solve(&pair.primed, a, settings),
    ) {
        (Ok(s), Ok(sp)) => (s, sp),
        (Err(Error::Divergence(_)), _) | (_, Err(Error::Divergence(_))) => {
            return Ok(StabilityReport::failed())
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    compare_solutions(pair, a, &s, &sp, paths, region)
}

/// As [`compare`], for solutions computed elsewhere.
pub fn compare_solutions(
    pair: &PerturbationPair,
    a: f64,
    s: &Solution,
    sp: &Solution,
    paths: &PathBundle,
    region: Region,
) -> Result<StabilityReport> {
    let grid = *pair.base.grid();
    let scheme = pair.base.scheme()?;
    let p = pair.p;
    let nx = grid.space.nodes();
    let n = pair.base.dim();
    let dz = sp.zeta.sub(&s.zeta)?;
    let dy = sp.y.sub(&s.y)?;

    let dz_src = Source::Nodes(dz.clone());
    let qv = quadratic_variation_paths(&grid, &dz_src, paths)?;
    let lhs_hp = lp_norm(&qv, p);
    let f = driver_source(pair.base.driver(), &grid, &s.zeta)?;
    let fp = driver_source(pair.primed.driver(), &grid, &sp.zeta)?;
    let df = fp.sub(&f, &grid)?;
    let tv = total_variation_paths(&grid, &df, paths)?;
    let dy0 = dy.at(0, grid.space.center()).iter().map(|v| v * v).sum::<f64>().sqrt();
    let lhs_sp = dy0 + lhs_hp + lp_norm(&tv, p);
    let lhs_hbmo = hbmo_norm(&scheme, &dz, region)?.value;
    let var_bmo = {
        let e = scheme.backward_accumulate(&df.norm(false), &vec![0.0; nx])?;
        sup_with_argmax(&grid, &e, region).value
    };
    let lhs_sbmo = dy0 + lhs_hbmo + var_bmo;

    // Terminal differences for the scaled terminal values a Ξ.
    let dxi: Vec<f64> = pair
        .primed
        .terminal()
        .iter()
        .zip(pair.base.terminal())
        .map(|(u, v)| a * (u - v))
        .collect();
    let mean = scheme.conditional_expectation(&dxi)?;
    let mean_dxi_vec = mean.at(0, grid.space.center()).to_vec();
    let mean_dxi = mean_dxi_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    let centred: Vec<f64> = dxi
        .chunks_exact(n)
        .flat_map(|c| c.iter().zip(&mean_dxi_vec).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let dl_lp = terminal_lp_norm_vec(&grid, &centred, n, p, paths)?;
    let dxi_lp = terminal_lp_norm_vec(&grid, &dxi, n, p, paths)?;
    let dl_bmo = terminal_bmo_norm(&scheme, &dxi, region)?.value;

    let mut dzeta = s.zeta.clone();
    for i in 0..dzeta.slices() {
        for j in 0..nx {
            let w = pair.delta.get(i, j, 0).sqrt();
            dzeta.at_mut(i, j).iter_mut().for_each(|v| *v *= w);
        }
    }
    let dsrc = Source::Nodes(dzeta.clone());
    let delta_h2p_sq = hp_norm(&grid, &dsrc, 2.0 * p, paths)?.powi(2);
    let delta_hbmo_sq = hbmo_norm(&scheme, &dzeta, region)?.value.powi(2);

    let smallness = s.hbmo_zeta.value + sp.hbmo_zeta.value;
    let theta = pair.base.driver().theta().max(pair.primed.driver().theta());
    let max_contraction = match (s.contraction_factor(), sp.contraction_factor()) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (x, y) => x.or(y),
    };
    let mut report = StabilityReport {
        diverged: false,
        lhs_hp,
        lhs_sp,
        lhs_hbmo,
        lhs_sbmo,
        dl_lp,
        dxi_lp,
        dl_bmo,
        delta_h2p_sq,
        delta_hbmo_sq,
        mean_dxi,
        smallness,
        smallness_product: theta * smallness,
        max_contraction,
        contraction_flag: max_contraction.is_some_and(|c| c > CONTRACTION_WARNING),
        ratios: None,
    };
    let rhs = report.rhs();
    if rhs.iter().all(|&r| r > 0.0) {
        let lhs = report.lhs();
        report.ratios = Some([lhs[0] / rhs[0], lhs[1] / rhs[1], lhs[2] / rhs[2], lhs[3] / rhs[3]]);
    }
    Ok(report)
}

fn terminal_lp_norm_vec(grid: &Grid, g: &[f64], n: usize, p: f64, paths: &PathBundle) -> Result<f64> {
    let f = GridFunction::from_vec(1, grid.space.nodes(), n, g.to_vec())?;
    let mut buf = vec![0.0; n];
    let vals: Vec<f64> = paths
        .terminal_values()
        .into_iter()
        .map(|x| {
            f.interpolate(grid, 0, x, &mut buf);
            buf.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect();
    Ok(lp_norm(&vals, p))
}

/// Least-squares slope of `log lhs` against `log rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<(f64, f64)>,
    /// `max(lhs/rhs) / min(lhs/rhs)` over the family.
    pub ratio_spread: f64,
}

/// Fits the decay order of `lhs` in `rhs` over a family; needs at least three
/// members with positive values.
pub fn decay_study(points: &[(f64, f64)]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(r, l)| r > 0.0 && l > 0.0 && r.is_finite() && l.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(invalid(format!(
            "decay study needs at least 3 members with positive norms, got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("decay study needs distinct right-hand sides"));
    }
    let slope = sxy / sxx;
    let ratios: Vec<f64> = pts.iter().map(|(r, l)| l / r).collect();
    let max = ratios.iter().copied().fold(f64::MIN, f64::max);
    let min = ratios.iter().copied().fold(f64::MAX, f64::min);
    Ok(DecayFit {
        slope,
        intercept: my - slope * mx,
        points: pts,
        ratio_spread: max / min,
    })
}

#[derive(Debug, Serialize)]
struct FlatRow {
    label: String,
    eps: f64,
    diverged: bool,
    lhs_hp: f64,
    lhs_sp: f64,
    lhs_hbmo: f64,
    lhs_sbmo: f64,
    dl_lp: f64,
    dxi_lp: f64,
    dl_bmo: f64,
    delta_h2p_sq: f64,
    delta_hbmo_sq: f64,
    mean_dxi: f64,
    smallness: f64,
    smallness_product: f64,
    contraction_flag: bool,
    ratio_hp: Option<f64>,
    ratio_sp: Option<f64>,
    ratio_hbmo: Option<f64>,
    ratio_sbmo: Option<f64>,
}

/// Writes one CSV row per `(label, ε, report)`.
pub fn write_reports_csv<W: Write>(rows: &[(String, f64, StabilityReport)], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for (label, eps, r) in rows {
        let ratio = |k: usize| r.ratios.map(|x| x[k]);
        wr.serialize(FlatRow {
            label: label.clone(),
            eps: *eps,
            diverged: r.diverged,
            lhs_hp: r.lhs_hp,
            lhs_sp: r.lhs_sp,
            lhs_hbmo: r.lhs_hbmo,
            lhs_sbmo: r.lhs_sbmo,
            dl_lp: r.dl_lp,
            dxi_lp: r.dxi_lp,
            dl_bmo: r.dl_bmo,
            delta_h2p_sq: r.delta_h2p_sq,
            delta_hbmo_sq: r.delta_hbmo_sq,
            mean_dxi: r.mean_dxi,
            smallness: r.smallness,
            smallness_product: r.smallness_product,
            contraction_flag: r.contraction_flag,
            ratio_hp: ratio(0),
            ratio_sp: ratio(1),
            ratio_hbmo: ratio(2),
            ratio_sbmo: ratio(3),
        })?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_paths;
    use crate::qbsde::{BilinearDriver, QuadraticDriver};

    fn grid() -> Grid {
        Grid::with_resolution(1.0, 50, 201).unwrap()
    }

    fn samples() -> Vec<Vec<f64>> {
        (1..=200).map(|k| vec![-5.0 + 0.05 * k as f64]).filter(|z| z[0] != 0.0).collect()
    }

    #[test]
    fn envelope_of_identical_and_scaled_drivers() {
        let g = grid();
        let f = BilinearDriver::scalar(1.0).unwrap();
        let d = delta_bound(&f, &f, &g, &samples()).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
        let fp = f.scaled(1.1);
        let d = delta_bound(&f, &fp, &g, &samples()).unwrap();
        assert!(d.values().iter().all(|&v| v <= 0.1 * 0.5 * (1.0 + 1e-12)));
        assert!(delta_bound(&f, &fp, &g, &[]).is_err());
        assert!(delta_bound(&f, &fp, &g, &[vec![0.0]]).is_err());
    }

    #[test]
    fn envelope_of_oscillating_perturbation() {
        let g = Grid::with_resolution(1.0, 2, 5).unwrap();
        let f = QuadraticDriver::new(1, 0.5, |_, _, z, o| o[0] = 0.5 * z[0] * z[0]).unwrap();
        let fp = QuadraticDriver::new(1, 0.7, |_, _, z, o| o[0] = 0.5 * z[0] * z[0] + 0.1 * z[0].sin() * z[0] * z[0])
            .unwrap();
        let zs: Vec<Vec<f64>> = (1..=20_000).map(|k| vec![k as f64 * 1e-3]).collect();
        let d = delta_bound(&f, &fp, &g, &zs).unwrap();
        let oracle = zs.iter().map(|z| 0.1 * z[0].sin().abs()).fold(0.0, f64::max);
        assert!((d.get(0, 0, 0) - oracle).abs() < 1e-15);
        assert!((d.get(0, 0, 0) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn identical_specs_give_zero_and_shift_is_invisible_to_zeta() {
        let g = grid();
        let f = BilinearDriver::scalar(1.0).unwrap();
        let base = BsdeSpec::from_fn(g, f.clone(), |x, o| o[0] = x.sin()).unwrap();
        let paths = sample_paths(11, 2000, &g.time).unwrap();
        let pair = PerturbationPair::sampled(base.clone(), base.clone(), 2.0, &samples()).unwrap();
        let r = compare(&pair, 0.3, &PicardSettings::default(), &paths, Region::Core).unwrap();
        assert_eq!(r.lhs(), [0.0; 4]);
        assert_eq!(r.rhs(), [0.0; 4]);
        let shifted = base.with_terminal(base.terminal().iter().map(|v| v + 0.5).collect()).unwrap();
        let pair = PerturbationPair::sampled(base, shifted, 2.0, &samples()).unwrap();
        let r = compare(&pair, 0.3, &PicardSettings::default(), &paths, Region::Core).unwrap();
        assert!(r.lhs_hbmo < 1e-12);
        assert!((r.lhs_sbmo - 0.15).abs() < 1e-10, "{}", r.lhs_sbmo);
        assert!((r.mean_dxi - 0.15).abs() < 1e-12);
    }

    #[test]
    fn swapping_preserves_difference_norms() {
        let g = grid();
        let f = BilinearDriver::scalar(1.0).unwrap();
        let base = BsdeSpec::from_fn(g, f.clone(), |x, o| o[0] = x.sin()).unwrap();
        let primed = BsdeSpec::from_fn(g, f.scaled(1.05), |x, o| o[0] = 1.02 * x.sin()).unwrap();
        let paths = sample_paths(5, 2000, &g.time).unwrap();
        let pair = PerturbationPair::sampled(base, primed, 2.0, &samples()).unwrap();
        let r1 = compare(&pair, 0.3, &PicardSettings::default(), &paths, Region::Core).unwrap();
        let r2 = compare(&pair.swapped(), 0.3, &PicardSettings::default(), &paths, Region::Core).unwrap();
        assert_eq!(r1.lhs_hp, r2.lhs_hp);
        assert_eq!(r1.lhs_hbmo, r2.lhs_hbmo);
        assert_eq!(r1.dl_lp, r2.dl_lp);
        assert_eq!(r1.dl_bmo, r2.dl_bmo);
    }

    #[test]
    fn decay_fit() {
        let pts = [(1e-1, 2e-1), (1e-2, 2e-2), (1e-3, 2e-3)];
        let f = decay_study(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.ratio_spread - 1.0).abs() < 1e-12);
        assert!(decay_study(&pts[..2]).is_err());
        assert!(decay_study(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).is_err());
    }
}

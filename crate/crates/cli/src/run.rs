//! The experiments behind `qbsde run`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use qbsde_core::bmo::{hbmo_norm, semimartingale_norms, terminal_bmo_norm, Decomposition};
use qbsde_core::counterexample::{
    exit_time_samples, exp_moment, pairwise_mean_stderr, reduction_check, solvability_frontier, write_moments_csv,
};
use qbsde_core::impact::{
    check_viability_bound, demand_stability, homogeneity_report, impact_expansion, leading_term, simple_demand_oracle,
    solve_prices, write_stability_csv, Demand, Level, MarketSpec, SimpleDemand,
};
use qbsde_core::numerics::{sample_paths, Grid, GridFunction, Region, TimeRule};
use qbsde_core::qbsde::{
    driver_source, expansion, picard_solve, BilinearDriver, BsdeSpec, Coefficients, PicardSettings,
};
use qbsde_core::stability::{compare, decay_study, write_reports_csv, PerturbationPair, StabilityReport};
use qbsde_core::{Error, Expr};

use crate::config::{BsdeConfig, Config, DemandConfig, DriverConfig, Experiment, Family, ImpactConfig, LevelValue};
use crate::error::CliError;
use crate::output::{config_hash, csv_writer, fields_csv, Manifest, RunDir, Verdict};
use crate::plot::{Chart, Series};

pub struct RunOptions {
    pub out: PathBuf,
    pub plots: bool,
    pub threads: usize,
}

/// Runs the configured experiment and writes the manifest, also after a divergence.
pub fn run(cfg: &Config, opts: &RunOptions) -> Result<Manifest, CliError> {
    let start = Instant::now();
    let mut dir = RunDir::create(&opts.out, opts.plots)?;
    let grid = cfg.grid()?;
    let result = match cfg.experiment {
        Experiment::Solve => solve(cfg, grid, &mut dir),
        Experiment::Expand => expand(cfg, grid, &mut dir),
        Experiment::Stability => stability(cfg, grid, &mut dir),
        Experiment::Impact => impact(cfg, grid, &mut dir),
        Experiment::ImpactExpand => impact_expand(cfg, grid, &mut dir),
        Experiment::Counterexample => counterexample(cfg, &mut dir),
        Experiment::Norms => norms(cfg, grid, &mut dir),
    };
    let result = match result {
        Err(e) if !matches!(e, CliError::Diverged { .. }) => return Err(e),
        other => other,
    };
    let config_sha256 = config_hash(cfg)?;
    let config = serde_json::to_value(cfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let manifest = dir.finish(|outputs, verdicts| Manifest {
        tool: "qbsde".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_sha256,
        threads: opts.threads,
        wall_time_s,
        plots: opts.plots,
        outputs,
        verdicts,
        config,
    })?;
    result.map(|_| manifest)
}

#[derive(Serialize)]
struct DivergenceFile<'a> {
    iterations: usize,
    changes: &'a [f64],
    iterate_norms: &'a [f64],
    smallness_product: f64,
}

/// Writes `divergence.json` for a failed fixed-point iteration.
fn diverged<T>(dir: &mut RunDir, r: qbsde_core::Result<T>) -> Result<T, CliError> {
    match r {
        Err(Error::Divergence(rep)) => {
            dir.write_json(
                "divergence.json",
                &DivergenceFile {
                    iterations: rep.iterations,
                    changes: &rep.changes,
                    iterate_norms: &rep.iterate_norms,
                    smallness_product: rep.smallness_product,
                },
            )?;
            dir.verdicts.push(Verdict::flag("picard converged", rep.iterations as f64, false));
            Err(CliError::Diverged {
                message: rep.to_string(),
                report: dir.path("divergence.json"),
            })
        }
        other => Ok(other?),
    }
}

fn schema(path: &str) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| CliError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    }
}

fn driver(cfg: &DriverConfig, scale: f64) -> Result<BilinearDriver, CliError> {
    match cfg {
        DriverConfig::Scalar { c } => BilinearDriver::scalar(c * scale),
        DriverConfig::Tensor { n, coefficients } => {
            BilinearDriver::new(*n, Coefficients::Constant(coefficients.iter().map(|v| v * scale).collect()))
        }
        DriverConfig::Zero { n } => BilinearDriver::zero(*n),
    }
    .map_err(schema("bsde.driver"))
}

fn bsde_spec(
    grid: Grid,
    b: &BsdeConfig,
    rule: TimeRule,
    scale: f64,
    perturbation: Option<(&[Expr], f64)>,
) -> Result<BsdeSpec, CliError> {
    let t = grid.time.horizon();
    let spec = BsdeSpec::from_fn(grid, driver(&b.driver, scale)?, |x, o| {
        for (c, e) in b.terminal.iter().enumerate() {
            o[c] = e.eval(t, x);
        }
        if let Some((phi, eps)) = perturbation {
            for (c, e) in phi.iter().enumerate() {
                o[c] += eps * e.eval(t, x);
            }
        }
    })
    .map_err(schema("bsde.terminal"))?;
    Ok(spec.with_rule(rule))
}

fn demand(grid: &Grid, d: &DemandConfig) -> Result<Demand, CliError> {
    match d {
        DemandConfig::Field { gamma } => Ok(Demand::Field(GridFunction::from_fn(grid, gamma.len(), |t, x, o| {
            for (c, e) in gamma.iter().enumerate() {
                o[c] = e.eval(t, x);
            }
        }))),
        DemandConfig::Simple { times, levels } => {
            let levels = levels
                .iter()
                .zip(times)
                .map(|(l, &tau)| {
                    let state = l.iter().any(|v| matches!(v, LevelValue::Expr(e) if e.depends_on_x()));
                    let value = |v: &LevelValue, x: f64| match v {
                        LevelValue::Number(n) => *n,
                        LevelValue::Expr(e) => e.eval(tau, x),
                    };
                    if state {
                        Level::State(grid.space.points().flat_map(|x| l.iter().map(move |v| value(v, x))).collect())
                    } else {
                        Level::Constant(l.iter().map(|v| value(v, 0.0)).collect())
                    }
                })
                .collect();
            Ok(Demand::Simple(SimpleDemand::new(grid, times, levels).map_err(schema("impact.demand"))?))
        }
    }
}

fn market(grid: Grid, i: &ImpactConfig, rule: TimeRule) -> Result<MarketSpec, CliError> {
    let t = grid.time.horizon();
    let m = MarketSpec::from_fn(
        grid,
        |x, o| {
            for (c, e) in i.dividend.iter().enumerate() {
                o[c] = e.eval(t, x);
            }
        },
        demand(&grid, &i.demand)?,
        i.a,
    )
    .map_err(schema("impact"))?;
    Ok(m.with_rule(rule))
}

fn seed(cfg: &Config) -> u64 {
    cfg.seed.expect("validated configurations carry a seed when one is needed")
}

fn slice_points(grid: &Grid, f: &GridFunction, i: usize, c: usize) -> Vec<(f64, f64)> {
    grid.indices(Region::Core).map(|j| (grid.space.x(j), f.get(i, j, c))).collect()
}

#[derive(Serialize)]
struct SolveSummary {
    y00: Vec<f64>,
    residual: f64,
    gradient_gap: f64,
    hbmo_zeta: f64,
    iterations: usize,
    contraction_factor: Option<f64>,
    terminal_bmo: f64,
    smallness_product: f64,
}

fn solve(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cfg.bsde.as_ref().expect("validated");
    let spec = bsde_spec(grid, b, cfg.solver.rule, 1.0, None)?;
    let sol = diverged(dir, picard_solve(&spec, b.a, &cfg.solver.picard()))?;
    dir.write_csv_with("solution.csv", |buf| {
        fields_csv(buf, &grid, Region::Core, &[("y", &sol.y), ("zeta", &sol.zeta)])
    })?;
    let terminal_bmo = spec.terminal_norm(cfg.solver.region)?.value;
    let summary = SolveSummary {
        y00: sol.y0(&grid).to_vec(),
        residual: sol.residual,
        gradient_gap: sol.gradient_gap,
        hbmo_zeta: sol.hbmo_zeta.value,
        iterations: sol.iterations,
        contraction_factor: sol.contraction_factor(),
        terminal_bmo,
        smallness_product: b.a.abs() * terminal_bmo,
    };
    dir.write_json("summary.json", &summary)?;
    dir.verdicts.push(Verdict::flag("picard converged", sol.iterations as f64, true));
    dir.verdicts.push(Verdict::info("Y(0,0)", summary.y00[0]));
    dir.verdicts.push(Verdict::info("residual", sol.residual));
    dir.write_svg(
        "solution.svg",
        Chart::new("Y and ζ at t = 0", "x", "value")
            .with(Series::line("Y(0,x)", slice_points(&grid, &sol.y, 0, 0)))
            .with(Series::line("ζ(0,x)", slice_points(&grid, &sol.zeta, 0, 0)))
            .render(),
    )
}

#[derive(Serialize)]
struct ExpandSummary {
    order: usize,
    lnorm: f64,
    rho: Option<f64>,
    kappa: f64,
    kappa_defaulted: bool,
    theta: f64,
    partial_sums: Option<qbsde_core::qbsde::PartialSumCheck>,
}

#[derive(Serialize)]
struct ComparisonRow {
    a: f64,
    order: usize,
    error_hbmo: f64,
}

fn expand(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cfg.bsde.as_ref().expect("validated");
    let e = cfg.expand.clone().unwrap_or_default();
    let spec = bsde_spec(grid, b, cfg.solver.rule, 1.0, None)?;
    let series = expansion(&spec, e.order, e.kappa, cfg.solver.region)?;
    let n = spec.dim();
    let c = grid.space.center();
    dir.write_csv_with("coefficients.csv", |buf| {
        let mut w = csv_writer(buf);
        let mut header: Vec<String> = ["k", "zeta_hbmo", "t_argmax", "x_argmax"].map(String::from).to_vec();
        header.extend((0..n).map(|k| format!("y00_{k}")));
        w.write_record(&header)?;
        for (k, norm) in series.coeff_norms.iter().enumerate() {
            let mut rec = vec![
                (k + 1).to_string(),
                norm.value.to_string(),
                norm.t_argmax.to_string(),
                norm.x_argmax.to_string(),
            ];
            rec.extend(series.y[k].at(0, c).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    })?;
    let partial_sums = series.partial_sum_check();
    if let Some(l) = &partial_sums {
        dir.verdicts.push(Verdict::at_most(
            "partial-sum bound",
            l.partial_sums.last().copied().unwrap_or(0.0),
            l.bound,
        ));
    }
    dir.write_json(
        "summary.json",
        &ExpandSummary {
            order: e.order,
            lnorm: series.lnorm,
            rho: series.rho,
            kappa: series.constants.kappa,
            kappa_defaulted: series.constants.kappa_defaulted,
            theta: series.constants.theta,
            partial_sums,
        },
    )?;
    let mut chart = Chart::new("Coefficient norms", "k", "‖ζ^(k)‖").log_y().with(Series::markers(
        "‖ζ^(k)‖",
        series.coeff_norms.iter().enumerate().map(|(k, s)| ((k + 1) as f64, s.value)).collect(),
    ));
    if !e.compare.is_empty() {
        let scheme = spec.scheme()?;
        let settings = PicardSettings {
            tol: cfg.solver.tol.min(1e-12),
            ..cfg.solver.picard()
        };
        let mut rows = Vec::new();
        for &a in &e.compare {
            let exact = diverged(dir, picard_solve(&spec, a, &settings))?;
            let errs: Vec<f64> = (1..=e.order)
                .map(|k| {
                    let (_, z) = series.partial_sum(a, k);
                    Ok(hbmo_norm(&scheme, &z.sub(&exact.zeta)?, cfg.solver.region)?.value)
                })
                .collect::<Result<_, Error>>()?;
            if series.rho.is_some_and(|r| a.abs() < r) {
                let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
                dir.verdicts.push(Verdict::flag(format!("truncation error decreases at a = {a}"), errs[errs.len() - 1], decreasing));
            }
            chart = chart.with(Series::line(
                format!("error at a = {a}"),
                errs.iter().enumerate().map(|(k, v)| ((k + 1) as f64, *v)).collect(),
            ));
            rows.extend(errs.into_iter().enumerate().map(|(k, error_hbmo)| ComparisonRow {
                a,
                order: k + 1,
                error_hbmo,
            }));
        }
        dir.write_rows("comparison.csv", &rows)?;
    }
    dir.write_svg("coefficients.svg", chart.render())
}

fn z_samples(n: usize) -> Vec<Vec<f64>> {
    let grid: Vec<f64> = (1..=100).map(|k| -5.0 + 0.1 * k as f64).filter(|v| v.abs() > 1e-12).collect();
    let mut out = Vec::new();
    for c in 0..n {
        for &v in &grid {
            let mut z = vec![0.0; n];
            z[c] = v;
            out.push(z);
        }
    }
    if n > 1 {
        let s = 1.0 / (n as f64).sqrt();
        out.extend(grid.iter().map(|&v| vec![v * s; n]));
    }
    out
}

#[derive(Serialize)]
struct DecayRow {
    family: &'static str,
    estimate: &'static str,
    slope: f64,
    intercept: f64,
    ratio_spread: f64,
    members: usize,
}

fn stability(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cfg.bsde.as_ref().expect("validated");
    let st = cfg.stability.clone().unwrap_or_default();
    let rule = cfg.solver.rule;
    let base = bsde_spec(grid, b, rule, 1.0, None)?;
    let n = base.dim();
    let phi: Vec<Expr> = if st.perturbation.is_empty() {
        vec![Expr::parse("cos(x)").expect("valid expression"); n]
    } else {
        st.perturbation.clone()
    };
    let paths = sample_paths(seed(cfg), st.paths, &grid.time)?;
    let zs = z_samples(n);
    let settings = cfg.solver.picard();
    let label = match st.family {
        Family::Terminal => "terminal",
        Family::Driver => "driver",
    };
    let mut rows: Vec<(String, f64, StabilityReport)> = Vec::new();
    for &eps in &st.eps {
        let primed = match st.family {
            Family::Terminal => bsde_spec(grid, b, rule, 1.0, Some((&phi, eps)))?,
            Family::Driver => bsde_spec(grid, b, rule, 1.0 + eps, None)?,
        };
        let pair = PerturbationPair::sampled(base.clone(), primed, st.p, &zs)?;
        let r = compare(&pair, b.a, &settings, &paths, cfg.solver.region)?;
        rows.push((label.to_string(), eps, r));
    }
    dir.write_csv_with("stability.csv", |buf| Ok(write_reports_csv(&rows, buf)?))?;
    if rows.iter().any(|r| r.2.diverged) {
        dir.verdicts.push(Verdict::flag("all family members solved", 0.0, false));
    }
    if rows.iter().any(|r| r.2.contraction_flag) {
        dir.verdicts.push(Verdict::info("contraction factor above 0.9 in some member", 1.0));
    }
    let pick = |r: &StabilityReport, estimate: &str| -> (f64, f64) {
        match (st.family, estimate) {
            (Family::Terminal, "hp") => (r.dl_lp, r.lhs_hp),
            (Family::Terminal, _) => (r.dl_bmo, r.lhs_hbmo),
            (Family::Driver, "hp") => (r.delta_h2p_sq, r.lhs_hp),
            (Family::Driver, _) => (r.delta_hbmo_sq, r.lhs_hbmo),
        }
    };
    let mut decay = Vec::new();
    let mut chart = Chart::new(format!("{label} perturbations"), "right-hand side", "left-hand side").log_log();
    for estimate in ["hp", "hbmo"] {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| !r.2.diverged).map(|r| pick(&r.2, estimate)).collect();
        chart = chart.with(Series::markers(estimate, pts.clone()));
        match decay_study(&pts) {
            Ok(fit) => {
                dir.verdicts.push(Verdict::at_most(format!("{estimate} slope - 1"), (fit.slope - 1.0).abs(), 0.1));
                dir.verdicts.push(Verdict::at_most(format!("{estimate} ratio spread"), fit.ratio_spread, 5.0));
                decay.push(DecayRow {
                    family: label,
                    estimate: if estimate == "hp" { "hp" } else { "hbmo" },
                    slope: fit.slope,
                    intercept: fit.intercept,
                    ratio_spread: fit.ratio_spread,
                    members: fit.points.len(),
                });
            }
            Err(e) => {
                dir.verdicts.push(Verdict::flag(format!("{estimate} decay fit: {e}"), f64::NAN, false));
            }
        }
    }
    dir.write_rows("decay.csv", &decay)?;
    dir.write_svg("decay.svg", chart.render())
}

#[derive(Serialize)]
struct ImpactSummary {
    s0: Option<Vec<f64>>,
    viability: qbsde_core::impact::Viability,
    density: Option<qbsde_core::impact::DensityCheck>,
    iterations: Option<usize>,
    oracle_gap: Option<f64>,
}

fn impact(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let i = cfg.impact.as_ref().expect("validated");
    let m = market(grid, i, cfg.solver.rule)?;
    let settings = cfg.solver.picard();
    let viability = check_viability_bound(&m, i.kappa, i.threshold)?;
    dir.verdicts.push(Verdict::against(
        "viability product, sufficient condition only",
        viability.product,
        viability.threshold,
    ));
    let state_levels = matches!(m.demand(), Demand::Simple(sd) if sd.has_state_levels());
    let mut summary = ImpactSummary {
        s0: None,
        viability,
        density: None,
        iterations: None,
        oracle_gap: None,
    };
    let mut chart = Chart::new("Prices at t = 0", "x", "S(0,x)");
    let solved = if state_levels {
        None
    } else {
        let sol = diverged(dir, solve_prices(&m, &settings))?;
        let p = &sol.prices;
        dir.write_csv_with("prices.csv", |buf| {
            fields_csv(buf, &grid, Region::Core, &[("s", &p.s), ("sigma", &p.sigma), ("alpha", &p.alpha_nodes), ("r", &p.r)])
        })?;
        dir.verdicts.push(Verdict::at_most("density normalization gap", sol.density.normalization_gap, 1e-6));
        summary.s0 = Some(p.s0(&grid).to_vec());
        summary.density = Some(sol.density);
        summary.iterations = Some(sol.solution.iterations);
        chart = chart.with(Series::line("solver", slice_points(&grid, &p.s, 0, 0)));
        Some(sol.prices)
    };
    if let (Demand::Simple(_), true) = (m.demand(), i.oracle) {
        let o = simple_demand_oracle(&m)?;
        let n = m.assets();
        dir.write_csv_with("breakpoints.csv", |buf| {
            let mut w = csv_writer(buf);
            let mut header = vec!["tau".to_string(), "x".to_string()];
            header.extend((0..n).map(|c| format!("s_{c}")));
            header.push("r".into());
            w.write_record(&header)?;
            for (k, &node) in o.breakpoints.iter().enumerate() {
                for j in grid.indices(Region::Core) {
                    let mut rec = vec![grid.time.t(node).to_string(), grid.space.x(j).to_string()];
                    rec.extend(o.s_breakpoints[k][j * n..(j + 1) * n].iter().map(|v| v.to_string()));
                    rec.push(o.r_breakpoints[k][j].to_string());
                    w.write_record(&rec)?;
                }
            }
            w.flush().map_err(csv::Error::from)?;
            Ok(())
        })?;
        if let (Some(op), Some(sp)) = (&o.prices, &solved) {
            let gap = op.s.sup_diff(&sp.s, &grid, Region::Core)?;
            dir.verdicts.push(Verdict::at_most("oracle price gap", gap, 1e-3));
            summary.oracle_gap = Some(gap);
            chart = chart.with(Series::line("backward induction", slice_points(&grid, &op.s, 0, 0)));
        }
    }
    dir.write_json("summary.json", &summary)?;
    dir.write_svg("prices.svg", chart.render())?;

    if let Some(b) = i.homogeneity {
        let rep = homogeneity_report(&m, b, &settings)?;
        #[derive(Serialize)]
        struct Row<'a> {
            identity: &'a str,
            deviation: f64,
        }
        let rows: Vec<Row> = rep.deviations.iter().map(|(k, v)| Row { identity: k, deviation: *v }).collect();
        dir.write_rows("homogeneity.csv", &rows)?;
        dir.verdicts.push(Verdict::at_most(format!("homogeneity deviation at b = {b}"), rep.max_deviation(), 1e-8));
    }
    if let Some(s) = &i.stability {
        let paths = sample_paths(seed(cfg), s.paths, &grid.time)?;
        let every: Vec<usize> = s.pieces.iter().map(|m| grid.time.steps() / m).collect();
        let rows = diverged(dir, demand_stability(&m, &every, s.p, &paths, &settings))?;
        dir.write_csv_with("demand_stability.csv", |buf| Ok(write_stability_csv(&rows, buf)?))?;
        let combined: Vec<f64> = rows.iter().map(|r| r.combined).collect();
        let monotone = combined.windows(2).all(|w| w[1] < w[0]);
        let worst = combined.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
        dir.verdicts.push(Verdict::flag("combined norm decreases", combined.last().copied().unwrap_or(0.0), monotone));
        if combined.len() > 1 {
            dir.verdicts.push(Verdict::info("smallest shrink factor", worst));
        }
        dir.write_svg(
            "demand_stability.svg",
            Chart::new("Demand approximation", "pieces", "combined norm")
                .log_log()
                .with(Series::markers(
                    "combined",
                    s.pieces.iter().zip(&combined).map(|(&m, &c)| (m as f64, c)).collect(),
                ))
                .render(),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ImpactExpandSummary {
    order: usize,
    rho: Option<f64>,
    viability: qbsde_core::impact::Viability,
}

#[derive(Serialize)]
struct ImpactComparisonRow {
    a: f64,
    order: usize,
    price_gap: f64,
    sigma_gap: f64,
}

fn impact_expand(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let i = cfg.impact.as_ref().expect("validated");
    let m = market(grid, i, cfg.solver.rule)?;
    let series = impact_expansion(&m, i.order)?;
    for (k, s) in series.prices.iter().enumerate() {
        dir.write_csv_with(&format!("price_order_{k}.csv"), |buf| fields_csv(buf, &grid, Region::Core, &[("s", s)]))?;
    }
    let lead = leading_term(&m)?;
    dir.write_csv_with("leading_term.csv", |buf| fields_csv(buf, &grid, Region::Core, &[("s1", &lead)]))?;
    let gap = lead.sup_diff(&series.prices[1], &grid, Region::Core)?;
    dir.verdicts.push(Verdict::at_most("first order against leading term", gap, 1e-8));
    dir.write_json(
        "summary.json",
        &ImpactExpandSummary {
            order: i.order,
            rho: series.rho,
            viability: check_viability_bound(&m, i.kappa, i.threshold)?,
        },
    )?;
    let mut chart = Chart::new("Price coefficients at t = 0", "x", "S^(k)(0,x)");
    for k in 1..=i.order.min(3) {
        chart = chart.with(Series::line(format!("k = {k}"), slice_points(&grid, &series.prices[k], 0, 0)));
    }
    dir.write_svg("price_orders.svg", chart.render())?;
    if !i.compare.is_empty() {
        let mut rows = Vec::new();
        for &a in &i.compare {
            let m_a = m.with_risk_aversion(a).map_err(schema("impact.compare"))?;
            let sol = diverged(dir, solve_prices(&m_a, &cfg.solver.picard()))?;
            let ev = series.evaluate(a, i.order)?;
            rows.push(ImpactComparisonRow {
                a,
                order: i.order,
                price_gap: ev.s.sup_diff(&sol.prices.s, &grid, Region::Core)?,
                sigma_gap: ev.sigma.sup_diff(&sol.prices.sigma, &grid, Region::Core)?,
            });
        }
        dir.write_rows("comparison.csv", &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TailRow {
    a: f64,
    samples: usize,
    running_mean: f64,
}

#[derive(Serialize)]
struct ExitSummary {
    paths: usize,
    dt: f64,
    mean_exit_time: f64,
    stderr: f64,
    reference: f64,
    upper_fraction: f64,
    resampled: usize,
}

fn counterexample(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let c = cfg.counterexample.clone().unwrap_or_default();
    let samples = exit_time_samples(seed(cfg), c.paths, c.dt)?;
    let (mean, se) = pairwise_mean_stderr(&samples.values);
    let reference = PI * PI / 4.0;
    dir.verdicts.push(Verdict::flag("mean exit time within 3 stderr of π²/4", mean, (mean - reference).abs() <= 3.0 * se));
    let upper = samples.upper.iter().filter(|&&u| u).count() as f64 / samples.npaths as f64;
    dir.write_json(
        "summary.json",
        &ExitSummary {
            paths: samples.npaths,
            dt: samples.dt,
            mean_exit_time: mean,
            stderr: se,
            reference,
            upper_fraction: upper,
            resampled: samples.resampled,
        },
    )?;
    let moments = c.a.iter().map(|&a| exp_moment(a, &samples)).collect::<Result<Vec<_>, _>>()?;
    dir.write_csv_with("moments.csv", |buf| Ok(write_moments_csv(&moments, buf)?))?;
    let mut tail = Vec::new();
    for m in &moments {
        match m.margin() {
            Some(margin) => dir.verdicts.push(Verdict::flag(format!("moment at a = {} within 3 stderr", m.a), margin, margin >= 0.0)),
            None => dir.verdicts.push(Verdict::info(
                format!("moment at a = {}: last running-mean change", m.a),
                m.tail.as_ref().map_or(f64::NAN, |t| t.last_change),
            )),
        }
        if let Some(t) = &m.tail {
            tail.extend(t.running_means.iter().map(|&(samples, running_mean)| TailRow {
                a: m.a,
                samples,
                running_mean,
            }));
        }
    }
    if !tail.is_empty() {
        dir.write_rows("tail.csv", &tail)?;
    }
    let frontier = c.frontier.iter().map(|[a, t]| solvability_frontier(*a, *t)).collect::<Result<Vec<_>, _>>()?;
    dir.write_rows("frontier.csv", &frontier)?;
    if !c.reduction.is_empty() {
        let rows = c.reduction.iter().map(|[a, t]| reduction_check(*a, *t, &samples)).collect::<Result<Vec<_>, _>>()?;
        dir.write_rows("reduction.csv", &rows)?;
    }
    let curve: Vec<(f64, f64)> = (0..=95).map(|k| k as f64 / 100.0).map(|a| (a, 1.0 / (a * FRAC_PI_2).cos())).collect();
    let est: Vec<(f64, f64)> = moments.iter().filter(|m| m.a < 1.0).map(|m| (m.a, m.estimate)).collect();
    dir.write_svg(
        "moments.svg",
        Chart::new("Exponential moments of the exit time", "a", "E exp(a² τ / 2)")
            .log_y()
            .with(Series::line("1 / cos(aπ/2)", curve))
            .with(Series::markers("estimate", est))
            .render(),
    )
}

#[derive(Serialize)]
struct NormsSummary {
    terminal_bmo: f64,
    y00: Vec<f64>,
    iterations: usize,
}

fn norms(cfg: &Config, grid: Grid, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cfg.bsde.as_ref().expect("validated");
    let n = cfg.norms.clone().unwrap_or_default();
    let spec = bsde_spec(grid, b, cfg.solver.rule, 1.0, None)?;
    let sol = diverged(dir, picard_solve(&spec, b.a, &cfg.solver.picard()))?;
    let drift = driver_source(spec.driver(), &grid, &sol.zeta)?.map(|v| -v);
    let paths = sample_paths(seed(cfg), n.paths, &grid.time)?;
    let scheme = spec.scheme()?;
    let rep = semimartingale_norms(
        &scheme,
        &sol.y,
        Some(Decomposition {
            zeta: &sol.zeta,
            drift: &drift,
        }),
        &n.p,
        &paths,
        cfg.solver.region,
    )?;
    dir.write_csv_with("norms.csv", |buf| Ok(rep.write_csv(buf)?))?;
    let terminal: Vec<f64> = spec.terminal().iter().map(|v| b.a * v).collect();
    let terminal_bmo = terminal_bmo_norm(&scheme, &terminal, cfg.solver.region)?.value;
    dir.verdicts.push(Verdict::info("Hbmo norm of ζ", rep.hbmo.value));
    dir.verdicts.push(Verdict::info("Sbmo norm of Y", rep.sbmo));
    dir.write_json(
        "summary.json",
        &NormsSummary {
            terminal_bmo,
            y00: sol.y0(&grid).to_vec(),
            iterations: sol.iterations,
        },
    )
}

use qbsde_core::impact::{
    density_check, impact_driver, impact_expansion, leading_term, simple_demand_oracle, solve_prices, Demand,
    Level, MarketSpec, SimpleDemand,
};
use qbsde_core::numerics::{quad_expect, Grid, GridFunction, Region};
use qbsde_core::qbsde::{Driver, Loc, PicardSettings};

fn psi(x: f64) -> f64 {
    x + 0.3 * x.sin()
}

fn field_market(g: Grid, a: f64) -> MarketSpec {
    let gamma = GridFunction::from_fn(&g, 1, |t, x, o| o[0] = 0.5 + 0.3 * (x - t).tanh());
    MarketSpec::from_fn(g, |x, o| o[0] = psi(x), Demand::Field(gamma), a).unwrap()
}

#[test]
fn terminal_prices_match_the_dividend() {
    let g = Grid::with_resolution(1.0, 40, 201).unwrap();
    for a in [0.05, 0.2, 0.4] {
        let m = field_market(g, a);
        let sol = solve_prices(&m, &PicardSettings::default()).unwrap();
        let nt = g.time.steps();
        let got = sol.prices.s.slice(nt);
        for (j, x) in g.space.points().enumerate() {
            assert!((got[j] - psi(x)).abs() <= 1e-14 * psi(x).abs().max(1.0), "a {a} x {x}");
        }
        assert!(sol.prices.r.slice(nt).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_demand_has_no_impact() {
    let g = Grid::with_resolution(1.0, 40, 201).unwrap();
    let m = MarketSpec::from_fn(g, |x, o| o[0] = psi(x), Demand::constant(&g, &[0.0]), 0.3).unwrap();
    let sol = solve_prices(&m, &PicardSettings::default()).unwrap();
    let p = &sol.prices;
    assert!(p.r.values().iter().all(|&v| v.abs() <= 1e-14));
    assert!(p.alpha_nodes.values().iter().all(|&v| v.abs() <= 1e-14));
    let s0 = m.scheme().unwrap().conditional_expectation(m.dividend()).unwrap();
    assert!(p.s.sup_diff(&s0, &g, Region::Full).unwrap() <= 1e-13);
    let series = impact_expansion(&m, 3).unwrap();
    for k in 1..=3 {
        assert!(series.prices[k].values().iter().all(|&v| v.abs() <= 1e-14));
    }
}

#[test]
fn density_is_normalized() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let m = field_market(g, 0.3);
    let sol = solve_prices(&m, &PicardSettings::default()).unwrap();
    let d = density_check(&m.scheme().unwrap(), &sol.prices).unwrap();
    assert!(d.normalization_gap <= 1e-6, "{d:?}");
}

#[test]
fn unit_spread_impact_driver_values() {
    let g = Grid::with_resolution(1.0, 4, 21).unwrap();
    let gamma = 0.6;
    let d = impact_driver(&g, &Demand::constant(&g, &[gamma])).unwrap();
    let loc = Loc { step: 1, right: false, node: 3, t: g.time.t(1), x: g.space.x(3) };
    let mut out = [0.0; 2];
    d.eval(&loc, &[0.0, 1.0], &mut out);
    assert!((out[0] - gamma * gamma / 2.0).abs() < 1e-15);
    assert!((out[1] + gamma).abs() < 1e-15);
    let d0 = impact_driver(&g, &Demand::constant(&g, &[0.0])).unwrap();
    d0.eval(&loc, &[0.0, 0.7], &mut out);
    assert_eq!(out, [0.0, 0.0]);
}

#[test]
fn leading_term_of_squared_dividend() {
    let g = Grid::with_resolution(1.0, 200, 801).unwrap();
    let m = MarketSpec::from_fn(g, |x, o| o[0] = x * x, Demand::constant(&g, &[1.0]), 0.1).unwrap();
    let l = leading_term(&m).unwrap();
    for i in [0, 100, 150] {
        let t = g.time.t(i);
        for j in g.indices(Region::Core).step_by(37) {
            let x = g.space.x(j);
            let want = -(4.0 * x * x * (1.0 - t) + 2.0 * (1.0 - t) * (1.0 - t));
            let got = l.get(i, j, 0);
            assert!((got - want).abs() <= 1e-3 * want.abs().max(1.0), "t {t} x {x}: {got} vs {want}");
        }
    }
}

#[test]
fn leading_term_governs_small_risk_aversion() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let m = field_market(g, 0.1);
    let rho = impact_expansion(&m, 1).unwrap().rho.unwrap();
    let l = leading_term(&m).unwrap();
    let s0 = m.scheme().unwrap().conditional_expectation(m.dividend()).unwrap();
    let settings = PicardSettings { tol: 1e-13, ..Default::default() };
    let errs: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|f| {
            let a = f * rho;
            let s = solve_prices(&m.with_risk_aversion(a).unwrap(), &settings).unwrap().prices.s;
            let slope = s.sub(&s0).unwrap().scaled(1.0 / a);
            slope.sup_diff(&l, &g, Region::Core).unwrap()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "{errs:?}");
    }
}

#[test]
fn bachelier_oracle_is_the_gaussian_tilt() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let (a, theta) = (0.4, 0.7);
    let sd = SimpleDemand::new(&g, &[0.0, 1.0], vec![Level::Constant(vec![theta])]).unwrap();
    let m = MarketSpec::from_fn(g, |x, o| o[0] = x, Demand::Simple(sd), a).unwrap();
    let o = simple_demand_oracle(&m).unwrap();
    let p = o.prices.unwrap();
    for i in [0, 50, 99] {
        let t = g.time.t(i);
        for j in g.indices(Region::Core).step_by(23) {
            let x = g.space.x(j);
            assert!((p.s.get(i, j, 0) - (x - a * theta * (1.0 - t))).abs() <= 1e-9);
        }
    }
    let want = quad_expect(|x| x * (-a * theta * x).exp(), 0.0, 1.0).unwrap()
        / quad_expect(|x| (-a * theta * x).exp(), 0.0, 1.0).unwrap();
    assert!((p.s0(&g)[0] - want).abs() <= 1e-9);
}

#[test]
fn oracle_agrees_with_the_bsde() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let sd = SimpleDemand::new(&g, &[0.0, 0.5, 1.0], vec![Level::Constant(vec![1.0]), Level::Constant(vec![-0.5])])
        .unwrap();
    let m = MarketSpec::from_fn(g, |x, o| o[0] = psi(x), Demand::Simple(sd), 0.5).unwrap();
    let oracle = simple_demand_oracle(&m).unwrap().prices.unwrap();
    let bsde = solve_prices(&m, &PicardSettings::default()).unwrap().prices;
    let gap = oracle.s.sup_diff(&bsde.s, &g, Region::Core).unwrap();
    assert!(gap <= 1e-3, "{gap}");
    let gap_r = oracle.r.sup_diff(&bsde.r, &g, Region::Core).unwrap();
    assert!(gap_r <= 1e-3, "{gap_r}");
}

#[test]
fn bachelier_expansion_terminates() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let gamma = 0.8;
    let m = MarketSpec::from_fn(g, |x, o| o[0] = x, Demand::constant(&g, &[gamma]), 0.1).unwrap();
    let s = impact_expansion(&m, 4).unwrap();
    let want = GridFunction::from_fn(&g, 1, |t, _, o| o[0] = -gamma * (1.0 - t));
    assert!(s.prices[1].sup_diff(&want, &g, Region::Core).unwrap() <= 1e-8);
    for k in 2..=4 {
        assert!(s.prices[k].sup_abs(&g, Region::Core) <= 1e-8, "order {k}");
    }
}

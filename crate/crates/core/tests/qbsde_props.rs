use proptest::prelude::*;
use qbsde_core::bmo::hbmo_norm;
use qbsde_core::impact::impact_tensor;
use qbsde_core::numerics::{quad_expect, Grid, GridFunction, Region, Scheme};
use qbsde_core::qbsde::{
    bilinear_image, expansion, picard_solve, BilinearDriver, BsdeSpec, Coefficients, Loc, PicardSettings,
};

const LOC: Loc = Loc {
    step: 0,
    right: false,
    node: 0,
    t: 0.0,
    x: 0.0,
};

fn symmetric_tensor(n: usize, raw: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; n * n * n];
    let mut r = raw.iter().cycle();
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let v = *r.next().unwrap();
                t[(i * n + j) * n + k] = v;
                t[(i * n + k) * n + j] = v;
            }
        }
    }
    t
}

fn eval(d: &BilinearDriver, u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    d.eval_bilinear(&LOC, u, v, &mut out);
    out
}

fn close(a: &[f64], b: &[f64], scale: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-14 * scale.max(1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn driver_is_symmetric_and_bilinear(
        raw in prop::collection::vec(-2.0f64..2.0, 18),
        u in prop::collection::vec(-3.0f64..3.0, 3),
        u2 in prop::collection::vec(-3.0f64..3.0, 3),
        v in prop::collection::vec(-3.0f64..3.0, 3),
        s in -2.0f64..2.0,
    ) {
        let d = BilinearDriver::new(3, Coefficients::Constant(symmetric_tensor(3, &raw))).unwrap();
        let uv = eval(&d, &u, &v);
        prop_assert!(close(&uv, &eval(&d, &v, &u), d.theta() * norm(&u) * norm(&v)));
        let comb: Vec<f64> = u.iter().zip(&u2).map(|(a, b)| s * a + b).collect();
        let lhs = eval(&d, &comb, &v);
        let r2 = eval(&d, &u2, &v);
        for c in 0..3 {
            let rhs = s * uv[c] + r2[c];
            prop_assert!((lhs[c] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn impact_driver_is_symmetric(w in prop::collection::vec(-2.0f64..2.0, 1..4)) {
        let n = w.len() + 1;
        let d = BilinearDriver::new(n, Coefficients::Constant(impact_tensor(&w))).unwrap();
        let u: Vec<f64> = (0..n).map(|k| (k as f64 + 0.3).sin()).collect();
        let v: Vec<f64> = (0..n).map(|k| (2.0 * k as f64 - 0.7).cos()).collect();
        prop_assert!(close(&eval(&d, &u, &v), &eval(&d, &v, &u), d.theta() * norm(&u) * norm(&v)));
    }

    #[test]
    fn image_is_bilinear(s in -3.0f64..3.0, k in 0.2f64..2.0) {
        let g = Grid::with_resolution(1.0, 20, 101).unwrap();
        let sc = Scheme::new(g).unwrap();
        let d = BilinearDriver::new(2, Coefficients::Constant(symmetric_tensor(2, &[0.5, -0.2, 0.3, 0.1, 0.4, -0.6]))).unwrap();
        let mu = GridFunction::from_fn(&g, 2, |_, x, o| { o[0] = (k * x).sin(); o[1] = x.tanh(); });
        let mu2 = GridFunction::from_fn(&g, 2, |t, x, o| { o[0] = t + x.cos(); o[1] = 0.2; });
        let nu = GridFunction::from_fn(&g, 2, |t, x, o| { o[0] = (x - t).sin(); o[1] = (k * x).cos(); });
        let mut comb = mu.scaled(s);
        comb.axpy(1.0, &mu2).unwrap();
        let lhs = bilinear_image(&sc, &comb, &nu, &d).unwrap();
        let mut rhs = bilinear_image(&sc, &mu, &nu, &d).unwrap().scaled(s);
        rhs.axpy(1.0, &bilinear_image(&sc, &mu2, &nu, &d).unwrap()).unwrap();
        let scale = rhs.sup_abs(&g, Region::Full).max(1.0);
        prop_assert!(lhs.sup_diff(&rhs, &g, Region::Full).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn zero_terminal_gives_zero_solution(
        raw in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
    ) {
        let g = Grid::with_resolution(1.0, 10, 51).unwrap();
        let d = BilinearDriver::new(2, Coefficients::Constant(symmetric_tensor(2, &raw))).unwrap();
        let spec = BsdeSpec::new(g, d, vec![0.0; 102]).unwrap();
        let s = picard_solve(&spec, a, &PicardSettings::default()).unwrap();
        prop_assert!(s.y.values().iter().chain(s.zeta.values()).all(|&v| v == 0.0));
    }
}

#[test]
fn partial_sums_bounded_with_configured_kappa() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x * x).unwrap();
    for kappa in [1.0, 2.0, 4.0] {
        let s = expansion(&spec, 6, Some(kappa), Region::Core).unwrap();
        let l = s.partial_sum_check().unwrap();
        assert!(l.holds, "kappa {kappa}: {:?} vs {}", l.partial_sums, l.bound);
        assert!(!s.constants.kappa_defaulted);
    }
}

#[test]
fn series_and_picard_agree_geometrically() {
    let g = Grid::with_resolution(1.0, 100, 401).unwrap();
    let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = 0.5 * x.sin() + 0.2 * x * x).unwrap();
    let series = expansion(&spec, 8, None, Region::Core).unwrap();
    let norms: Vec<f64> = series.coeff_norms.iter().map(|s| s.value).collect();
    let rho_emp = norms[6] / norms[7];
    let a = 0.5 * series.rho.unwrap();
    let sc = spec.scheme().unwrap();
    let exact = picard_solve(&spec, a, &PicardSettings { tol: 1e-13, ..Default::default() }).unwrap();
    let errs: Vec<f64> = (1..=8)
        .map(|k| {
            let (_, z) = series.partial_sum(a, k);
            hbmo_norm(&sc, &z.sub(&exact.zeta).unwrap(), Region::Core).unwrap().value
        })
        .collect();
    let bound = a / rho_emp + 0.1;
    for w in errs.windows(2).take(5) {
        assert!(w[1] / w[0] <= bound, "{errs:?} bound {bound}");
    }
}

#[test]
fn root_coefficients_are_scaled_cumulants() {
    let c = 1.5;
    let h = |x: f64| 0.3 * x * x + 0.5 * x.sin();
    let m: Vec<f64> = (1..=4).map(|k| quad_expect(|x| h(x).powi(k), 0.0, 1.0).unwrap()).collect();
    let kappa = [
        m[0],
        m[1] - m[0] * m[0],
        m[2] - 3.0 * m[1] * m[0] + 2.0 * m[0].powi(3),
        m[3] - 4.0 * m[2] * m[0] - 3.0 * m[1] * m[1] + 12.0 * m[1] * m[0] * m[0] - 6.0 * m[0].powi(4),
    ];
    let errors = |nx: usize| -> Vec<f64> {
        let g = Grid::with_resolution(1.0, 100, nx).unwrap();
        let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(c).unwrap(), |x, o| o[0] = h(x)).unwrap();
        let s = expansion(&spec, 4, None, Region::Core).unwrap();
        let j = g.space.center();
        let mut fact = 1.0;
        (1..=4)
            .map(|k| {
                fact *= k as f64;
                let want = c.powi(k as i32 - 1) * kappa[k - 1] / fact;
                (s.y[k - 1].get(0, j, 0) - want).abs() / want.abs()
            })
            .collect()
    };
    let (coarse, fine) = (errors(401), errors(801));
    for k in 0..4 {
        assert!(fine[k] <= 1e-3, "order {}: {coarse:?} {fine:?}", k + 1);
        assert!(fine[k] <= 1e-12 || coarse[k] / fine[k] > 3.0, "order {}: {coarse:?} {fine:?}", k + 1);
    }
}

#[test]
fn fixed_point_is_unique_inside_the_ball() {
    let g = Grid::with_resolution(1.0, 50, 201).unwrap();
    let spec = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x.sin()).unwrap();
    let settings = PicardSettings::default();
    let a = 0.4;
    let s1 = picard_solve(&spec, a, &settings).unwrap();
    let start = GridFunction::from_fn(&g, 1, |t, x, o| o[0] = 0.1 * (x + t).cos());
    let s2 = picard_solve(&spec, a, &PicardSettings { start: Some(start), ..settings.clone() }).unwrap();
    assert!(s1.zeta.sup_diff(&s2.zeta, &g, Region::Core).unwrap() <= 10.0 * settings.tol);
}

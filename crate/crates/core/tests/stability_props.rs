use qbsde_core::numerics::{sample_paths, Grid, PathBundle, Region};
use qbsde_core::qbsde::{BilinearDriver, BsdeSpec, PicardSettings};
use qbsde_core::stability::{compare, decay_study, PerturbationPair, StabilityReport};

fn z_samples() -> Vec<Vec<f64>> {
    (1..=100).map(|k| vec![-5.0 + 0.1 * k as f64]).filter(|z| z[0] != 0.0).collect()
}

fn setup() -> (Grid, PathBundle, BsdeSpec) {
    let g = Grid::with_resolution(1.0, 50, 201).unwrap();
    let paths = sample_paths(7, 4000, &g.time).unwrap();
    let base = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x.sin() + 0.1 * x * x).unwrap();
    (g, paths, base)
}

fn run(base: &BsdeSpec, primed: BsdeSpec, paths: &PathBundle) -> StabilityReport {
    let pair = PerturbationPair::sampled(base.clone(), primed, 2.0, &z_samples()).unwrap();
    let r = compare(&pair, 0.3, &PicardSettings::default(), paths, Region::Core).unwrap();
    assert!(!r.diverged && !r.contraction_flag);
    r
}

#[test]
fn terminal_family_decays_linearly() {
    let (g, paths, base) = setup();
    let pts: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            let primed = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| {
                o[0] = x.sin() + 0.1 * x * x + eps * x.cos()
            })
            .unwrap();
            let r = run(&base, primed, &paths);
            (r.dl_lp, r.lhs_hp)
        })
        .collect();
    let fit = decay_study(&pts).unwrap();
    assert!((fit.slope - 1.0).abs() <= 0.1, "{fit:?}");
    assert!(fit.ratio_spread <= 5.0, "{fit:?}");
}

#[test]
fn driver_family_decays_linearly() {
    let (_, paths, base) = setup();
    let pts: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            let f = BilinearDriver::scalar(1.0 + eps).unwrap();
            let primed = base.with_driver(f).unwrap();
            let r = run(&base, primed, &paths);
            assert!(r.dl_lp == 0.0);
            (r.delta_h2p_sq, r.lhs_hp)
        })
        .collect();
    let fit = decay_study(&pts).unwrap();
    assert!((fit.slope - 1.0).abs() <= 0.1, "{fit:?}");
    assert!(fit.ratio_spread <= 5.0, "{fit:?}");
}

#[test]
fn gaussian_scaling_ratio_is_stable() {
    let g = Grid::with_resolution(1.0, 50, 201).unwrap();
    let paths = sample_paths(3, 4000, &g.time).unwrap();
    let base = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = x).unwrap();
    let ratios: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&eps| {
            let primed = BsdeSpec::from_fn(g, BilinearDriver::scalar(1.0).unwrap(), |x, o| o[0] = (1.0 + eps) * x).unwrap();
            let r = run(&base, primed, &paths);
            r.lhs_hp / r.dl_lp
        })
        .collect();
    let max = ratios.iter().copied().fold(f64::MIN, f64::max);
    let min = ratios.iter().copied().fold(f64::MAX, f64::min);
    assert!(min > 0.0 && max.is_finite() && max / min <= 5.0, "{ratios:?}");
}

#[test]
fn zero_member_has_zero_lhs() {
    let (_, paths, base) = setup();
    let r = run(&base, base.clone(), &paths);
    assert_eq!(r.lhs(), [0.0; 4]);
}

use parisian::model::{classify_regime, ModelParams, DEFAULT_TOL};
use parisian::pathsim::{
    default_tilt, detect_classical, detect_parisian, estimate_conditional_ratio, estimate_single_ruin, sample_path,
    window_steps, BivariatePath, GridSpec, RatioConfig, TiltConfig, WindowMode,
};
use parisian::rng::Streams;
use parisian::Error;

fn params(c1: f64, c2: f64, a: f64, rho: f64, s1: f64, s2: f64) -> ModelParams {
    ModelParams::new(c1, c2, a, rho, s1, s2).unwrap()
}

fn endpoints(rho: f64, tilt: TiltConfig, n: u64, seed: u64) -> Vec<(f64, f64, f64)> {
    let grid = GridSpec::new(8).unwrap();
    let streams = Streams::new(seed);
    (0..n)
        .map(|i| {
            let path = sample_path(&grid, 0, rho, &tilt, &mut streams.stream(i));
            (path.w1[8], path.w2[8], path.log_weight)
        })
        .collect()
}

fn moments(xs: &[(f64, f64, f64)]) -> (f64, f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m1 = xs.iter().map(|x| x.0).sum::<f64>() / n;
    let m2 = xs.iter().map(|x| x.1).sum::<f64>() / n;
    let v1 = xs.iter().map(|x| (x.0 - m1).powi(2)).sum::<f64>() / (n - 1.0);
    let v2 = xs.iter().map(|x| (x.1 - m2).powi(2)).sum::<f64>() / (n - 1.0);
    let c = xs.iter().map(|x| (x.0 - m1) * (x.1 - m2)).sum::<f64>() / (n - 1.0);
    (m1, m2, v1, v2, c)
}

#[test]
fn endpoint_covariance_untilted() {
    let n = 100_000;
    let (m1, m2, v1, v2, c) = moments(&endpoints(0.0, TiltConfig::off(), n, 11));
    let se_mean = 1.0 / (n as f64).sqrt();
    let se_var = (2.0 / n as f64).sqrt();
    assert!(m1.abs() < 3.0 * se_mean && m2.abs() < 3.0 * se_mean);
    assert!((v1 - 1.0).abs() < 3.0 * se_var && (v2 - 1.0).abs() < 3.0 * se_var);
    assert!(c.abs() < 3.0 * se_mean);

    let (_, _, v1, v2, c) = moments(&endpoints(0.5, TiltConfig::off(), n, 12));
    let corr = c / (v1 * v2).sqrt();
    // Var of the sample correlation is about (1 - r^2)^2 / n.
    assert!((corr - 0.5).abs() < 3.0 * 0.75 / (n as f64).sqrt(), "corr={corr}");
}

#[test]
fn tilted_paths_carry_the_change_of_measure() {
    let n = 100_000;
    let tilt = TiltConfig { alpha: 3.0, beta: 0.0, enabled: true };
    let xs = endpoints(0.0, tilt, n, 13);
    let (m1, ..) = moments(&xs);
    assert!((m1 - 3.0).abs() < 3.0 / (n as f64).sqrt());
    let w: Vec<f64> = xs.iter().map(|x| x.2.exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / (n as f64).sqrt(), "mass={mean}");
    for x in &xs {
        assert!((x.2 - (-3.0 * x.0 + 4.5)).abs() < 1e-12);
    }
}

fn manual_path(w1: Vec<f64>, w2: Vec<f64>) -> BivariatePath {
    let n = w1.len() - 1;
    BivariatePath { w1, w2, log_weight: 0.0, horizon_index: n }
}

#[test]
fn classical_detector_examples() {
    let p = params(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
    let flat = manual_path(vec![0.0; 101], vec![0.0; 101]);
    let o = detect_classical(&flat, 1.0, &p);
    assert!(!o.classical1 && !o.classical2 && !o.classical_joint);

    let mut w1 = vec![0.0; 101];
    w1[37] = 1.5;
    let o = detect_classical(&manual_path(w1.clone(), vec![0.0; 101]), 1.0, &p);
    assert!(o.classical1 && !o.classical2 && !o.classical_joint);

    let mut w2 = vec![0.0; 101];
    w2[90] = 1.2;
    let o = detect_classical(&manual_path(w1, w2), 1.0, &p);
    assert!(o.classical_joint);
}

#[test]
fn parisian_run_length_examples() {
    let mut w1 = vec![0.0; 101];
    for x in &mut w1[40..=55] {
        *x = 2.0;
    }
    let mut w2 = vec![0.0; 101];
    w2[10] = 2.0;
    let path = manual_path(w1, w2);
    let with = |s1: f64| detect_parisian(&path, 1.0, &params(0.0, 0.0, 1.0, 0.0, s1, 0.0)).parisian_joint;
    assert!(with(0.10));
    assert!(with(0.15));
    assert!(!with(0.151));
    assert!(!with(0.20));

    let d = detect_parisian(&path, 1.0, &params(0.0, 0.0, 1.0, 0.0, 1.5, 0.0));
    assert!(!d.parisian_joint && d.window_exceeds_path);
}

#[test]
fn windows_in_grid_steps() {
    let grid = GridSpec::new(4096).unwrap();
    assert_eq!(window_steps(1.0, 4.0, &grid), Some(256));
    assert_eq!(window_steps(0.0, 4.0, &grid), Some(0));
    assert_eq!(window_steps(2.0, 1.0, &grid), None);
    let p = params(0.0, 0.0, 0.8, 0.1, 1.0, 2.0);
    assert_eq!(GridSpec::for_model(&p, 4.0, 16.0).unwrap().n_steps, 4096);
    assert_eq!(GridSpec::for_model(&p, 20.0, 16.0).unwrap().n_steps, 6400);
    assert!(GridSpec::for_model(&p, 4.0, 4.0).is_err());
}

#[test]
fn detectors_on_random_paths() {
    let grid = GridSpec::new(2048).unwrap();
    let streams = Streams::new(5);
    let windows = params(0.0, 0.0, 0.8, 0.1, 0.1, 0.1);
    let zero = params(0.0, 0.0, 0.8, 0.1, 0.0, 0.0);
    let (mut classical, mut parisian) = (0, 0);
    for i in 0..4000 {
        let p = sample_path(&grid, 0, 0.1, &TiltConfig::off(), &mut streams.stream(i));
        let c = detect_classical(&p, 1.0, &windows);
        assert_eq!(c.classical_joint, c.classical1 && c.classical2);
        let w = detect_parisian(&p, 1.0, &windows).parisian_joint;
        assert!(!w || c.classical_joint);
        assert_eq!(detect_parisian(&p, 1.0, &zero).parisian_joint, c.classical_joint);
        classical += c.classical_joint as u32;
        parisian += w as u32;
    }
    assert!(classical > 100 && parisian > 10 && parisian < classical, "{classical} {parisian}");
}

fn ratio_cfg(grid: GridSpec, n_paths: u64, tilt: TiltConfig, seed: u64, workers: usize) -> RatioConfig {
    RatioConfig { grid, n_paths, tilt, seed, workers, windows: WindowMode::Inside }
}

#[test]
fn fused_estimator_matches_stored_paths() {
    let p = params(0.3, -0.2, 0.8, 0.1, 1.0, 0.5);
    let u = 1.5;
    let grid = GridSpec::for_model(&p, u, 16.0).unwrap();
    let r = classify_regime(&p, DEFAULT_TOL).unwrap();
    for tilt in [TiltConfig::off(), default_tilt(&p, &r, u).unwrap()] {
        let n = 10_000;
        let est = estimate_conditional_ratio(&p, u, &ratio_cfg(grid, n, tilt, 21, 1)).unwrap();
        let streams = Streams::new(21);
        let (mut hc, mut hp, mut sc, mut sp) = (0u64, 0u64, 0.0, 0.0);
        for i in 0..n {
            let path = sample_path(&grid, 0, p.rho, &tilt, &mut streams.stream(i));
            let c = detect_classical(&path, u, &p).classical_joint;
            let q = detect_parisian(&path, u, &p).parisian_joint;
            if c {
                hc += 1;
                sc += path.log_weight.exp();
            }
            if q {
                hp += 1;
                sp += path.log_weight.exp();
            }
        }
        assert_eq!((est.classical_hits, est.parisian_hits), (hc, hp));
        assert!(((est.ratio - sp / sc) / est.ratio).abs() < 1e-10);
        assert!(((est.p_classical - sc / n as f64) / est.p_classical).abs() < 1e-10);
    }
}

#[test]
fn importance_sampling_is_consistent() {
    let p = params(0.0, 0.0, 0.8, 0.1, 1.0, 1.0);
    let u = 1.5;
    let grid = GridSpec::for_model(&p, u, 16.0).unwrap();
    let r = classify_regime(&p, DEFAULT_TOL).unwrap();
    let plain = estimate_conditional_ratio(&p, u, &ratio_cfg(grid, 40_000, TiltConfig::off(), 31, 0)).unwrap();
    let tilted =
        estimate_conditional_ratio(&p, u, &ratio_cfg(grid, 40_000, default_tilt(&p, &r, u).unwrap(), 32, 0)).unwrap();
    let z = |a: f64, sa: f64, b: f64, sb: f64| (a - b).abs() / (sa * sa + sb * sb).sqrt();
    assert!(z(plain.p_classical, plain.p_classical_stderr, tilted.p_classical, tilted.p_classical_stderr) < 3.0);
    assert!(z(plain.p_parisian, plain.p_parisian_stderr, tilted.p_parisian, tilted.p_parisian_stderr) < 3.0);
    assert!(z(plain.ratio, plain.ratio_stderr, tilted.ratio, tilted.ratio_stderr) < 3.0);
    assert!(tilted.p_classical_stderr / tilted.p_classical < plain.p_classical_stderr / plain.p_classical);
}

fn subsampled(path: &BivariatePath, stride: usize) -> BivariatePath {
    BivariatePath {
        w1: path.w1.iter().step_by(stride).copied().collect(),
        w2: path.w2.iter().step_by(stride).copied().collect(),
        log_weight: path.log_weight,
        horizon_index: path.horizon_index / stride,
    }
}

#[test]
fn classical_hits_grow_with_resolution() {
    let p = params(0.5, 0.5, 0.8, 0.1, 0.0, 0.0);
    let grid = GridSpec::new(4096).unwrap();
    let streams = Streams::new(41);
    let mut hits = [0u32; 3];
    for i in 0..20_000 {
        let path = sample_path(&grid, 0, p.rho, &TiltConfig::off(), &mut streams.stream(i));
        let flags: Vec<bool> =
            [4, 2, 1].iter().map(|&k| detect_classical(&subsampled(&path, k), 1.2, &p).classical_joint).collect();
        assert!(flags.windows(2).all(|f| f[0] <= f[1]));
        for (h, f) in hits.iter_mut().zip(flags) {
            *h += f as u32;
        }
    }
    assert!(hits[0] <= hits[1] && hits[1] <= hits[2] && hits[0] < hits[2], "{hits:?}");
}

#[test]
fn estimates_are_worker_independent() {
    let p = params(0.0, 0.0, 0.8, 0.1, 1.0, 1.0);
    let r = classify_regime(&p, DEFAULT_TOL).unwrap();
    let grid = GridSpec::for_model(&p, 2.0, 16.0).unwrap();
    let tilt = default_tilt(&p, &r, 2.0).unwrap();
    let a = estimate_conditional_ratio(&p, 2.0, &ratio_cfg(grid, 12_345, tilt, 3, 1)).unwrap();
    let b = estimate_conditional_ratio(&p, 2.0, &ratio_cfg(grid, 12_345, tilt, 3, 3)).unwrap();
    assert_eq!(a.ratio.to_bits(), b.ratio.to_bits());
    assert_eq!(a.p_classical.to_bits(), b.p_classical.to_bits());
    assert_eq!(a.ratio_stderr.to_bits(), b.ratio_stderr.to_bits());
    assert_eq!(a, b);
}

#[test]
fn zero_windows_give_ratio_one() {
    let p = params(0.0, 0.0, 0.8, 0.1, 0.0, 0.0);
    let grid = GridSpec::for_model(&p, 1.0, 16.0).unwrap();
    for seed in [1, 2] {
        let e = estimate_conditional_ratio(&p, 1.0, &ratio_cfg(grid, 10_000, TiltConfig::off(), seed, 0)).unwrap();
        assert_eq!(e.ratio, 1.0);
        assert_eq!(e.classical_hits, e.parisian_hits);
    }
}

#[test]
fn windows_longer_than_the_horizon() {
    // At u = 0.01 the window S / u^2 covers 10^4 horizons.
    let p = params(0.0, 0.0, 1.0, 0.0, 1.0, 1.0);
    let grid = GridSpec::for_model(&p, 0.01, 16.0).unwrap();
    let e = estimate_conditional_ratio(&p, 0.01, &ratio_cfg(grid, 10_000, TiltConfig::off(), 1, 0)).unwrap();
    assert!(e.p_classical > 0.95);
    assert_eq!(e.ratio, 0.0);
    assert_eq!(e.p_parisian, 0.0);
    assert!(e.warnings.iter().any(|w| w.contains("longer than the horizon")));
}

#[test]
fn no_classical_hits_is_an_error() {
    let p = params(0.0, 0.0, 1.0, 0.0, 1.0, 1.0);
    let grid = GridSpec::for_model(&p, 5.0, 16.0).unwrap();
    let e = estimate_conditional_ratio(&p, 5.0, &ratio_cfg(grid, 10_000, TiltConfig::off(), 1, 0));
    assert!(matches!(e, Err(Error::InsufficientSamples { .. })));
    assert!(estimate_conditional_ratio(&p, 5.0, &ratio_cfg(grid, 100, TiltConfig::off(), 1, 0)).is_err());
}

#[test]
fn default_tilt_examples() {
    let tilt = |p: ModelParams| {
        let r = classify_regime(&p, DEFAULT_TOL).unwrap();
        default_tilt(&p, &r, 3.0).unwrap()
    };
    let t = tilt(params(0.0, 0.0, 1.0, 0.0, 0.0, 0.0));
    assert_eq!((t.alpha, t.beta, t.enabled), (3.0, 3.0, true));
    let t = tilt(params(0.0, 0.0, 0.8, 0.1, 0.0, 0.0));
    assert!((t.beta - 2.1 / 0.99f64.sqrt()).abs() < 1e-12);
    assert!((t.beta - 2.110_579_4).abs() < 1e-7);
    let t = tilt(params(1.0, 0.0, 1.0, -0.5, 0.0, 0.0));
    assert_eq!(t.alpha, 4.0);
    assert!((t.beta - 5.773_502_7).abs() < 1e-7);
}

#[test]
fn single_ruin_estimator_sits_below_the_closed_form() {
    let exact = parisian::analytics::single_ruin_prob(1.0, 2.0, 1.0).unwrap();
    let e = estimate_single_ruin(1.0, 2.0, 1 << 12, 100_000, true, 7, 0).unwrap();
    assert!(e.coarse.value <= e.fine.value);
    assert!(e.fine.value < exact);
    assert!(((e.extrapolated() - exact) / exact).abs() < 0.03, "{} vs {exact}", e.extrapolated());
    assert!(estimate_single_ruin(1.0, 2.0, 1000, 100, true, 7, 0).is_err());
}

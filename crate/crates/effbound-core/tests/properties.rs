//! Property tests for the numerical kernels, bounds and the Monte Carlo harness.

use effbound_core::bounds::{bound_levy, Functional, FunctionalKind};
use effbound_core::models::{char_function, DeconvPair, JumpMeasure, LevyTriplet};
use effbound_core::operators::{ObsFunction, ScoreOperator};
use effbound_core::oracle::{cramer_rao_sup, SubmodelBasis};
use effbound_core::simulate::{mc_compare, substream, Decompounder, InfluenceAverage, MCReport};
use effbound_core::spectral_core::{convolve, integrate};
use effbound_core::{GridFunction, UniformGrid, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn gauss(grid: UniformGrid, c: f64, s: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| (-(x - c).powi(2) / (2.0 * s * s)).exp())
}

fn cp_model() -> LevyTriplet {
    let g = UniformGrid::symmetric(32.0, 1 << 13).unwrap();
    LevyTriplet::new(0.0, 1.0, JumpMeasure::normal(g, 1.0, 2.0, 1.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_matches_direct_sum(c1 in -2.0..2.0f64, c2 in -2.0..2.0f64, s1 in 0.2..1.0f64, s2 in 0.2..1.0f64) {
        let g = UniformGrid::symmetric(8.0, 128).unwrap();
        let (f, h) = (gauss(g, c1, s1), gauss(g, c2, s2));
        let fast = convolve(&f, &h).unwrap();
        let o = g.origin_offset().unwrap();
        for j in (0..g.n).step_by(7) {
            let mut direct = 0.0;
            for k in 0..g.n {
                let m = j as i64 - k as i64 - o;
                if (0..g.n as i64).contains(&m) {
                    direct += h.values[m as usize] * f.values[k] * g.dx;
                }
            }
            prop_assert!((fast.values[j] - direct).abs() < 1e-12, "node {j}: {} vs {direct}", fast.values[j]);
        }
    }

    #[test]
    fn convolution_commutes(c1 in -2.0..2.0f64, c2 in -2.0..2.0f64) {
        let g = UniformGrid::symmetric(8.0, 256).unwrap();
        let (f, h) = (gauss(g, c1, 0.5), gauss(g, c2, 0.8));
        let a = convolve(&f, &h).unwrap();
        let b = convolve(&h, &f).unwrap();
        for j in 0..g.n {
            prop_assert!((a.values[j] - b.values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_characteristic_function_closed_form(alpha in 0.1..0.45f64, rate in 0.5..2.0f64) {
        let g = UniformGrid::symmetric(16.0, 1 << 13).unwrap();
        let t = LevyTriplet::new(0.0, 1.0, JumpMeasure::gamma(g, alpha, rate).unwrap()).unwrap();
        let phi = char_function(&t).unwrap();
        let h = phi.zero_index();
        for k in (h - 200..h + 200).step_by(9) {
            let u = phi.u(k);
            let exact = C64::new(1.0, -u / rate).powf(-alpha);
            prop_assert!((phi.values[k] - exact).norm() < 1e-6, "u = {u}: {} vs {exact}", phi.values[k]);
        }
    }

    #[test]
    fn characteristic_function_is_bounded(lambda in 0.2..2.0f64, mean in -2.0..2.0f64) {
        let g = UniformGrid::symmetric(16.0, 1 << 11).unwrap();
        let t = LevyTriplet::new(0.0, 1.0, JumpMeasure::normal(g, lambda, mean, 1.0).unwrap()).unwrap();
        let phi = char_function(&t).unwrap();
        prop_assert!((phi.values[phi.zero_index()] - C64::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(phi.values.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn decon_duality(c in -1.5..1.5f64, d in -1.5..1.5f64) {
        let g = UniformGrid::symmetric(32.0, 1 << 13).unwrap();
        let pair = DeconvPair::gamma_error(g, 0.0, 1.0, 0.3, 1.0).unwrap();
        let a = ScoreOperator::decon(&pair).unwrap();
        let (nu, p) = (a.direction_measure(), a.observation_law());
        let center = |f: GridFunction, m| {
            let mean = integrate(&f, m).unwrap();
            f.map(|_, v| v - mean)
        };
        let b = center(gauss(g, c, 0.7), &nu);
        let h = center(gauss(g, d, 0.9), &p);
        let lhs = a.score(&b).unwrap().score.inner(&ObsFunction::from_grid(h.clone(), &p), &p).unwrap();
        let rhs = integrate(&b.mul(&a.adjoint(&h).unwrap()).unwrap(), &nu).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1e-3), "{lhs} vs {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn information_matrix_is_psd(t1 in 0.5..3.5f64, t2 in 0.5..3.5f64) {
        let f = Functional::new(vec![
            FunctionalKind::IndicatorLeft { t: t1 },
            FunctionalKind::IndicatorRight { t: t2 },
        ])
        .unwrap();
        let s = bound_levy(&cp_model(), &f, false).unwrap().sigma;
        prop_assert!((s[0][1] - s[1][0]).abs() < 1e-12);
        let m = DMatrix::from_fn(2, 2, |i, j| s[i][j]);
        let min = m.symmetric_eigen().eigenvalues.min();
        prop_assert!(min > -1e-10, "eigenvalue {min}");
    }

    #[test]
    fn one_direction_cramer_rao(c in 0.0..4.0f64, s in 0.3..1.5f64) {
        let t = cp_model();
        let g = t.grid();
        let a = ScoreOperator::levy(&t).unwrap();
        let zeta = FunctionalKind::IndicatorLeft { t: 1.5 };
        let b = gauss(g, c, s);
        let cr = cramer_rao_sup(&a, &zeta, &SubmodelBasis::new(vec![b.clone()]).unwrap()).unwrap();
        // ⟨ζ, b⟩_ν² / ‖A b‖²_P
        let nu = a.direction_measure();
        let p = a.observation_law();
        let num = integrate(&zeta.on_grid(&g).mul(&b).unwrap(), &nu).unwrap();
        let score = a.score(&b).unwrap().score;
        let den = score.inner(&score, &p).unwrap();
        let expect = num * num / den;
        prop_assert!((cr.value - expect).abs() <= 1e-9 * expect.max(1e-12), "{} vs {expect}", cr.value);
        prop_assert_eq!(cr.rank, 1);
    }
}

#[test]
fn substreams_are_uncorrelated() {
    let n = 20_000;
    let a: Vec<f64> = {
        let mut r = substream(7, 0);
        (0..n).map(|_| r.random::<f64>() - 0.5).collect()
    };
    let b: Vec<f64> = {
        let mut r = substream(7, 1);
        (0..n).map(|_| r.random::<f64>() - 0.5).collect()
    };
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    // each term has variance 1/144
    assert!(cov.abs() < 4.0 / (12.0 * (n as f64).sqrt()), "{cov}");
    let mut c = substream(8, 0);
    assert_ne!(a[0], c.random::<f64>() - 0.5);
}

#[test]
fn mc_compare_is_deterministic_across_thread_counts() {
    let t = cp_model();
    let f = Functional::new(vec![FunctionalKind::IndicatorLeft { t: 1.5 }]).unwrap();
    let est = Decompounder::new(&t, &f).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_compare(&t, &est, 2_000, 8, 11, vec![vec![1.0]], None).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.estimates, four.estimates);
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&four).unwrap()
    );
}

#[test]
fn two_replications_serialize() {
    let g = UniformGrid::symmetric(32.0, 1 << 13).unwrap();
    let pair = DeconvPair::gamma_error(g, 0.0, 1.0, 0.3, 1.0).unwrap();
    let f = Functional::new(vec![
        FunctionalKind::IndicatorLeft { t: 0.5 },
        FunctionalKind::IndicatorRight { t: 1.0 },
    ])
    .unwrap();
    let est = InfluenceAverage::decon(&pair, &f).unwrap();
    let rep = mc_compare(
        &pair,
        &est,
        500,
        2,
        3,
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        None,
    )
    .unwrap();
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "rep,estimate_1,estimate_2");
    let back: MCReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
    assert_eq!(back, rep);
}

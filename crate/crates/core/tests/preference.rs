use hilo_core::optimizer::{OptimizerConfig, OptimizerState};
use hilo_core::preference::{fit_laplace, Comparison, SeKernel};
use hilo_core::stats::normal_cdf;
use hilo_core::PhiBox;

fn kernel() -> SeKernel {
    SeKernel { signal_variance: 1.0, lengthscales: vec![0.2], jitter: 1e-6 }
}

/// Posterior probability that the winner of one duel wins the next, by
/// brute-force quadrature of the exact two-point posterior.
fn quadrature_repeat_probability(k: [[f64; 2]; 2]) -> f64 {
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    let (n, half) = (801, 6.0);
    let h = 2.0 * half / (n - 1) as f64;
    let (mut z, mut num) = (0.0, 0.0);
    for i in 0..n {
        let a = -half + i as f64 * h;
        for j in 0..n {
            let b = -half + j as f64 * h;
            let quad = (k[1][1] * a * a - 2.0 * k[0][1] * a * b + k[0][0] * b * b) / det;
            let like = normal_cdf(a - b);
            let w = like * (-0.5 * quad).exp();
            z += w;
            num += w * like;
        }
    }
    num / z
}

#[test]
fn laplace_predictive_matches_quadrature() {
    for dist in [0.1, 0.3, 0.8] {
        let points = vec![vec![0.2], vec![0.2 + dist]];
        let post = fit_laplace(points.clone(), vec![Comparison { winner: 0, loser: 1 }], &kernel()).unwrap();
        let anchor = post.anchor(&points[1]);
        let (m, v, cov) = post.predict_joint(&points[0], &anchor);
        let var_d = v + anchor.var - 2.0 * cov;
        let laplace = normal_cdf((m - anchor.mean) / (1.0 + var_d).sqrt());
        let kab = kernel().eval(&points[0], &points[1]);
        let kd = 1.0 + post.jitter;
        let exact = quadrature_repeat_probability([[kd, kab], [kab, kd]]);
        assert!((laplace - exact).abs() < 5e-2, "distance {dist}: {laplace} vs {exact}");
        assert!(laplace > 0.5);
    }
}

#[test]
fn flipping_the_label_negates_the_fit() {
    let points = vec![vec![0.1], vec![0.35], vec![0.9]];
    let comps = vec![Comparison { winner: 0, loser: 1 }, Comparison { winner: 2, loser: 1 }];
    let flipped: Vec<Comparison> = comps.iter().map(|c| Comparison { winner: c.loser, loser: c.winner }).collect();
    let a = fit_laplace(points.clone(), comps, &kernel()).unwrap();
    let b = fit_laplace(points, flipped, &kernel()).unwrap();
    for (x, y) in a.g_hat.iter().zip(&b.g_hat) {
        assert!((x + y).abs() < 1e-9);
    }
}

#[test]
fn optimizer_follows_the_recorded_winner() {
    let config = OptimizerConfig { pool_size: 64, seed: 12, ..OptimizerConfig::default() };
    for chose_first in [true, false] {
        let mut s = OptimizerState::new(config.clone(), PhiBox::default()).unwrap();
        let (a, b) = s.propose();
        s.record_choice(1, chose_first).unwrap();
        assert_eq!(s.best_point().unwrap(), if chose_first { a } else { b });
        let rebuilt = OptimizerState::replay(config.clone(), PhiBox::default(), &[chose_first]).unwrap();
        assert_eq!(rebuilt.best_point().unwrap(), s.best_point().unwrap());
    }
}

#[test]
fn proposals_are_pool_points_and_never_self_duels() {
    let config = OptimizerConfig { pool_size: 48, seed: 5, ..OptimizerConfig::default() };
    let mut s = OptimizerState::new(config, PhiBox::default()).unwrap();
    for t in 1..=15 {
        let (a, b) = s.propose();
        assert_ne!(a, b);
        assert!(s.pool().contains(&a) && s.pool().contains(&b));
        s.record_choice(t, t % 3 != 0).unwrap();
    }
    assert!(matches!(s.record_choice(3, true), Err(hilo_core::Error::StaleTrial { .. })));
}

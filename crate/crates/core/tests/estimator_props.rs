use apportion_core::estimator::{fit, initial_theta, FitOptions};
use apportion_core::model::{linear_predictor, rss, DesignPoint, Param, Theta};
use apportion_core::simulator::{presets, simulate};
use proptest::prelude::*;

fn recovery_data(seed: u64) -> Vec<DesignPoint<f64>> {
    simulate(&presets::recovery::<f64>(seed), None).unwrap().points()
}

#[test]
fn refit_from_estimate_is_a_fixed_point() {
    for seed in 0..5 {
        let data = recovery_data(seed);
        let f = fit(&data, &FitOptions::default()).unwrap();
        let again = fit(&data, &FitOptions::starting_at(f.theta)).unwrap();
        let rel = (again.rss - f.rss).abs() / f.rss;
        assert!(rel < 1e-12, "seed {seed}: {rel}");
    }
}

#[test]
fn kkt_conditions_hold() {
    for seed in 10..15 {
        let data = recovery_data(seed);
        let f = fit(&data, &FitOptions::default()).unwrap();
        // ∂RSS/∂θ_k = -2 Σ r_i J_ik
        let mut g = [0.0; 3];
        for (r, j) in f.residuals.iter().zip(&f.jacobian) {
            for k in 0..3 {
                g[k] += -2.0 * r * j[k];
            }
        }
        for p in Param::ALL {
            let k = p.index();
            let scale: f64 = f.jacobian.iter().map(|j| j[k] * j[k]).sum::<f64>().sqrt() * f.rss.sqrt();
            if f.active_bounds.contains(&p) {
                assert!(g[k] >= -1e-6 * scale, "bound coordinate {k} gradient {}", g[k]);
            } else {
                assert!(g[k].abs() <= 1e-5 * scale, "interior coordinate {k} gradient {}", g[k]);
            }
        }
    }
}

#[test]
fn exposure_scaling_equivariance() {
    let data = recovery_data(21);
    let f = fit(&data, &FitOptions::default()).unwrap();
    for k in [0.02, 50.0] {
        let scaled: Vec<_> = data
            .iter()
            .map(|p| DesignPoint {
                paint_exposure: p.paint_exposure * k,
                gas_exposure: p.gas_exposure * k,
                ..*p
            })
            .collect();
        let g = fit(&scaled, &FitOptions::default()).unwrap();
        assert!((g.theta.background - f.theta.background).abs() < 1e-6 * f.theta.background);
        assert!((g.theta.paint_rate * k - f.theta.paint_rate).abs() < 1e-6 * f.theta.paint_rate);
        assert!((g.theta.gas_rate * k - f.theta.gas_rate).abs() < 1e-6 * f.theta.gas_rate.max(1.0));
        assert!((g.sigma2 - f.sigma2).abs() < 1e-10 * f.sigma2);
        for (a, b) in g.residuals.iter().zip(&f.residuals) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}

#[test]
fn permutation_invariance() {
    let data = recovery_data(33);
    let f = fit(&data, &FitOptions::default()).unwrap();
    let n = data.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let shuffled: Vec<_> = perm.iter().map(|&i| data[i]).collect();
    let g = fit(&shuffled, &FitOptions::default()).unwrap();
    assert!((g.rss - f.rss).abs() < 1e-12 * f.rss);
    for k in 0..3 {
        let a = f.theta.to_array()[k];
        let b = g.theta.to_array()[k];
        // agreement is limited by the stopping tolerance, not by ordering
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
    for (j, &i) in perm.iter().enumerate() {
        assert!((g.residuals[j] - f.residuals[i]).abs() < 1e-6);
    }
}

/// Minimum of the RSS over a grid on [0, 50]³: a step-1 pass followed by a
/// step-0.05 pass around the best coarse node.
fn grid_minimum(data: &[DesignPoint<f64>]) -> ([f64; 3], f64) {
    let eval = |t: [f64; 3]| rss(&Theta::from_array(t), data).unwrap_or(f64::INFINITY);
    let mut best = ([0.0; 3], f64::INFINITY);
    for a in 0..=50 {
        for b in 0..=50 {
            for c in 0..=50 {
                let t = [a as f64, b as f64, c as f64];
                let v = eval(t);
                if v < best.1 {
                    best = (t, v);
                }
            }
        }
    }
    let centre = best.0;
    for a in -40..=40 {
        for b in -40..=40 {
            for c in -40..=40 {
                let t = [
                    centre[0] + a as f64 * 0.05,
                    centre[1] + b as f64 * 0.05,
                    centre[2] + c as f64 * 0.05,
                ];
                if t.iter().any(|v| *v < 0.0 || *v > 50.0) {
                    continue;
                }
                let v = eval(t);
                if v < best.1 {
                    best = (t, v);
                }
            }
        }
    }
    best
}

#[test]
fn tiny_instance_matches_grid_search() {
    let pts = [(2.0, 0.5), (1.2, 1.5), (0.4, 3.0), (0.05, 4.0)];
    let noise = [0.05, -0.04, 0.03, -0.02];
    let data: Vec<_> = pts
        .iter()
        .zip(noise)
        .map(|(&(t, g), e)| DesignPoint {
            paint_exposure: t,
            gas_exposure: g,
            log_concentration: linear_predictor(&Theta::new(10.0f64, 20.0, 5.0), t, g).ln() + e,
            year_built: 1950,
        })
        .collect();
    let f = fit(&data, &FitOptions::default()).unwrap();
    let (grid_theta, grid_rss) = grid_minimum(&data);
    assert!(f.rss <= grid_rss + 1e-12, "fit {} grid {}", f.rss, grid_rss);
    for k in 0..3 {
        let d = (f.theta.to_array()[k] - grid_theta[k]).abs();
        assert!(d <= 0.05, "coordinate {k}: fit {:?} grid {:?}", f.theta, grid_theta);
    }
}

#[test]
fn fits_in_single_precision() {
    let data64 = recovery_data(8);
    let data32: Vec<DesignPoint<f32>> = data64
        .iter()
        .map(|p| DesignPoint {
            paint_exposure: p.paint_exposure as f32,
            gas_exposure: p.gas_exposure as f32,
            log_concentration: p.log_concentration as f32,
            year_built: p.year_built,
        })
        .collect();
    let f64_fit = fit(&data64, &FitOptions::default()).unwrap();
    let f32_fit = fit(&data32, &FitOptions::default()).unwrap();
    for k in 0..3 {
        let a = f64_fit.theta.to_array()[k];
        let b = f32_fit.theta.to_array()[k] as f64;
        let se = f64_fit.cov_theta[k][k].sqrt();
        assert!((a - b).abs() < 0.01 * se, "k={k}: {a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn initial_theta_is_feasible(
        rows in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, -2.0f64..6.0), 4..30)
    ) {
        let data: Vec<_> = rows
            .iter()
            .map(|&(t, g, y)| DesignPoint { paint_exposure: t, gas_exposure: g, log_concentration: y, year_built: 1950 })
            .collect();
        let th = initial_theta(&data);
        prop_assert!(th.is_feasible());
    }

    #[test]
    fn objective_never_worse_than_start(seed in 0u64..1000) {
        let data = recovery_data(seed);
        let start = initial_theta(&data);
        let f = fit(&data, &FitOptions::default()).unwrap();
        if let Ok(r0) = rss(&start, &data) {
            prop_assert!(f.rss <= r0);
        }
    }
}

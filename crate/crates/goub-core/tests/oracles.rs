//! Cross-checks of the closed-form kernels against independent routes:
//! brute-force quadrature conditioning and Euler-Maruyama simulation of
//! the defining SDEs.

mod common;

use common::*;
use goub_core::bridge::{self, BridgeModel};
use goub_core::gou::gou_transition;
use goub_core::oracle::gaussian_kl;
use goub_core::rng::stream_rng;
use goub_core::schedule::{ScheduleGrid, ScheduleKind};
use goub_core::state::State;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn unit_grid(steps: usize) -> ScheduleGrid {
    ScheduleGrid::build(ScheduleKind::Constant, steps, (-1.0f64).exp(), 1.0).unwrap()
}

#[test]
fn forward_marginal_matches_quadrature() {
    let grid = unit_grid(20);
    let (x_0, x_term) = (0.0, 2.0);
    for t in [1usize, 5, 10, 15, 19] {
        let c = bridge::marginal_coeffs(&grid, t).unwrap();
        let closed_mean = c.m * x_0 + c.n * x_term;
        let (q_mean, q_var) = marginal_by_quadrature(&grid, t, x_0, x_term);
        assert!(
            (closed_mean - q_mean).abs() < 1e-9,
            "mean mismatch at t={t}: {closed_mean} vs {q_mean}"
        );
        assert!(
            (c.var - q_var).abs() < 1e-9,
            "var mismatch at t={t}: {} vs {q_var}",
            c.var
        );
    }
}

#[test]
fn forward_marginal_matches_quadrature_default_schedule() {
    let lambda2 = (30.0f64 / 255.0).powi(2);
    let grid = ScheduleGrid::build(ScheduleKind::FlippedCosine, 100, 0.005, lambda2).unwrap();
    let (x_0, x_term) = (0.2, 0.8);
    for t in [1usize, 25, 50, 75, 99] {
        let c = bridge::marginal_coeffs(&grid, t).unwrap();
        let closed_mean = c.m * x_0 + c.n * x_term;
        let (q_mean, q_var) = marginal_by_quadrature(&grid, t, x_0, x_term);
        assert!((closed_mean - q_mean).abs() < 1e-9, "mean at t={t}");
        assert!((c.var - q_var).abs() < 1e-9, "var at t={t}");
    }
}

#[test]
fn posterior_kernel_matches_quadrature() {
    // includes the documented step 0.5 -> 0.75 with frozen values
    let grid = unit_grid(4);
    let (x_0, x_t, x_term) = (0.0, 1.0, 2.0);
    let kernel = bridge::posterior_kernel(
        &grid,
        3,
        &State::scalar(x_0),
        &State::scalar(x_t),
        &State::scalar(x_term),
    )
    .unwrap();
    let (q_mean, q_var) = posterior_by_quadrature(&grid, 3, x_0, x_t, x_term);
    assert!(
        (kernel.mean.data()[0] - q_mean).abs() < 1e-9,
        "posterior mean {} vs quadrature {q_mean}",
        kernel.mean.data()[0]
    );
    assert!(
        (kernel.var - q_var).abs() < 1e-9,
        "posterior var {} vs quadrature {q_var}",
        kernel.var
    );
    // frozen from the quadrature oracle
    assert!((q_mean - 0.751_920).abs() < 1e-5, "oracle drifted: {q_mean}");
    assert!((q_var - 0.320_157).abs() < 1e-5, "oracle drifted: {q_var}");
}

#[test]
fn posterior_kernel_matches_quadrature_across_grid() {
    let grid = unit_grid(16);
    let (x_0, x_t, x_term) = (-0.4, 0.7, 1.5);
    for t in [2usize, 3, 8, 15, 16] {
        let kernel = bridge::posterior_kernel(
            &grid,
            t,
            &State::scalar(x_0),
            &State::scalar(x_t),
            &State::scalar(x_term),
        )
        .unwrap();
        let (q_mean, q_var) = posterior_by_quadrature(&grid, t, x_0, x_t, x_term);
        assert!(
            (kernel.mean.data()[0] - q_mean).abs() < 1e-8,
            "mean at t={t}: {} vs {q_mean}",
            kernel.mean.data()[0]
        );
        assert!(
            (kernel.var - q_var).abs() < 1e-8,
            "var at t={t}: {} vs {q_var}",
            kernel.var
        );
    }
}

#[test]
fn marginalization_identity_over_posterior() {
    // E over x_t of the posterior mean equals the t-1 marginal mean, and
    // the law of total variance recovers the t-1 marginal variance
    let grid = unit_grid(10);
    let bridge = BridgeModel::pinned(&grid);
    let (x_0, x_term) = (State::scalar(0.3), State::scalar(1.6));
    for t in 1..=10 {
        let cur = bridge.marginal_coeffs(t).unwrap();
        let prev = bridge.marginal_coeffs(t - 1).unwrap();
        let pc = bridge.posterior_coeffs(t).unwrap();
        let mean_t = cur.m * 0.3 + cur.n * 1.6;
        let prev_mean = prev.m * 0.3 + prev.n * 1.6;
        // posterior mean is affine in x_t: gain * x_t + const
        let posterior_mean_at = |x_t: f64| -> f64 {
            bridge
                .posterior_kernel(t, &x_0, &State::scalar(x_t), &x_term)
                .unwrap()
                .mean
                .data()[0]
        };
        let mixed_mean = posterior_mean_at(mean_t);
        assert!(
            (mixed_mean - prev_mean).abs() < 1e-10,
            "mixed mean at t={t}: {mixed_mean} vs {prev_mean}"
        );
        let slope = posterior_mean_at(mean_t + 1.0) - mixed_mean;
        let total_var = pc.var + slope * slope * cur.var;
        assert!(
            (total_var - prev.var).abs() < 1e-10,
            "total variance at t={t}: {total_var} vs {}",
            prev.var
        );
    }
}

#[test]
fn gou_transition_matches_euler_maruyama() {
    // simulate the defining SDE directly, bypassing every closed form
    let grid = unit_grid(10);
    let x_s = 1.0;
    let mu = 0.0;
    let paths = 100_000usize;
    let substeps = 2000usize;
    let h = grid.total_time() / substeps as f64;
    let sqrt_h = h.sqrt();
    let g = (2.0f64).sqrt(); // 2 lambda2 theta = 2
    let mut samples = Vec::with_capacity(paths);
    for p in 0..paths {
        let mut rng = stream_rng(404, p as u64);
        let mut x = x_s;
        for _ in 0..substeps {
            let z: f64 = rng.sample(StandardNormal);
            x += (mu - x) * h + g * sqrt_h * z;
        }
        samples.push(x);
    }
    let kernel = gou_transition(
        &grid,
        0,
        10,
        &State::scalar(x_s),
        &State::scalar(mu),
    )
    .unwrap();
    let (mean, var) = moments(&samples);
    let (se_mean, se_var) = standard_errors(&samples);
    assert!(
        (mean - kernel.mean.data()[0]).abs() < 3.0 * se_mean,
        "EM mean {mean} vs closed form {}",
        kernel.mean.data()[0]
    );
    assert!(
        (var - kernel.var).abs() < 3.0 * se_var,
        "EM var {var} vs closed form {}",
        kernel.var
    );
}

#[test]
fn gaussian_kl_matches_quadrature() {
    let cases = [
        (0.0, 0.25, 0.0, 1.0),
        (0.3, 0.5, -0.2, 0.8),
        (1.0, 2.0, 1.0, 2.0),
        (-0.7, 0.1, 0.4, 0.9),
    ];
    for (mp, vp, mq, vq) in cases {
        let p = goub_core::gou::GaussianKernel::new(State::scalar(mp), vp).unwrap();
        let q = goub_core::gou::GaussianKernel::new(State::scalar(mq), vq).unwrap();
        let closed = gaussian_kl(&p, &q).unwrap();
        let quad = kl_by_quadrature(mp, vp, mq, vq);
        assert!(
            (closed - quad).abs() < 1e-6,
            "KL mismatch for {:?}: {closed} vs {quad}",
            (mp, vp, mq, vq)
        );
    }
}

#[test]
fn kl_nonnegative_on_random_pairs() {
    let mut rng = stream_rng(77, 0);
    for _ in 0..200 {
        let mp: f64 = rng.gen_range(-2.0..2.0);
        let mq: f64 = rng.gen_range(-2.0..2.0);
        let vp: f64 = rng.gen_range(0.01..3.0);
        let vq: f64 = rng.gen_range(0.01..3.0);
        let p = goub_core::gou::GaussianKernel::new(State::scalar(mp), vp).unwrap();
        let q = goub_core::gou::GaussianKernel::new(State::scalar(mq), vq).unwrap();
        let kl = gaussian_kl(&p, &q).unwrap();
        assert!(kl >= 0.0, "negative KL {kl}");
        if (mp - mq).abs() < 1e-12 && (vp - vq).abs() < 1e-12 {
            assert!(kl < 1e-10);
        }
    }
    // zero exactly when equal
    let p = goub_core::gou::GaussianKernel::new(State::scalar(0.4), 0.7).unwrap();
    assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
}

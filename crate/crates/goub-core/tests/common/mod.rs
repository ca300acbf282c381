//! Independent oracles shared by the integration tests.
//!
//! Everything here goes through the plain process transition density only
//! (mean reversion + exponential variance saturation), never through the
//! bridge module, so agreement is a genuine cross-check of the conditioned
//! formulas.

use goub_core::schedule::ScheduleGrid;

/// Plain transition density `p(x_t = x | x_s)` of the mean-reverting
/// process with target `mu`, evaluated from first principles.
pub fn gou_density(grid: &ScheduleGrid, s: usize, t: usize, x_s: f64, mu: f64, x: f64) -> f64 {
    let tb = grid.theta_bar(s, t).unwrap();
    let mean = mu + (x_s - mu) * (-tb).exp();
    let var = grid.lambda2() * -(-2.0 * tb).exp_m1();
    gaussian_pdf(x, mean, var)
}

pub fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Mean and variance of an unnormalized density via Simpson quadrature.
pub fn density_moments(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    assert!(n % 2 == 0, "Simpson needs an even interval count");
    let h = (hi - lo) / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let fx = w * f(x);
        z += fx;
        m1 += fx * x;
        m2 += fx * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Integration window covering the product of two Gaussian factors in the
/// integration variable, each given as (mean, var). Generic Gaussian
/// algebra sizes the window only; the moments themselves stay numerical.
fn product_window(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let pa = 1.0 / a.1;
    let pb = 1.0 / b.1;
    let center = (a.0 * pa + b.0 * pb) / (pa + pb);
    let sd = (1.0 / (pa + pb)).sqrt();
    (center - 14.0 * sd, center + 14.0 * sd)
}

/// Brute-force conditioning oracle for the bridge forward transition:
/// `p(x_t | x_0, x_T)  prop  p(x_T | x_t) p(x_t | x_0)` with every factor a
/// plain process kernel. Returns (mean, var). Needs `0 < t < N`.
pub fn marginal_by_quadrature(
    grid: &ScheduleGrid,
    t: usize,
    x_0: f64,
    x_term: f64,
) -> (f64, f64) {
    let n = grid.steps();
    let mu = x_term;
    // factor p(x_t = x | x_0): transition forward from 0
    let e1 = (-grid.theta_bar(0, t).unwrap()).exp();
    let fa = (mu + (x_0 - mu) * e1, grid.sigma2(0, t).unwrap());
    // factor p(x_T | x_t = x), viewed as a Gaussian in x
    let e2 = (-grid.theta_bar(t, n).unwrap()).exp();
    let fb = (
        mu + (x_term - mu) / e2,
        grid.sigma2(t, n).unwrap() / (e2 * e2),
    );
    let (lo, hi) = product_window(fa, fb);
    density_moments(
        |x| gou_density(grid, t, n, x, mu, x_term) * gou_density(grid, 0, t, x_0, mu, x),
        lo,
        hi,
        4000,
    )
}

/// Brute-force conditioning oracle for the one-step posterior:
/// `p(x_{t-1} | x_0, x_t, x_T)  prop  p(x_t | x_{t-1}) p(x_{t-1} | x_0)`;
/// the terminal-state factors cancel for fixed `x_t`. Returns (mean, var).
/// Needs `t >= 2` (the posterior at `t = 1` is a point mass).
pub fn posterior_by_quadrature(
    grid: &ScheduleGrid,
    t: usize,
    x_0: f64,
    x_t: f64,
    x_term: f64,
) -> (f64, f64) {
    let mu = x_term;
    let e1 = (-grid.theta_bar(0, t - 1).unwrap()).exp();
    let fa = (mu + (x_0 - mu) * e1, grid.sigma2(0, t - 1).unwrap());
    let e_step = (-grid.theta_bar(t - 1, t).unwrap()).exp();
    let fb = (
        mu + (x_t - mu) / e_step,
        grid.sigma2(t - 1, t).unwrap() / (e_step * e_step),
    );
    let (lo, hi) = product_window(fa, fb);
    density_moments(
        |x| {
            gou_density(grid, t - 1, t, x, mu, x_t) * gou_density(grid, 0, t - 1, x_0, mu, x)
        },
        lo,
        hi,
        4000,
    )
}

/// Numerical KL between scalar Gaussians by quadrature of p ln(p/q).
pub fn kl_by_quadrature(mp: f64, vp: f64, mq: f64, vq: f64) -> f64 {
    let lo = mp - 12.0 * vp.sqrt();
    let hi = mp + 12.0 * vp.sqrt();
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = gaussian_pdf(x, mp, vp);
        let q = gaussian_pdf(x, mq, vq);
        if p > 0.0 {
            acc += w * p * (p / q).ln();
        }
    }
    acc * h / 3.0
}

/// Sample mean and variance.
pub fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard errors of the sample mean and sample variance.
pub fn standard_errors(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let (_, var) = moments(samples);
    ((var / n).sqrt(), var * (2.0 / (n - 1.0)).sqrt())
}

//! Closed-form ground truth for Gaussian data priors, plus the reference
//! kernels the pinned bridge degenerates to in its parameter limits.
//!
//! With `p(x_0) = N(mean, var I)` and a fixed terminal state, every marginal,
//! score and optimal noise prediction of the bridge is available exactly,
//! which is what the samplers and the trained predictor are tested against.

use crate::bridge::{self, BridgeModel};
use crate::error::{Error, Result};
use crate::gou::GaussianKernel;
use crate::schedule::ScheduleGrid;
use crate::state::State;

/// Isotropic Gaussian data prior paired with a fixed terminal state.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: State,
    pub var: f64,
}

impl GaussianPrior {
    pub fn new(mean: State, var: f64) -> Result<Self> {
        if !var.is_finite() || var < 0.0 {
            return Err(Error::invalid("prior.var", "must be finite and >= 0"));
        }
        Ok(GaussianPrior { mean, var })
    }
}

/// Marginal `p(x_t | x_T)` after integrating the prior through the forward
/// transition: mean `m mu_p + n x_T`, variance `m^2 var_p + var_t`.
pub fn analytic_marginal(
    prior: &GaussianPrior,
    grid: &ScheduleGrid,
    t: usize,
    x_term: &State,
) -> Result<GaussianKernel> {
    prior.mean.check_same_shape(x_term)?;
    let c = bridge::marginal_coeffs(grid, t)?;
    Ok(GaussianKernel {
        mean: prior.mean.lincomb(c.m, c.n, x_term),
        var: c.m * c.m * prior.var + c.var,
    })
}

/// Exact score `grad log p(x_t | x_T)` of the Gaussian-prior marginal.
pub fn analytic_score(
    prior: &GaussianPrior,
    grid: &ScheduleGrid,
    t: usize,
    x_t: &State,
    x_term: &State,
) -> Result<State> {
    check_interior(grid, t)?;
    let marginal = analytic_marginal(prior, grid, t, x_term)?;
    x_t.check_same_shape(&marginal.mean)?;
    Ok(x_t.sub(&marginal.mean).scale(-1.0 / marginal.var))
}

/// The noise prediction a perfect network would output:
/// `-sigma'_t * score`.
pub fn optimal_eps(
    prior: &GaussianPrior,
    grid: &ScheduleGrid,
    t: usize,
    x_t: &State,
    x_term: &State,
) -> Result<State> {
    let score = analytic_score(prior, grid, t, x_t, x_term)?;
    bridge::eps_from_score(&score, grid, t)
}

/// Target law the reverse samplers must reproduce.
///
/// The bridge reaches `x_T` from every start, so the terminal state carries
/// no information about `x_0` and the conditional is the prior itself.
pub fn analytic_posterior_x0(
    prior: &GaussianPrior,
    _grid: &ScheduleGrid,
    _x_term: &State,
) -> GaussianKernel {
    GaussianKernel {
        mean: prior.mean.clone(),
        var: prior.var,
    }
}

/// KL divergence between isotropic Gaussians, summed over components.
pub fn gaussian_kl(p: &GaussianKernel, q: &GaussianKernel) -> Result<f64> {
    p.mean.check_same_shape(&q.mean)?;
    if q.var == 0.0 {
        if p.var == 0.0 && p.mean == q.mean {
            return Ok(0.0);
        }
        return Err(Error::invalid("q.var", "KL against a Dirac is undefined"));
    }
    if p.var == 0.0 {
        return Ok(f64::INFINITY);
    }
    let dim = p.mean.len() as f64;
    let mean_sq: f64 = p
        .mean
        .data()
        .iter()
        .zip(q.mean.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(dim * (0.5 * (q.var / p.var).ln() - 0.5 + p.var / (2.0 * q.var))
        + mean_sq / (2.0 * q.var))
}

/// Brownian-bridge transition `N((1 - t/T) x_0 + (t/T) x_T, g^2 t(T-t)/T)`.
pub fn brownian_bridge_kernel(
    t: f64,
    total: f64,
    x_0: &State,
    x_term: &State,
    g: f64,
) -> Result<GaussianKernel> {
    x_0.check_same_shape(x_term)?;
    if !(0.0..=total).contains(&t) || total <= 0.0 {
        return Err(Error::invalid("t", "need 0 <= t <= T with T > 0"));
    }
    let frac = t / total;
    Ok(GaussianKernel {
        mean: x_0.lincomb(1.0 - frac, frac, x_term),
        var: g * g * t * (total - t) / total,
    })
}

/// Variance-exploding kernel: pure diffusion for `elapsed` time at rate `g`.
pub fn ve_kernel(elapsed: f64, x_s: &State, g: f64) -> Result<GaussianKernel> {
    if elapsed < 0.0 {
        return Err(Error::invalid("elapsed", "must be >= 0"));
    }
    Ok(GaussianKernel {
        mean: x_s.clone(),
        var: g * g * elapsed,
    })
}

/// Variance-preserving kernel between grid indices:
/// mean `x_s exp(-1/2 int g^2)`, variance `1 - exp(-int g^2)`,
/// with `int g^2 = 2 lambda2 theta_bar(s,t)`.
pub fn vp_kernel(
    grid: &ScheduleGrid,
    s: usize,
    t: usize,
    x_s: &State,
) -> Result<GaussianKernel> {
    let int_g2 = 2.0 * grid.lambda2() * grid.theta_bar(s, t)?;
    Ok(GaussianKernel {
        mean: x_s.scale((-0.5 * int_g2).exp()),
        var: -(-int_g2).exp_m1(),
    })
}

fn check_interior(grid: &ScheduleGrid, t: usize) -> Result<()> {
    if t == 0 || t >= grid.steps() {
        return Err(Error::UndefinedAtIndex {
            index: t,
            reason: "score undefined at the pinned ends".into(),
        });
    }
    Ok(())
}

/// Builds the near-zero-drift grid on which the pinned bridge coincides
/// with a Brownian bridge of diffusion `g` over total time `total`.
///
/// `theta` is tiny and `lambda2 = g^2 / (2 theta)`, so `g_t^2 = g^2` on
/// every interval while the mean reversion is negligible.
pub fn ve_limit_grid(steps: usize, total: f64, g: f64) -> Result<ScheduleGrid> {
    const TINY_THETA: f64 = 1e-8;
    if steps < 2 || total <= 0.0 || g <= 0.0 {
        return Err(Error::invalid("ve_limit_grid", "bad parameters"));
    }
    let dt = total / steps as f64;
    ScheduleGrid::from_theta(vec![TINY_THETA; steps], dt, g * g / (2.0 * TINY_THETA))
}

#[allow(dead_code)]
fn _assert_anchor_is_public(b: BridgeModel) -> BridgeModel {
    b
}

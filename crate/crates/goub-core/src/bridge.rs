//! The pinned bridge: a mean-reverting process conditioned to hit a fixed
//! terminal state `x_T` at index `N`.
//!
//! Conditioning adds `g^2 h` to the drift, where `h = grad log p(x_T | x_t)`
//! is Gaussian and available in closed form. Everything downstream is then
//! exact Gaussian algebra:
//!
//! - the forward transition `p(x_t | x_0, x_T)` has mean `m(t) x_0 + n(t) x_T`
//!   and variance `s'(t)^2 = sigma2(0,t) sigma2(t,N) / sigma2(0,N)`;
//! - the one-step posterior `p(x_{t-1} | x_0, x_t, x_T)` is Gaussian with
//!   coefficients `a`, `b` obtained by eliminating `x_0` between consecutive
//!   marginals;
//! - the reverse drift subtracts `g^2 * score` from the bridge drift.
//!
//! The mean-reversion anchor is either the pinned endpoint itself (the
//! default bridge) or the origin; the latter gives the variance-preserving
//! bridge used for comparisons. Both share the same variance algebra and
//! differ only in the `x_T` mean coefficients.

use crate::error::{Error, Result};
use crate::gou::GaussianKernel;
use crate::schedule::ScheduleGrid;
use crate::state::State;

/// Mean-reversion target of the underlying process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Reverts toward the pinned endpoint `x_T`.
    Endpoint,
    /// Reverts toward zero (variance-preserving construction).
    Origin,
}

/// Coefficients of the forward transition at index `t`:
/// mean `m * x_0 + n * x_T`, variance `var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCoeffs {
    pub m: f64,
    pub n: f64,
    pub var: f64,
}

/// Coefficients of the one-step posterior for the step `t -> t-1`.
///
/// The conditional `p(x_t | x_{t-1}, x_T)` is `N(a x_{t-1} + b x_T, ...)`;
/// the posterior mean is `gain * (x_t - b x_T) + prior_weight * mean_{t-1}`
/// with `gain = a var_{t-1} / var_t` and `prior_weight = 1 - a * gain`.
/// `gain` is computed as `exp(-theta_bar_{t-1:t}) sigma2(0,t-1) / sigma2(0,t)`,
/// which stays finite at `t = N` where both `a` and `var_t` vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub a: f64,
    pub b: f64,
    pub var: f64,
    pub gain: f64,
    pub prior_weight: f64,
}

/// A schedule grid plus an anchor choice.
#[derive(Debug, Clone, Copy)]
pub struct BridgeModel<'g> {
    pub grid: &'g ScheduleGrid,
    pub anchor: Anchor,
}

impl<'g> BridgeModel<'g> {
    pub fn new(grid: &'g ScheduleGrid, anchor: Anchor) -> Self {
        BridgeModel { grid, anchor }
    }

    /// The default endpoint-anchored bridge.
    pub fn pinned(grid: &'g ScheduleGrid) -> Self {
        BridgeModel {
            grid,
            anchor: Anchor::Endpoint,
        }
    }

    fn check_interior(&self, t: usize) -> Result<()> {
        let n = self.grid.steps();
        if t >= n {
            return Err(Error::UndefinedAtIndex {
                index: t,
                reason: "drift and h diverge at the pinned endpoint".into(),
            });
        }
        Ok(())
    }

    /// Conditioning gradient `grad log p(x_T | x_t)` at index `t < N`.
    pub fn h(&self, t: usize, x_t: &State, x_term: &State) -> Result<State> {
        self.check_interior(t)?;
        x_t.check_same_shape(x_term)?;
        let n = self.grid.steps();
        let e2 = (-self.grid.theta_bar(t, n)?).exp();
        // e2^2 / sigma2(t,N), fused to avoid cancellation near t = N
        let coeff = self.grid.decay2_over_sigma2(t, n)?;
        match self.anchor {
            Anchor::Endpoint => Ok(x_term.sub(x_t).scale(coeff)),
            // (x_T - e2 x_t) * e2 / sigma2(t,N)
            Anchor::Origin => Ok(x_term.lincomb(coeff / e2, -coeff, x_t)),
        }
    }

    /// Full conditioned drift `f + g^2 h` at index `t < N`.
    pub fn drift(&self, t: usize, x_t: &State, x_term: &State) -> Result<State> {
        self.check_interior(t)?;
        x_t.check_same_shape(x_term)?;
        let theta = self.grid.theta(t);
        let g2 = self.grid.g2(t);
        let h = self.h(t, x_t, x_term)?;
        match self.anchor {
            Anchor::Endpoint => {
                // theta (x_T - x_t) + g^2 h
                Ok(x_term.sub(x_t).scale(theta).add_scaled(g2, &h))
            }
            Anchor::Origin => {
                // -theta x_t + g^2 h
                Ok(x_t.scale(-theta).add_scaled(g2, &h))
            }
        }
    }

    /// Reverse-time drift `drift - g^2 * score` at index `t < N`.
    pub fn reverse_drift(
        &self,
        t: usize,
        x_t: &State,
        x_term: &State,
        score: &State,
    ) -> Result<State> {
        let d = self.drift(t, x_t, x_term)?;
        x_t.check_same_shape(score)?;
        Ok(d.add_scaled(-self.grid.g2(t), score))
    }

    /// Forward transition coefficients at index `t`.
    ///
    /// Endpoints return exact Dirac coefficients: `(1, 0, 0)` at `t = 0`
    /// and `(0, 1, 0)` at `t = N`.
    pub fn marginal_coeffs(&self, t: usize) -> Result<MarginalCoeffs> {
        let n = self.grid.steps();
        if t > n {
            return Err(Error::IndexOutOfRange { index: t, max: n });
        }
        if t == 0 {
            return Ok(MarginalCoeffs {
                m: 1.0,
                n: 0.0,
                var: 0.0,
            });
        }
        if t == n {
            return Ok(MarginalCoeffs {
                m: 0.0,
                n: 1.0,
                var: 0.0,
            });
        }
        let e1 = (-self.grid.theta_bar(0, t)?).exp();
        let e2 = (-self.grid.theta_bar(t, n)?).exp();
        let s1 = self.grid.sigma2(0, t)?;
        let s2 = self.grid.sigma2(t, n)?;
        let st = self.grid.sigma2(0, n)?;
        let m = e1 * s2 / st;
        let n_coeff = match self.anchor {
            Anchor::Endpoint => ((1.0 - e1) * s2 + e2 * e2 * s1) / st,
            Anchor::Origin => e2 * s1 / st,
        };
        Ok(MarginalCoeffs {
            m,
            n: n_coeff,
            var: s1 * s2 / st,
        })
    }

    /// Forward transition kernel `p(x_t | x_0, x_T)`.
    pub fn forward_marginal(
        &self,
        t: usize,
        x_0: &State,
        x_term: &State,
    ) -> Result<GaussianKernel> {
        x_0.check_same_shape(x_term)?;
        let c = self.marginal_coeffs(t)?;
        Ok(GaussianKernel {
            mean: x_0.lincomb(c.m, c.n, x_term),
            var: c.var,
        })
    }

    /// Posterior coefficients for the step `t -> t-1`, `1 <= t <= N`.
    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        let n = self.grid.steps();
        if t == 0 {
            return Err(Error::UndefinedAtIndex {
                index: 0,
                reason: "no step below index 0".into(),
            });
        }
        if t > n {
            return Err(Error::IndexOutOfRange { index: t, max: n });
        }
        let st = self.grid.sigma2(0, n)?;
        let s2_t = self.grid.sigma2(t, n)?;
        let s2_prev = self.grid.sigma2(t - 1, n)?;
        let step_decay = (-self.grid.theta_bar(t - 1, t)?).exp();
        let a = step_decay * s2_t / s2_prev;

        // b per the explicit transition expression: the x_T weight of
        // p(x_t | x_{t-1}, x_T), written out from the raw sigma terms.
        let e1_t = (-self.grid.theta_bar(0, t)?).exp();
        let e1_prev = (-self.grid.theta_bar(0, t - 1)?).exp();
        let e2_t = (-self.grid.theta_bar(t, n)?).exp();
        let e2_prev = (-self.grid.theta_bar(t - 1, n)?).exp();
        let s1_t = self.grid.sigma2(0, t)?;
        let s1_prev = self.grid.sigma2(0, t - 1)?;
        let b = match self.anchor {
            Anchor::Endpoint => {
                ((1.0 - e1_t) * s2_t + e2_t * e2_t * s1_t
                    - ((1.0 - e1_prev) * s2_prev + e2_prev * e2_prev * s1_prev) * a)
                    / st
            }
            Anchor::Origin => (e2_t * s1_t - e2_prev * s1_prev * a) / st,
        };

        // gain = a var_{t-1} / var_t, reduced so the t = N endpoint does
        // not evaluate 0/0; var(t=1) is exact 0 since var_0 = 0.
        let gain = step_decay * s1_prev / s1_t;
        let prior_weight = 1.0 - a * gain;
        let var_prev = s1_prev * s2_prev / st;
        let var = var_prev * prior_weight;
        Ok(PosteriorCoeffs {
            a,
            b,
            var,
            gain,
            prior_weight,
        })
    }

    /// Exact posterior kernel `p(x_{t-1} | x_0, x_t, x_T)`, `1 <= t <= N`.
    pub fn posterior_kernel(
        &self,
        t: usize,
        x_0: &State,
        x_t: &State,
        x_term: &State,
    ) -> Result<GaussianKernel> {
        x_0.check_same_shape(x_t)?;
        x_0.check_same_shape(x_term)?;
        let pc = self.posterior_coeffs(t)?;
        let prev = self.marginal_coeffs(t - 1)?;
        let prev_mean = x_0.lincomb(prev.m, prev.n, x_term);
        // gain (x_t - b x_T) + prior_weight * mean_{t-1}
        let mean = x_t
            .lincomb(pc.gain, -pc.gain * pc.b, x_term)
            .add_scaled(pc.prior_weight, &prev_mean);
        Ok(GaussianKernel { mean, var: pc.var })
    }

    /// Coefficient turning predicted noise into the score:
    /// `score = -eps / sigma'_t`. Defined for interior `1 <= t <= N-1`.
    pub fn score_from_eps(&self, eps: &State, t: usize) -> Result<State> {
        let sd = self.marginal_sd_interior(t)?;
        Ok(eps.scale(-1.0 / sd))
    }

    /// Inverse of [`Self::score_from_eps`].
    pub fn eps_from_score(&self, score: &State, t: usize) -> Result<State> {
        let sd = self.marginal_sd_interior(t)?;
        Ok(score.scale(-sd))
    }

    fn marginal_sd_interior(&self, t: usize) -> Result<f64> {
        let n = self.grid.steps();
        if t == 0 || t >= n {
            return Err(Error::UndefinedAtIndex {
                index: t,
                reason: "marginal deviation vanishes at the pinned ends".into(),
            });
        }
        Ok(self.marginal_coeffs(t)?.var.sqrt())
    }

    /// Discretized reverse-step mean given predicted noise:
    /// `x_t - [drift - g^2 score] dt` with `score = -eps / sigma'_t`.
    ///
    /// This is the quantity each deterministic full-weight reverse step
    /// produces, and the model side of the mean-matching loss.
    pub fn step_mean(&self, t: usize, x_t: &State, x_term: &State, eps: &State) -> Result<State> {
        let score = self.score_from_eps(eps, t)?;
        let rd = self.reverse_drift(t, x_t, x_term, &score)?;
        Ok(x_t.add_scaled(-self.grid.dt(), &rd))
    }

    /// Weight of `eps` inside [`Self::step_mean`]: `g_t^2 dt / sigma'_t`.
    pub fn eps_step_coeff(&self, t: usize) -> Result<f64> {
        let sd = self.marginal_sd_interior(t)?;
        Ok(self.grid.g2(t) * self.grid.dt() / sd)
    }

    /// Standard deviation the discretized reverse step assigns to one
    /// stochastic step: `g_t sqrt(dt)`.
    pub fn step_sd(&self, t: usize) -> f64 {
        self.grid.g(t) * self.grid.dt().sqrt()
    }
}

// Free-function surface for the default endpoint-anchored bridge.

pub fn h_function(grid: &ScheduleGrid, t: usize, x_t: &State, x_term: &State) -> Result<State> {
    BridgeModel::pinned(grid).h(t, x_t, x_term)
}

pub fn bridge_drift(grid: &ScheduleGrid, t: usize, x_t: &State, x_term: &State) -> Result<State> {
    BridgeModel::pinned(grid).drift(t, x_t, x_term)
}

pub fn marginal_coeffs(grid: &ScheduleGrid, t: usize) -> Result<MarginalCoeffs> {
    BridgeModel::pinned(grid).marginal_coeffs(t)
}

pub fn forward_marginal(
    grid: &ScheduleGrid,
    t: usize,
    x_0: &State,
    x_term: &State,
) -> Result<GaussianKernel> {
    BridgeModel::pinned(grid).forward_marginal(t, x_0, x_term)
}

pub fn posterior_coeffs(grid: &ScheduleGrid, t: usize) -> Result<PosteriorCoeffs> {
    BridgeModel::pinned(grid).posterior_coeffs(t)
}

pub fn posterior_kernel(
    grid: &ScheduleGrid,
    t: usize,
    x_0: &State,
    x_t: &State,
    x_term: &State,
) -> Result<GaussianKernel> {
    BridgeModel::pinned(grid).posterior_kernel(t, x_0, x_t, x_term)
}

pub fn reverse_drift(
    grid: &ScheduleGrid,
    t: usize,
    x_t: &State,
    x_term: &State,
    score: &State,
) -> Result<State> {
    BridgeModel::pinned(grid).reverse_drift(t, x_t, x_term, score)
}

pub fn score_from_eps(eps: &State, grid: &ScheduleGrid, t: usize) -> Result<State> {
    BridgeModel::pinned(grid).score_from_eps(eps, t)
}

pub fn eps_from_score(score: &State, grid: &ScheduleGrid, t: usize) -> Result<State> {
    BridgeModel::pinned(grid).eps_from_score(score, t)
}

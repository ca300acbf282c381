//! Drift schedule and cumulative quantities.
//!
//! The process runs on a uniform grid of `N` intervals with indices
//! `0..=N`; index `N` is the terminal time `T`. Interval `i` carries a
//! drift value `theta[i] >= 0`, and the diffusion is tied to it by
//! `g_i^2 = 2 * lambda2 * theta[i]`, which keeps the stationary variance
//! at `lambda2` for every interval. Cumulative integrals of theta are
//! stored as prefix sums so that interval queries are O(1) and
//! deterministic.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Rising profile `1 - cos^2(..)/cos^2(..)` evaluated on interval
    /// midpoints, rescaled so that `exp(-theta_bar_T) = delta`.
    FlippedCosine,
    /// `theta = 1` on every interval, `dt = -ln(delta) / N`.
    Constant,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flipped-cosine" => Ok(ScheduleKind::FlippedCosine),
            "constant" => Ok(ScheduleKind::Constant),
            other => Err(Error::invalid(
                "schedule.kind",
                format!("unknown kind `{other}` (expected flipped-cosine | constant)"),
            )),
        }
    }
}

/// Discretized time axis with drift values and cumulative integrals.
#[derive(Debug, Clone)]
pub struct ScheduleGrid {
    steps: usize,
    theta: Vec<f64>,
    dt: f64,
    lambda2: f64,
    /// `theta_bar_cum[i] = sum_{j < i} theta[j] * dt`, length `steps + 1`.
    theta_bar_cum: Vec<f64>,
    delta: f64,
}

/// Cosine-profile offset; keeps the profile finite at u = 0.
const COSINE_OFFSET: f64 = 0.008;
/// Lower clamp for the raw cosine profile so every interval has strictly
/// positive drift (interior marginal variances must not vanish).
const THETA_MIN: f64 = 1e-4;

impl ScheduleGrid {
    /// Builds a grid of `steps` intervals whose cumulative drift satisfies
    /// `exp(-theta_bar_T) = delta`.
    pub fn build(kind: ScheduleKind, steps: usize, delta: f64, lambda2: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("steps", "need at least 2 grid intervals"));
        }
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::invalid("delta", "must be finite and in (0, 1)"));
        }
        if !lambda2.is_finite() || lambda2 <= 0.0 {
            return Err(Error::invalid("lambda2", "must be finite and > 0"));
        }
        let theta: Vec<f64> = match kind {
            ScheduleKind::Constant => vec![1.0; steps],
            ScheduleKind::FlippedCosine => {
                let denom = profile_cos2(0.0);
                (0..steps)
                    .map(|i| {
                        let u = (i as f64 + 0.5) / steps as f64;
                        (1.0 - profile_cos2(u) / denom).clamp(THETA_MIN, 1.0)
                    })
                    .collect()
            }
        };
        let total: f64 = theta.iter().sum();
        let dt = -delta.ln() / total;
        Self::from_theta(theta, dt, lambda2)
    }

    /// Builds a grid directly from per-interval drift values and a step
    /// width. `delta` is derived from the cumulative integral.
    pub fn from_theta(theta: Vec<f64>, dt: f64, lambda2: f64) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::invalid("theta", "need at least 2 grid intervals"));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::invalid("dt", "must be finite and > 0"));
        }
        if !lambda2.is_finite() || lambda2 <= 0.0 {
            return Err(Error::invalid("lambda2", "must be finite and > 0"));
        }
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("theta", "values must be finite and >= 0"));
        }
        let steps = theta.len();
        let mut theta_bar_cum = Vec::with_capacity(steps + 1);
        let mut acc = 0.0;
        theta_bar_cum.push(0.0);
        for &th in &theta {
            acc += th * dt;
            theta_bar_cum.push(acc);
        }
        let delta = (-acc).exp();
        Ok(ScheduleGrid {
            steps,
            theta,
            dt,
            lambda2,
            theta_bar_cum,
            delta,
        })
    }

    /// Number of intervals `N`; valid state indices are `0..=N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Total time `T = N * dt`.
    pub fn total_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Terminal attenuation `exp(-theta_bar_T)`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i > self.steps {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.steps,
            });
        }
        Ok(())
    }

    /// Drift value on interval `i` (the interval starting at index `i`).
    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    /// Diffusion `g_i = sqrt(2 * lambda2 * theta_i)` on interval `i`.
    pub fn g(&self, i: usize) -> f64 {
        self.g2(i).sqrt()
    }

    /// `g_i^2 = 2 * lambda2 * theta_i`.
    pub fn g2(&self, i: usize) -> f64 {
        2.0 * self.lambda2 * self.theta[i]
    }

    /// Cumulative drift integral between indices `i <= j`.
    pub fn theta_bar(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i > j {
            return Err(Error::invalid("indices", format!("need i <= j, got {i} > {j}")));
        }
        Ok(self.theta_bar_cum[j] - self.theta_bar_cum[i])
    }

    /// Transition variance `lambda2 * (1 - exp(-2 * theta_bar(i, j)))`.
    ///
    /// Evaluated through `expm1`, so it stays accurate when the interval
    /// is short and monotone in `j`; bounded above by `lambda2`.
    pub fn sigma2(&self, i: usize, j: usize) -> Result<f64> {
        let tb = self.theta_bar(i, j)?;
        Ok(self.lambda2 * -(-2.0 * tb).exp_m1())
    }

    /// `exp(-2 * theta_bar(i, j)) / sigma2(i, j)` computed without the
    /// catastrophic cancellation the naive quotient has for short
    /// intervals: equals `1 / (lambda2 * (exp(2 * theta_bar) - 1))`.
    pub fn decay2_over_sigma2(&self, i: usize, j: usize) -> Result<f64> {
        let tb = self.theta_bar(i, j)?;
        Ok(1.0 / (self.lambda2 * (2.0 * tb).exp_m1()))
    }
}

fn profile_cos2(u: f64) -> f64 {
    let s = COSINE_OFFSET;
    let c = ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos();
    c * c
}

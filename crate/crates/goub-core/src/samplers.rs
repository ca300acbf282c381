//! Time integrators for the pinned bridge.
//!
//! The forward simulator is plain Euler-Maruyama on the conditioned SDE with
//! per-interval subdivision. The reverse samplers share one skeleton:
//!
//! - the first step `N -> N-1` goes through the posterior kernel with the
//!   current state standing in for the unknown clean state (its weight
//!   `m(N-1)` is negligible there), because the drift and score are
//!   singular at the pinned endpoint;
//! - interior steps are Euler steps on the reverse drift, stochastic for
//!   the SDE, deterministic with full score weight (mean iteration) or
//!   half weight (probability flow) for the ODEs;
//! - the last step `1 -> 0` is deterministic: the predicted noise at index
//!   1 is inverted through the forward transition to a clean-state
//!   estimate, which is exactly the posterior mean there since the
//!   posterior variance vanishes at index 0.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::bridge::BridgeModel;
use crate::error::{Error, Result};
use crate::gou::sample_kernel;
use crate::oracle::{optimal_eps, GaussianPrior};
use crate::predictor::NoisePredictor;
use crate::rng::Rng;
use crate::schedule::ScheduleGrid;
use crate::state::State;

/// Anything that can predict the noise `eps(x_t, x_T, t)`.
pub trait EpsSource {
    fn eps(&self, bridge: &BridgeModel, x_t: &State, x_term: &State, t: usize) -> Result<State>;
}

/// Score supplier for the reverse samplers: either the closed-form optimum
/// for a Gaussian data prior, or a trained predictor.
#[derive(Clone, Copy)]
pub enum ScoreSource<'a> {
    AnalyticOracle(&'a GaussianPrior),
    Predictor(&'a NoisePredictor),
}

impl EpsSource for ScoreSource<'_> {
    fn eps(&self, bridge: &BridgeModel, x_t: &State, x_term: &State, t: usize) -> Result<State> {
        match self {
            ScoreSource::AnalyticOracle(prior) => {
                optimal_eps(prior, bridge.grid, t, x_t, x_term)
            }
            ScoreSource::Predictor(p) => p.predict_eps(x_t, x_term, t, bridge.grid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    ReverseSde,
    ScoreOde,
    MeanOde,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(SamplerKind::ReverseSde),
            "score-ode" => Ok(SamplerKind::ScoreOde),
            "mean-ode" => Ok(SamplerKind::MeanOde),
            other => Err(Error::invalid(
                "sampler.kind",
                format!("unknown sampler `{other}` (expected sde | mean-ode | score-ode)"),
            )),
        }
    }
}

/// States recorded at grid indices.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<usize>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn state_at(&self, index: usize) -> Option<&State> {
        self.times
            .iter()
            .position(|&t| t == index)
            .map(|i| &self.states[i])
    }
}

/// Euler-Maruyama on the conditioned forward SDE, `substeps` updates per
/// grid interval. The very last substep pins the state to `x_term` instead
/// of evaluating the divergent drift.
pub fn simulate_forward(
    grid: &ScheduleGrid,
    x_0: &State,
    x_term: &State,
    substeps: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    x_0.check_same_shape(x_term)?;
    if substeps == 0 {
        return Err(Error::invalid("substeps", "must be >= 1"));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let h = dt / substeps as f64;
    let sqrt_h = h.sqrt();
    let mut x = x_0.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0);
    states.push(x.clone());
    for i in 0..n {
        let theta = grid.theta(i);
        let g2 = grid.g2(i);
        let g = grid.g(i);
        let tb_from_next = grid.theta_bar(i + 1, n)?;
        for k in 0..substeps {
            if i == n - 1 && k == substeps - 1 {
                x = x_term.clone();
                break;
            }
            // remaining drift integral from the current sub-time to T
            let tb = tb_from_next + theta * dt * (1.0 - k as f64 / substeps as f64);
            let coeff = theta + g2 / (grid.lambda2() * (2.0 * tb).exp_m1());
            for (xi, &pin) in x.data_mut().iter_mut().zip(x_term.data()) {
                let z: f64 = rng.sample(StandardNormal);
                *xi += coeff * (pin - *xi) * h + g * sqrt_h * z;
            }
        }
        times.push(i + 1);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Shared reverse iteration. `rng` is only consulted for the stochastic
/// sampler; the ODE variants are bitwise deterministic.
pub fn sample_reverse(
    bridge: &BridgeModel,
    x_term: &State,
    source: &dyn EpsSource,
    kind: SamplerKind,
    mut rng: Option<&mut Rng>,
) -> Result<State> {
    let n = bridge.grid.steps();
    if n < 2 {
        return Err(Error::invalid("grid", "need at least 2 intervals"));
    }
    let dt = bridge.grid.dt();

    // First step N -> N-1: posterior kernel with the terminal state as the
    // stand-in clean state.
    let mut x = {
        let kernel = bridge.posterior_kernel(n, x_term, x_term, x_term)?;
        match (kind, rng.as_deref_mut()) {
            (SamplerKind::ReverseSde, Some(r)) => sample_kernel(&kernel, r),
            (SamplerKind::ReverseSde, None) => {
                return Err(Error::invalid("rng", "stochastic sampler needs an RNG"))
            }
            _ => kernel.mean,
        }
    };

    let score_weight = match kind {
        SamplerKind::ScoreOde => 0.5,
        _ => 1.0,
    };

    for t in (2..n).rev() {
        let eps = source.eps(bridge, &x, x_term, t)?;
        let score = bridge.score_from_eps(&eps, t)?;
        let drift = bridge.drift(t, &x, x_term)?;
        let rd = drift.add_scaled(-score_weight * bridge.grid.g2(t), &score);
        x = x.add_scaled(-dt, &rd);
        if kind == SamplerKind::ReverseSde {
            let r = rng.as_deref_mut().expect("checked above");
            let sd = bridge.step_sd(t);
            for xi in x.data_mut() {
                let z: f64 = r.sample(StandardNormal);
                *xi += sd * z;
            }
        }
    }

    // Last step 1 -> 0: invert the predicted noise through the forward
    // transition; the posterior at index 0 is a point mass there.
    let eps = source.eps(bridge, &x, x_term, 1)?;
    let c = bridge.marginal_coeffs(1)?;
    let sd = c.var.sqrt();
    let mut out = State::zeros_like(&x);
    for ((o, (&xi, &e)), &term) in out
        .data_mut()
        .iter_mut()
        .zip(x.data().iter().zip(eps.data()))
        .zip(x_term.data())
    {
        *o = (xi - c.n * term - sd * e) / c.m;
    }
    Ok(out)
}

pub fn sample_reverse_sde(
    grid: &ScheduleGrid,
    x_term: &State,
    source: &dyn EpsSource,
    rng: &mut Rng,
) -> Result<State> {
    sample_reverse(
        &BridgeModel::pinned(grid),
        x_term,
        source,
        SamplerKind::ReverseSde,
        Some(rng),
    )
}

pub fn sample_score_ode(
    grid: &ScheduleGrid,
    x_term: &State,
    source: &dyn EpsSource,
) -> Result<State> {
    sample_reverse(
        &BridgeModel::pinned(grid),
        x_term,
        source,
        SamplerKind::ScoreOde,
        None,
    )
}

pub fn sample_mean_ode(
    grid: &ScheduleGrid,
    x_term: &State,
    source: &dyn EpsSource,
) -> Result<State> {
    sample_reverse(
        &BridgeModel::pinned(grid),
        x_term,
        source,
        SamplerKind::MeanOde,
        None,
    )
}

//! The unconditioned mean-reverting process.
//!
//! `dx = theta_t (mu - x) dt + g_t dw` with `g_t^2 = 2 lambda2 theta_t`.
//! Its transition kernel is Gaussian in closed form:
//! mean `mu + (x_s - mu) exp(-theta_bar_{s:t})`, variance
//! `lambda2 (1 - exp(-2 theta_bar_{s:t}))`, so one-step exact sampling
//! needs no integration.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::schedule::ScheduleGrid;
use crate::state::State;

/// Isotropic Gaussian over a state: mean vector plus one scalar variance.
///
/// `var == 0` is a Dirac mass; sampling returns the mean exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub mean: State,
    pub var: f64,
}

impl GaussianKernel {
    pub fn new(mean: State, var: f64) -> Result<Self> {
        if !var.is_finite() || var < 0.0 {
            return Err(Error::invalid("var", "must be finite and >= 0"));
        }
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                context: "kernel mean".into(),
            });
        }
        Ok(GaussianKernel { mean, var })
    }

    pub fn dirac(mean: State) -> Self {
        GaussianKernel { mean, var: 0.0 }
    }
}

/// Exact transition kernel from index `s` to index `t`.
pub fn gou_transition(
    grid: &ScheduleGrid,
    s: usize,
    t: usize,
    x_s: &State,
    mu: &State,
) -> Result<GaussianKernel> {
    x_s.check_same_shape(mu)?;
    if s == t {
        return Ok(GaussianKernel::dirac(x_s.clone()));
    }
    let decay = (-grid.theta_bar(s, t)?).exp();
    let var = grid.sigma2(s, t)?;
    // mu + (x_s - mu) * decay
    let mean = mu.lincomb(1.0 - decay, decay, x_s);
    Ok(GaussianKernel { mean, var })
}

/// Drift `theta_t (mu - x_t)` on the interval starting at `t`.
pub fn gou_drift(grid: &ScheduleGrid, t: usize, x_t: &State, mu: &State) -> Result<State> {
    x_t.check_same_shape(mu)?;
    if t >= grid.steps() {
        return Err(Error::IndexOutOfRange {
            index: t,
            max: grid.steps() - 1,
        });
    }
    let theta = grid.theta(t);
    Ok(mu.sub(x_t).scale(theta))
}

/// Diffusion `g_t = sqrt(2 lambda2 theta_t)` on the interval starting at `t`.
pub fn gou_diffusion(grid: &ScheduleGrid, t: usize) -> Result<f64> {
    if t >= grid.steps() {
        return Err(Error::IndexOutOfRange {
            index: t,
            max: grid.steps() - 1,
        });
    }
    Ok(grid.g(t))
}

/// Draws one sample; bit-reproducible for a given RNG state.
pub fn sample_kernel(kernel: &GaussianKernel, rng: &mut Rng) -> State {
    if kernel.var == 0.0 {
        return kernel.mean.clone();
    }
    let sd = kernel.var.sqrt();
    let mut out = kernel.mean.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::root_rng;
    use crate::schedule::ScheduleKind;

    fn unit_grid(steps: usize) -> ScheduleGrid {
        ScheduleGrid::build(ScheduleKind::Constant, steps, (-1.0f64).exp(), 1.0).unwrap()
    }

    #[test]
    fn transition_fixed_point_at_mu() {
        let grid = unit_grid(10);
        let mu = State::vector(vec![0.3, -0.7]);
        let k = gou_transition(&grid, 0, 7, &mu, &mu).unwrap();
        assert!(k.mean.max_abs_diff(&mu) < 1e-15);
    }

    #[test]
    fn transition_closed_form_values() {
        // theta = 1, lambda2 = 1, T = 1, full span: decay e^-1, var 1 - e^-2
        let grid = unit_grid(10);
        let x = State::scalar(1.0);
        let mu = State::scalar(0.0);
        let k = gou_transition(&grid, 0, 10, &x, &mu).unwrap();
        assert!((k.mean.data()[0] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((k.mean.data()[0] - 0.36788).abs() < 1e-5);
        assert!((k.var - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
        assert!((k.var - 0.86466).abs() < 1e-5);
    }

    #[test]
    fn transition_dirac_at_equal_indices() {
        let grid = unit_grid(10);
        let x = State::vector(vec![0.1, 0.9]);
        let mu = State::zeros_like(&x);
        let k = gou_transition(&grid, 4, 4, &x, &mu).unwrap();
        assert_eq!(k.var, 0.0);
        assert_eq!(k.mean, x);
    }

    #[test]
    fn transition_semigroup_composition() {
        // composing s->u then u->t analytically equals s->t
        let grid = unit_grid(20);
        let x = State::scalar(1.25);
        let mu = State::scalar(-0.5);
        for (s, u, t) in [(0, 7, 20), (2, 3, 17), (0, 10, 11)] {
            let k_su = gou_transition(&grid, s, u, &x, &mu).unwrap();
            let k_ut = gou_transition(&grid, u, t, &k_su.mean, &mu).unwrap();
            let decay_ut = (-grid.theta_bar(u, t).unwrap()).exp();
            let var_composed = k_ut.var + decay_ut * decay_ut * k_su.var;
            let k_st = gou_transition(&grid, s, t, &x, &mu).unwrap();
            assert!(k_ut.mean.max_abs_diff(&k_st.mean) < 1e-12);
            assert!((var_composed - k_st.var).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_reversion_limit() {
        // theta_bar = 20: kernel collapses onto N(mu, lambda2)
        let grid = ScheduleGrid::from_theta(vec![1.0; 40], 0.5, 1.0).unwrap();
        let x = State::scalar(5.0);
        let mu = State::scalar(1.0);
        let k = gou_transition(&grid, 0, 40, &x, &mu).unwrap();
        assert!((k.mean.data()[0] - 1.0).abs() < 1e-8 * 4.0);
        assert!((k.var - 1.0).abs() < 1e-8);
    }

    #[test]
    fn drift_and_diffusion_values() {
        let grid = unit_grid(10);
        let mu = State::scalar(0.0);
        let x = State::scalar(2.0);
        assert!((gou_drift(&grid, 3, &x, &mu).unwrap().data()[0] + 2.0).abs() < 1e-15);
        let zero = gou_drift(&grid, 3, &mu, &mu).unwrap();
        assert_eq!(zero.data()[0], 0.0);
        assert!((gou_diffusion(&grid, 3).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(gou_drift(&grid, 10, &x, &mu).is_err());
    }

    #[test]
    fn sample_kernel_dirac_and_reproducible() {
        let mean = State::vector(vec![0.5, -0.25]);
        let dirac = GaussianKernel::dirac(mean.clone());
        let mut rng = root_rng(1);
        assert_eq!(sample_kernel(&dirac, &mut rng), mean);

        let k = GaussianKernel::new(mean, 0.09).unwrap();
        let a = sample_kernel(&k, &mut root_rng(42));
        let b = sample_kernel(&k, &mut root_rng(42));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_kernel_standard_normal_moments() {
        // CLT bound: sample mean of 1e5 draws within 3/sqrt(1e5) of 0
        let n = 100_000usize;
        let k = GaussianKernel::new(State::scalar(0.0), 1.0).unwrap();
        let mut rng = root_rng(2024);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_kernel(&k, &mut rng).data()[0];
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let grid = unit_grid(4);
        let x = State::vector(vec![1.0, 2.0]);
        let mu = State::scalar(0.0);
        assert!(gou_transition(&grid, 0, 2, &x, &mu).is_err());
    }
}

//! Toy task construction: paired clean/degraded datasets.

use goub_core::error::Result;
use goub_core::restoration::{degrade, synthetic_image, Degradation};
use goub_core::rng::stream_rng;
use goub_core::state::State;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::{RunConfig, TaskKind};

pub struct TaskData {
    pub train: Vec<(State, State)>,
    pub test: Vec<(State, State)>,
    /// Flattened state dimension seen by the predictor.
    pub state_dim: usize,
}

/// RNG stream indices are partitioned per purpose so adding images never
/// shifts unrelated draws.
const STREAM_IMAGES: u64 = 1 << 32;
const STREAM_DEGRADE: u64 = 2 << 32;

pub fn degradation_of(config: &RunConfig) -> Option<Degradation> {
    match config.task {
        TaskKind::Mask => Some(Degradation::Mask {
            fraction: config.mask_fraction,
        }),
        TaskKind::DownUp => Some(Degradation::DownUp {
            factor: config.downup_factor,
        }),
        TaskKind::Stripes => Some(Degradation::Stripes {
            period: config.stripe_period,
            amplitude: config.stripe_amplitude,
        }),
        TaskKind::Identity => None,
        TaskKind::Gauss1d => None,
    }
}

pub fn build_task(config: &RunConfig) -> Result<TaskData> {
    match config.task {
        TaskKind::Gauss1d => {
            let x_term = State::scalar(config.gauss_x_term);
            let sd = config.gauss_prior_var.sqrt();
            let make = |count: usize, stream: u64| -> Vec<(State, State)> {
                let mut rng = stream_rng(config.seed, stream);
                (0..count)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (
                            State::scalar(config.gauss_prior_mean + sd * z),
                            x_term.clone(),
                        )
                    })
                    .collect()
            };
            Ok(TaskData {
                train: make(config.train_count, STREAM_IMAGES),
                test: make(config.test_count, STREAM_IMAGES + 1),
                state_dim: 1,
            })
        }
        _ => {
            let size = config.image_size;
            let kind = degradation_of(config);
            let mut pairs = Vec::with_capacity(config.train_count + config.test_count);
            for i in 0..config.train_count + config.test_count {
                let hq = synthetic_image(size, config.seed ^ STREAM_IMAGES, i as u64);
                let lq = match &kind {
                    Some(k) => {
                        let mut rng = stream_rng(config.seed ^ STREAM_DEGRADE, i as u64);
                        degrade(&hq, k, &mut rng)?
                    }
                    None => hq.clone(),
                };
                pairs.push((hq, lq));
            }
            let test = pairs.split_off(config.train_count);
            Ok(TaskData {
                train: pairs,
                test,
                state_dim: size * size,
            })
        }
    }
}

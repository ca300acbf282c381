//! Temporary gradient-direction probes (removed before finalizing).

use goub_cli::bridges::build_bridge;
use goub_cli::config::RunConfig;
use goub_cli::task::build_task;
use goub_core::bridge::BridgeModel;
use goub_core::predictor::{backprop, predictor_for_state, LossKind};
use goub_core::rng::root_rng;
use goub_core::training::{make_loss_sample, sample_training_tuple};

#[test]
fn probe_descent_direction_on_image_batch() {
    for act in ["relu", "gelu"] {
        let config = RunConfig::load(
            None,
            &[
                format!("model.activation={act}"),
                "task.train_count=8".into(),
                "task.test_count=1".into(),
                "seed=5".into(),
            ],
        )
        .unwrap();
        let task = build_task(&config).unwrap();
        let setup = build_bridge(&config).unwrap();
        let bridge = BridgeModel::new(&setup.grid, setup.anchor);
        let mut p = predictor_for_state(
            task.state_dim,
            &config.hidden,
            config.time_embed_dim,
            config.activation,
            config.seed,
        )
        .unwrap();
        // fixed batch
        let mut rng = root_rng(3);
        let mut batch = Vec::new();
        for i in 0..8 {
            let (x0, xt) = &task.train[i % task.train.len()];
            let (t, x_t) = sample_training_tuple(x0, xt, &bridge, 1, &mut rng).unwrap();
            batch.push(
                make_loss_sample(&bridge, t, x0, &x_t, xt, LossKind::L2, true).unwrap(),
            );
        }
        let (loss0, grads) = backprop(&p, &setup.grid, &batch, LossKind::L2).unwrap();
        // step along -grad with a small rate and re-evaluate
        for lr in [1e-6, 1e-5, 1e-4] {
            let mut q = p.clone();
            for i in 0..q.param_count() {
                q.set_param(i, q.get_param(i) - lr * grads.get(i));
            }
            let (loss1, _) = backprop(&q, &setup.grid, &batch, LossKind::L2).unwrap();
            println!("{act} lr={lr:.0e}: {loss0:.6} -> {loss1:.6} ({})", loss1 < loss0);
        }
        // finite-difference check on a handful of parameters
        let h = 1e-6;
        let mut bad = 0;
        for flat in (0..p.param_count()).step_by(p.param_count() / 25) {
            let orig = p.get_param(flat);
            p.set_param(flat, orig + h);
            let (lp, _) = backprop(&p, &setup.grid, &batch, LossKind::L2).unwrap();
            p.set_param(flat, orig - h);
            let (lm, _) = backprop(&p, &setup.grid, &batch, LossKind::L2).unwrap();
            p.set_param(flat, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(flat);
            let denom = fd.abs().max(an.abs()).max(1e-6);
            if ((fd - an) / denom).abs() > 1e-3 {
                bad += 1;
                if bad < 4 {
                    println!("  {act} param {flat}: fd {fd:.6e} vs an {an:.6e}");
                }
            }
        }
        println!("{act}: {bad} bad finite-difference params");
    }
}

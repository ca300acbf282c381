//! Temporary diagnostics (removed before finalizing).

use goub_cli::bridges::build_bridge;
use goub_cli::config::RunConfig;
use goub_cli::task::build_task;
use goub_core::bridge::BridgeModel;
use goub_core::gou::sample_kernel;
use goub_core::predictor::{init_predictor, LossKind};
use goub_core::rng::root_rng;
use goub_core::state::State;
use goub_core::training::train_loop;

#[test]
fn probe_linear_net_identity() {
    let config = RunConfig::load(
        None,
        &[
            "task.kind=identity".into(),
            "train.loss=l2".into(),
            "train.lr=3e-3".into(),
            "train.total_steps=4000".into(),
            "train.batch_size=16".into(),
            "train.t_min=8".into(),
            "train.lr_decay_steps=".into(),
            "train.log_every=500".into(),
            "task.train_count=8".into(),
            "task.test_count=1".into(),
            "seed=5".into(),
        ],
    )
    .unwrap();
    let task = build_task(&config).unwrap();
    let setup = build_bridge(&config).unwrap();
    let bridge = BridgeModel::new(&setup.grid, setup.anchor);
    // single affine layer: input -> output, no hidden nonlinearity
    let sizes = [2 * task.state_dim + config.time_embed_dim, task.state_dim];
    let p = init_predictor(&sizes, config.time_embed_dim, config.activation, 5).unwrap();
    let (trained, log) =
        train_loop(p, &task.train, &bridge, &config.train_config()).unwrap();
    println!("loss rows: {:?}", log.rows);
    let (hq, _) = &task.train[0];
    let mut rng = root_rng(99);
    for t in [15usize, 50, 90] {
        let kernel = bridge.forward_marginal(t, hq, hq).unwrap();
        let x_t = sample_kernel(&kernel, &mut rng);
        let sd = kernel.var.sqrt();
        let want = x_t.sub(hq).scale(1.0 / sd);
        let got = trained.predict_eps(&x_t, hq, t, &setup.grid).unwrap();
        let got_norm = got.mean_sq_diff(&State::zeros_like(&got)).sqrt();
        println!(
            "t={t}: rms err {:.3} vs |eps*| {:.3}, |got| {:.3}",
            want.mean_sq_diff(&got).sqrt(),
            want.mean_sq_diff(&State::zeros_like(&want)).sqrt(),
            got_norm
        );
    }
}

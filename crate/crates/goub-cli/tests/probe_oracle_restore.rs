//! Temporary probes (removed before finalizing).

use goub_cli::bridges::build_bridge;
use goub_cli::config::RunConfig;
use goub_cli::task::build_task;
use goub_core::bridge::BridgeModel;
use goub_core::oracle::GaussianPrior;
use goub_core::restoration::psnr;
use goub_core::samplers::{sample_reverse, SamplerKind, ScoreSource};

#[test]
fn probe_oracle_restore() {
    let config = RunConfig::load(
        None,
        &[
            "task.kind=mask".into(),
            "task.train_count=2".into(),
            "task.test_count=4".into(),
            "seed=5".into(),
        ],
    )
    .unwrap();
    let task = build_task(&config).unwrap();
    let setup = build_bridge(&config).unwrap();
    let bridge = BridgeModel::new(&setup.grid, setup.anchor);
    for (i, (hq, lq)) in task.test.iter().enumerate() {
        // cheat source: exact noise prediction for this image
        let prior = GaussianPrior::new(hq.clone(), 0.0).unwrap();
        let source = ScoreSource::AnalyticOracle(&prior);
        let restored = sample_reverse(&bridge, lq, &source, SamplerKind::MeanOde, None)
            .unwrap()
            .clamp(0.0, 1.0);
        println!(
            "image {i}: input psnr {:.2}, oracle mean-ode psnr {:.2}",
            psnr(lq, hq, 1.0).unwrap(),
            psnr(&restored, hq, 1.0).unwrap()
        );
    }
}

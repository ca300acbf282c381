//! Command implementations behind the CLI subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use goub_core::bridge::BridgeModel;
use goub_core::error::{Error, Result};
use goub_core::gou::{gou_transition, GaussianKernel};
use goub_core::oracle;
use goub_core::predictor::{predictor_for_state, NoisePredictor};
use goub_core::restoration::{psnr, read_pgm, restore, ssim, write_pgm};
use goub_core::rng::stream_rng;
use goub_core::samplers::{sample_reverse, SamplerKind, ScoreSource};
use goub_core::schedule::ScheduleGrid;
use goub_core::state::State;
use goub_core::training::{train_loop, write_metrics_csv};
use rand::Rng as _;

use crate::bridges::build_bridge;
use crate::config::{BridgeKind, RunConfig, TaskKind};
use crate::task::{build_task, TaskData};

pub struct CheckRow {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow {
        name,
        value,
        tolerance,
        pass: value.abs() <= tolerance,
    }
}

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_echo(config: &RunConfig, out: &Path) -> Result<()> {
    std::fs::write(out.join("config.echo"), config.echo())?;
    Ok(())
}

/// Runs the formula-identity suites and writes `report.csv`.
/// Returns true when every check passed.
pub fn cmd_verify(config: &RunConfig, out: &Path) -> Result<bool> {
    ensure_out(out)?;
    write_echo(config, out)?;
    let mut rows = Vec::new();
    let grid = ScheduleGrid::build(config.schedule_kind, config.steps, config.delta, config.lambda2)?;
    let n = grid.steps();

    // schedule identities
    rows.push(check(
        "schedule.delta_match",
        (-grid.theta_bar(0, n)?).exp() - grid.delta(),
        1e-10,
    ));
    let mut g2_dev = 0.0f64;
    for i in 0..n {
        g2_dev = g2_dev.max((grid.g2(i) - 2.0 * grid.lambda2() * grid.theta(i)).abs());
    }
    rows.push(check("schedule.g2_relation", g2_dev, 1e-14));
    let mut semi_dev = 0.0f64;
    for (i, j, k) in [(0, n / 4, n), (0, n / 2, 3 * n / 4), (1, 2, 3), (n / 3, n / 2, n)] {
        let lhs = grid.sigma2(i, k)?;
        let rhs = grid.sigma2(i, j)? * (-2.0 * grid.theta_bar(j, k)?).exp() + grid.sigma2(j, k)?;
        semi_dev = semi_dev.max((lhs - rhs).abs());
    }
    rows.push(check("schedule.sigma2_semigroup", semi_dev, 1e-12));

    // free-process identities
    let x = State::scalar(1.3);
    let mu = State::scalar(-0.2);
    let mut ck_dev = 0.0f64;
    for (s, u, t) in [(0usize, n / 3, n), (1, n / 2, n - 1)] {
        let k_su = gou_transition(&grid, s, u, &x, &mu)?;
        let k_ut = gou_transition(&grid, u, t, &k_su.mean, &mu)?;
        let decay = (-grid.theta_bar(u, t)?).exp();
        let var_comp = k_ut.var + decay * decay * k_su.var;
        let k_st = gou_transition(&grid, s, t, &x, &mu)?;
        ck_dev = ck_dev.max(k_ut.mean.max_abs_diff(&k_st.mean));
        ck_dev = ck_dev.max((var_comp - k_st.var).abs());
    }
    rows.push(check("process.chapman_kolmogorov", ck_dev, 1e-12));
    let long_grid = ScheduleGrid::from_theta(vec![1.0; 40], 0.5, grid.lambda2())?;
    let k_limit = gou_transition(&long_grid, 0, 40, &x, &mu)?;
    let mean_dev = k_limit.mean.max_abs_diff(&mu) / x.max_abs_diff(&mu);
    let var_dev = (k_limit.var - grid.lambda2()).abs() / grid.lambda2();
    rows.push(check("process.mean_reversion", mean_dev.max(var_dev), 1e-8));

    // bridge identities on the configured grid
    let bridge = BridgeModel::pinned(&grid);
    let (mut mn_dev, mut am_dev, mut b_dev, mut comp_dev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut min_step_var = f64::INFINITY;
    for t in 1..=n {
        let cur = bridge.marginal_coeffs(t)?;
        let prev = bridge.marginal_coeffs(t - 1)?;
        let pc = bridge.posterior_coeffs(t)?;
        mn_dev = mn_dev.max((cur.m + cur.n - 1.0).abs());
        am_dev = am_dev.max((pc.a * prev.m - cur.m).abs());
        b_dev = b_dev.max((pc.b + pc.a * prev.n - cur.n).abs());
        comp_dev = comp_dev.max((pc.gain * cur.m + pc.prior_weight * prev.m - prev.m).abs());
        comp_dev = comp_dev.max((pc.gain * (cur.n - pc.b) + pc.prior_weight * prev.n - prev.n).abs());
        comp_dev = comp_dev.max((pc.gain * pc.gain * cur.var + pc.var - prev.var).abs());
        min_step_var = min_step_var.min(cur.var - pc.a * pc.a * prev.var);
    }
    rows.push(check("bridge.m_plus_n_one", mn_dev, 1e-12));
    rows.push(check("bridge.a_recursion", am_dev, 1e-10));
    rows.push(check("bridge.b_recursion", b_dev, 1e-10));
    rows.push(check("bridge.posterior_composition", comp_dev, 1e-10));
    let end_vars = bridge.marginal_coeffs(0)?.var.abs() + bridge.marginal_coeffs(n)?.var.abs();
    rows.push(check("bridge.endpoint_vars_zero", end_vars, 0.0));
    rows.push(check(
        "bridge.step_var_nonnegative",
        if min_step_var >= -1e-15 { 0.0 } else { min_step_var },
        0.0,
    ));

    // limit kernels
    let g = 1.0f64;
    let ve_grid = oracle::ve_limit_grid(100, 1.0, g)?;
    let ve_bridge = BridgeModel::pinned(&ve_grid);
    let x0 = State::scalar(0.0);
    let xt = State::scalar(2.0);
    let mut bb_dev = 0.0f64;
    for i in 1..=10 {
        let t = i * 100 / 11;
        let c = ve_bridge.marginal_coeffs(t)?;
        let time = t as f64 * ve_grid.dt();
        let bb = oracle::brownian_bridge_kernel(time, 1.0, &x0, &xt, g)?;
        let mean = c.m * 0.0 + c.n * 2.0;
        bb_dev = bb_dev.max((mean - bb.mean.data()[0]).abs() / 2.0);
        bb_dev = bb_dev.max((c.var - bb.var).abs() / bb.var);
    }
    rows.push(check("limits.brownian_bridge", bb_dev, 1e-4));

    let theta = 1e-6;
    let ve_small = ScheduleGrid::from_theta(vec![theta; 10], 0.1, g * g / (2.0 * theta))?;
    let mut ve_dev = 0.0f64;
    for t in 1..=10 {
        let kern = gou_transition(&ve_small, 0, t, &x, &mu)?;
        let ve = oracle::ve_kernel(t as f64 * 0.1, &x, g)?;
        ve_dev = ve_dev.max(kern.mean.max_abs_diff(&ve.mean) / x.data()[0].abs());
        ve_dev = ve_dev.max((kern.var - ve.var).abs() / ve.var);
    }
    rows.push(check("limits.variance_exploding", ve_dev, 1e-4));

    let vp_grid = ScheduleGrid::from_theta(vec![1.0; 10], 0.1, 1.0)?;
    let zero = State::scalar(0.0);
    let mut vp_dev = 0.0f64;
    for t in 1..=10 {
        let kern = gou_transition(&vp_grid, 0, t, &x, &zero)?;
        let vp = oracle::vp_kernel(&vp_grid, 0, t, &x)?;
        vp_dev = vp_dev.max(kern.mean.max_abs_diff(&vp.mean));
        vp_dev = vp_dev.max((kern.var - vp.var).abs());
    }
    rows.push(check("limits.variance_preserving", vp_dev, 1e-10));

    // divergence nonnegativity on random Gaussian pairs
    let mut rng = stream_rng(config.seed, 9);
    let mut min_kl = f64::INFINITY;
    for _ in 0..100 {
        let p = GaussianKernel::new(State::scalar(rng.gen_range(-2.0..2.0)), rng.gen_range(0.01..3.0))?;
        let q = GaussianKernel::new(State::scalar(rng.gen_range(-2.0..2.0)), rng.gen_range(0.01..3.0))?;
        min_kl = min_kl.min(oracle::gaussian_kl(&p, &q)?);
    }
    rows.push(check(
        "oracle.kl_nonnegative",
        if min_kl >= 0.0 { 0.0 } else { min_kl },
        0.0,
    ));
    let p = GaussianKernel::new(State::scalar(0.0), 0.25)?;
    let q = GaussianKernel::new(State::scalar(0.0), 1.0)?;
    let kl_expect = (2.0f64).ln() - 0.5 + 0.125;
    rows.push(check(
        "oracle.kl_closed_form",
        oracle::gaussian_kl(&p, &q)? - kl_expect,
        1e-12,
    ));

    let mut csv = String::from("check,value,tolerance,pass\n");
    let mut all_pass = true;
    for row in &rows {
        all_pass &= row.pass;
        let _ = writeln!(
            csv,
            "{},{:.6e},{:.1e},{}",
            row.name, row.value, row.tolerance, row.pass
        );
    }
    std::fs::write(out.join("report.csv"), csv)?;
    Ok(all_pass)
}

pub struct TrainArtifacts {
    pub predictor: NoisePredictor,
    pub checkpoint: PathBuf,
}

/// Trains on the configured task and writes `checkpoint.bin` + `loss.csv`.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<TrainArtifacts> {
    ensure_out(out)?;
    write_echo(config, out)?;
    let task = build_task(config)?;
    let setup = build_bridge(config)?;
    let bridge = BridgeModel::new(&setup.grid, setup.anchor);
    let predictor = predictor_for_state(
        task.state_dim,
        &config.hidden,
        config.time_embed_dim,
        config.activation,
        config.seed,
    )?;
    let (trained, log) = train_loop(predictor, &task.train, &bridge, &config.train_config())?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &log)?;
    std::fs::write(out.join("loss.csv"), csv)?;
    let checkpoint = out.join("checkpoint.bin");
    trained.save_checkpoint(&checkpoint)?;
    Ok(TrainArtifacts {
        predictor: trained,
        checkpoint,
    })
}

pub struct RestoreOutcome {
    pub rows: Vec<(usize, f64, f64, f64, f64)>,
    pub mean_psnr_input: f64,
    pub mean_psnr_restored: f64,
    pub mean_ssim_restored: f64,
}

/// Restores the held-out test images with a given predictor and sampler.
pub fn run_restore(
    config: &RunConfig,
    task: &TaskData,
    bridge: &BridgeModel,
    predictor: &NoisePredictor,
    sampler: SamplerKind,
    out: Option<&Path>,
) -> Result<RestoreOutcome> {
    if config.task == TaskKind::Gauss1d {
        return Err(Error::invalid("task.kind", "restore needs an image task"));
    }
    let window = 7.min(config.image_size | 1);
    let mut rows = Vec::new();
    let (mut acc_in, mut acc_out, mut acc_ssim) = (0.0, 0.0, 0.0);
    for (i, (hq, lq)) in task.test.iter().enumerate() {
        let mut rng = stream_rng(config.seed ^ 0xACCE55, i as u64);
        let restored = restore(
            lq,
            predictor,
            bridge,
            sampler,
            if sampler == SamplerKind::ReverseSde {
                Some(&mut rng)
            } else {
                None
            },
        )?;
        let p_in = psnr(lq, hq, 1.0)?;
        let p_out = psnr(&restored, hq, 1.0)?;
        let s_out = ssim(&restored, hq, window, 0.01, 0.03)?;
        acc_in += p_in;
        acc_out += p_out;
        acc_ssim += s_out;
        rows.push((i, p_in, ssim(lq, hq, window, 0.01, 0.03)?, p_out, s_out));
        if let Some(dir) = out {
            write_pgm(&dir.join(format!("test{i:02}_hq.pgm")), hq)?;
            write_pgm(&dir.join(format!("test{i:02}_lq.pgm")), lq)?;
            write_pgm(&dir.join(format!("test{i:02}_restored.pgm")), &restored)?;
        }
    }
    let count = task.test.len() as f64;
    Ok(RestoreOutcome {
        rows,
        mean_psnr_input: acc_in / count,
        mean_psnr_restored: acc_out / count,
        mean_ssim_restored: acc_ssim / count,
    })
}

fn write_restore_csv(out: &Path, outcome: &RestoreOutcome) -> Result<()> {
    let mut csv = String::from("index,psnr_input,ssim_input,psnr_restored,ssim_restored\n");
    for (i, pi, si, po, so) in &outcome.rows {
        let _ = writeln!(csv, "{i},{pi:.4},{si:.6},{po:.4},{so:.6}");
    }
    let _ = writeln!(
        csv,
        "mean,{:.4},,{:.4},{:.6}",
        outcome.mean_psnr_input, outcome.mean_psnr_restored, outcome.mean_ssim_restored
    );
    std::fs::write(out.join("metrics.csv"), csv)?;
    Ok(())
}

/// Loads a checkpoint and restores the test split (or explicit PGM inputs).
pub fn cmd_restore(
    config: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    inputs: &[PathBuf],
) -> Result<RestoreOutcome> {
    ensure_out(out)?;
    write_echo(config, out)?;
    let predictor = NoisePredictor::load_checkpoint(checkpoint)?;
    let setup = build_bridge(config)?;
    let bridge = BridgeModel::new(&setup.grid, setup.anchor);
    let task = if inputs.is_empty() {
        build_task(config)?
    } else {
        // treat each provided PGM as both reference and degraded input:
        // metrics against the original are not available for real inputs,
        // so restored-vs-input rows measure change only
        let pairs: Result<Vec<(State, State)>> = inputs
            .iter()
            .map(|p| read_pgm(p).map(|img| (img.clone(), img)))
            .collect();
        TaskData {
            train: Vec::new(),
            test: pairs?,
            state_dim: predictor.state_dim(),
        }
    };
    if predictor.state_dim() != task.state_dim {
        return Err(Error::ShapeMismatch {
            expected: vec![task.state_dim],
            got: vec![predictor.state_dim()],
        });
    }
    let outcome = run_restore(config, &task, &bridge, &predictor, config.sampler, Some(out))?;
    write_restore_csv(out, &outcome)?;
    Ok(outcome)
}

/// Draws reverse-sampler outputs. Image tasks write PGMs; the scalar task
/// writes one CSV column of terminal samples.
pub fn cmd_sample(config: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    ensure_out(out)?;
    write_echo(config, out)?;
    let predictor = NoisePredictor::load_checkpoint(checkpoint)?;
    let setup = build_bridge(config)?;
    let bridge = BridgeModel::new(&setup.grid, setup.anchor);
    let source = ScoreSource::Predictor(&predictor);
    if config.task == TaskKind::Gauss1d {
        let x_term = State::scalar(config.gauss_x_term);
        let mut csv = String::from("path,x0\n");
        for p in 0..config.sampler_paths {
            let mut rng = stream_rng(config.seed ^ 0x5A5A, p as u64);
            let s = sample_reverse(
                &bridge,
                &x_term,
                &source,
                config.sampler,
                Some(&mut rng),
            )?;
            let _ = writeln!(csv, "{p},{:.12e}", s.data()[0]);
        }
        std::fs::write(out.join("samples.csv"), csv)?;
        return Ok(());
    }
    let task = build_task(config)?;
    for (i, (_, lq)) in task.test.iter().enumerate() {
        let mut rng = stream_rng(config.seed ^ 0x5A5A, i as u64);
        let s = sample_reverse(&bridge, lq, &source, config.sampler, Some(&mut rng))?;
        write_pgm(&out.join(format!("sample{i:02}.pgm")), &s.clamp(0.0, 1.0))?;
    }
    Ok(())
}

pub struct BridgeComparison {
    /// `(bridge, mean restored psnr, mean restored ssim)` per kind.
    pub rows: Vec<(&'static str, f64, f64)>,
    pub expected_direction: bool,
}

/// Trains and evaluates the three bridges with shared hyperparameters.
pub fn cmd_compare_bridges(config: &RunConfig, out: &Path) -> Result<BridgeComparison> {
    ensure_out(out)?;
    write_echo(config, out)?;
    let mut rows = Vec::new();
    for kind in [BridgeKind::Goub, BridgeKind::Veb, BridgeKind::Vpb] {
        let mut sub = config.clone();
        sub.bridge = kind;
        let task = build_task(&sub)?;
        let setup = build_bridge(&sub)?;
        let bridge = BridgeModel::new(&setup.grid, setup.anchor);
        let predictor = predictor_for_state(
            task.state_dim,
            &sub.hidden,
            sub.time_embed_dim,
            sub.activation,
            sub.seed,
        )?;
        let (trained, _) = train_loop(predictor, &task.train, &bridge, &sub.train_config())?;
        let outcome = run_restore(&sub, &task, &bridge, &trained, sub.sampler, None)?;
        rows.push((kind.name(), outcome.mean_psnr_restored, outcome.mean_ssim_restored));
    }
    let goub = rows[0].1;
    let best_other = rows[1].1.max(rows[2].1);
    let expected_direction = goub >= best_other;
    let mut csv = String::from("bridge,psnr,ssim\n");
    for (name, p, s) in &rows {
        let _ = writeln!(csv, "{name},{p:.4},{s:.6}");
    }
    let _ = writeln!(csv, "# expected_direction,{expected_direction}");
    std::fs::write(out.join("bridges.csv"), csv)?;
    Ok(BridgeComparison {
        rows,
        expected_direction,
    })
}

//! Built-in verification battery: gradient checks, algebraic identities,
//! and determinism probes. `hetfed verify` prints one line per check and
//! fails if any check fails; everything here finishes in seconds.

use hetfed_core::check::{central_difference, compare_gradients, FD_ATOL, FD_RTOL, FD_STEP};
use hetfed_core::federation::{
    run_experiment_with, FederationConfig, SerialRunner, StrategyKind,
};
use hetfed_core::losses::{
    ce_loss, cross_correlation_matrix, decompose_kd, fccm_loss, feddf_loss, fedmd_loss,
    fisl_loss, fntd_loss, instance_similarity, kd_loss, local_loss_fccl_conference,
    local_loss_fcclplus, local_loss_plain_kd, FntdVariant, GRAD_H_LOCAL, GRAD_Z_LOCAL,
    GRAD_Z_STUDENT,
};
use hetfed_core::models::{backward, build_client_model, Activation};
use hetfed_core::numerics::{batch_standardize, kl_divergence_rows, softmax_rows};
use hetfed_core::{seeds, Matrix};
use fixtures::{random_labels, random_matrix};

use crate::formats::csv::metrics_csv_string;
use crate::runner::ThreadRunner;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from(name: &'static str, result: Result<(), String>) -> Self {
        match result {
            Ok(()) => Self { name, passed: true, detail: String::new() },
            Err(detail) => Self { name, passed: false, detail },
        }
    }
}

mod fixtures {
    use super::*;
    use rand::Rng;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeds::rng(seed, "verify", 0);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
        let mut rng = seeds::rng(seed, "verify-labels", 0);
        (0..n).map(|_| rng.random_range(0..classes)).collect()
    }
}

/// Compare an analytic gradient against central differences.
fn fd_check(
    f: impl FnMut(&Matrix) -> hetfed_core::Result<f64>,
    at: &Matrix,
    analytic: &Matrix,
) -> Result<(), String> {
    let numeric = central_difference(f, at, FD_STEP).map_err(|e| e.to_string())?;
    compare_gradients(analytic, &numeric, FD_RTOL, FD_ATOL)
}

fn check_softmax_reparameterization() -> Result<(), String> {
    for seed in 0..5 {
        let z = random_matrix(4, 6, seed);
        let tau = 3.0;
        let a = softmax_rows(&z, tau).map_err(|e| e.to_string())?;
        let b = softmax_rows(&z.scaled(1.0 / tau), 1.0).map_err(|e| e.to_string())?;
        if a.max_abs_diff(&b) > 1e-12 {
            return Err(format!("temperature identity off by {}", a.max_abs_diff(&b)));
        }
    }
    Ok(())
}

fn check_standardize_idempotence() -> Result<(), String> {
    for seed in 0..5 {
        let z = random_matrix(8, 4, 10 + seed);
        let once = batch_standardize(&z).map_err(|e| e.to_string())?;
        let twice = batch_standardize(&once).map_err(|e| e.to_string())?;
        if once.max_abs_diff(&twice) > 1e-9 {
            return Err(format!("idempotence off by {}", once.max_abs_diff(&twice)));
        }
    }
    Ok(())
}

fn check_kl_nonnegative() -> Result<(), String> {
    for seed in 0..2000u64 {
        let p = softmax_rows(&random_matrix(1, 5, 100 + seed), 1.0).map_err(|e| e.to_string())?;
        let q = softmax_rows(&random_matrix(1, 5, 5000 + seed), 1.0).map_err(|e| e.to_string())?;
        let kl = kl_divergence_rows(&p, &q).map_err(|e| e.to_string())?;
        if kl < -1e-12 {
            return Err(format!("KL = {kl} < 0 at seed {seed}"));
        }
    }
    Ok(())
}

fn check_fccm_gradient() -> Result<(), String> {
    for seed in 0..5 {
        let z = random_matrix(6, 4, 200 + seed);
        let z_avg = random_matrix(6, 4, 300 + seed);
        let loss = fccm_loss(
            &cross_correlation_matrix(&z, &z_avg).map_err(|e| e.to_string())?,
            0.0051,
        )
        .map_err(|e| e.to_string())?;
        fd_check(
            |probe| Ok(fccm_loss(&cross_correlation_matrix(probe, &z_avg)?, 0.0051)?.value),
            &z,
            loss.grad(GRAD_Z_LOCAL).unwrap(),
        )?;
    }
    Ok(())
}

fn check_fisl_gradient() -> Result<(), String> {
    for seed in 0..5 {
        let h = random_matrix(5, 4, 400 + seed);
        let s_avg = instance_similarity(&random_matrix(5, 4, 500 + seed), 0.02)
            .map_err(|e| e.to_string())?;
        let loss = fisl_loss(&instance_similarity(&h, 0.02).map_err(|e| e.to_string())?, &s_avg)
            .map_err(|e| e.to_string())?;
        fd_check(
            |probe| Ok(fisl_loss(&instance_similarity(probe, 0.02)?, &s_avg)?.value),
            &h,
            loss.grad(GRAD_H_LOCAL).unwrap(),
        )?;
    }
    Ok(())
}

fn check_local_loss_gradients() -> Result<(), String> {
    for seed in 0..5 {
        let z_s = random_matrix(5, 4, 600 + seed);
        let z_t = random_matrix(5, 4, 700 + seed);
        let z_star = random_matrix(5, 4, 750 + seed);
        let labels = random_labels(5, 4, seed);

        let ce = ce_loss(&z_s, &labels).map_err(|e| e.to_string())?;
        fd_check(|p| Ok(ce_loss(p, &labels)?.value), &z_s, ce.grad(GRAD_Z_STUDENT).unwrap())?;

        let kd = kd_loss(&z_t, &z_s, 3.0, false).map_err(|e| e.to_string())?;
        fd_check(
            |p| Ok(kd_loss(&z_t, p, 3.0, false)?.value),
            &z_s,
            kd.grad(GRAD_Z_STUDENT).unwrap(),
        )?;

        for variant in [FntdVariant::Renormalized, FntdVariant::Literal] {
            let fntd = fntd_loss(&z_t, &z_s, 3.0, &labels, variant).map_err(|e| e.to_string())?;
            fd_check(
                |p| Ok(fntd_loss(&z_t, p, 3.0, &labels, variant)?.value),
                &z_s,
                fntd.grad(GRAD_Z_STUDENT).unwrap(),
            )?;
        }

        let plain = local_loss_plain_kd(&z_s, &labels, &z_t, 3.0).map_err(|e| e.to_string())?;
        fd_check(
            |p| Ok(local_loss_plain_kd(p, &labels, &z_t, 3.0)?.value),
            &z_s,
            plain.grad(GRAD_Z_STUDENT).unwrap(),
        )?;

        let full = local_loss_fcclplus(&z_s, &labels, &z_t, 3.0, FntdVariant::Renormalized)
            .map_err(|e| e.to_string())?;
        fd_check(
            |p| Ok(local_loss_fcclplus(p, &labels, &z_t, 3.0, FntdVariant::Renormalized)?.value),
            &z_s,
            full.grad(GRAD_Z_STUDENT).unwrap(),
        )?;

        let conf = local_loss_fccl_conference(&z_s, &labels, &z_t, Some(&z_star), 3.0)
            .map_err(|e| e.to_string())?;
        fd_check(
            |p| Ok(local_loss_fccl_conference(p, &labels, &z_t, Some(&z_star), 3.0)?.value),
            &z_s,
            conf.grad(GRAD_Z_STUDENT).unwrap(),
        )?;
    }
    Ok(())
}

fn check_baseline_gradients() -> Result<(), String> {
    for seed in 0..5 {
        let z = random_matrix(5, 4, 800 + seed);
        let z_avg = random_matrix(5, 4, 900 + seed);
        let df = feddf_loss(&z_avg, &z).map_err(|e| e.to_string())?;
        fd_check(|p| Ok(feddf_loss(&z_avg, p)?.value), &z, df.grad(GRAD_Z_LOCAL).unwrap())?;
        let md = fedmd_loss(&z, &z_avg).map_err(|e| e.to_string())?;
        fd_check(|p| Ok(fedmd_loss(p, &z_avg)?.value), &z, md.grad(GRAD_Z_LOCAL).unwrap())?;
    }
    Ok(())
}

fn check_full_network_gradient() -> Result<(), String> {
    let mut rng = seeds::rng(42, "verify-net", 0);
    let model = build_client_model(4, &[6, 5], 3, Activation::Tanh, &mut rng)
        .map_err(|e| e.to_string())?;
    let x = random_matrix(4, 4, 1000);
    let labels = random_labels(4, 3, 40);
    let (_, z, cache) = model.forward(&x).map_err(|e| e.to_string())?;
    let loss = ce_loss(&z, &labels).map_err(|e| e.to_string())?;
    let grads = backward(&model, &cache, loss.grad(GRAD_Z_STUDENT).unwrap(), None)
        .map_err(|e| e.to_string())?;
    for pi in 0..model.params().len() {
        let at = model.params()[pi].clone();
        let numeric = central_difference(
            |probe| {
                let mut m = model.clone();
                *m.params_mut()[pi] = probe.clone();
                let (_, z, _) = m.forward(&x)?;
                Ok(ce_loss(&z, &labels)?.value)
            },
            &at,
            FD_STEP,
        )
        .map_err(|e| e.to_string())?;
        compare_gradients(grads.mats()[pi], &numeric, FD_RTOL, FD_ATOL)?;
    }
    Ok(())
}

fn check_kd_decomposition() -> Result<(), String> {
    for seed in 0..20 {
        let z_t = random_matrix(6, 5, 1100 + seed);
        let z_s = random_matrix(6, 5, 1200 + seed);
        let labels = random_labels(6, 5, 50 + seed);
        let (td, ntd) = decompose_kd(&z_t, &z_s, 3.0, &labels).map_err(|e| e.to_string())?;
        let kd = kd_loss(&z_t, &z_s, 3.0, false).map_err(|e| e.to_string())?.value;
        if (td + ntd - kd).abs() > 1e-12 {
            return Err(format!("td + ntd != kd by {}", (td + ntd - kd).abs()));
        }
    }
    Ok(())
}

fn check_fntd_target_gradient_zero() -> Result<(), String> {
    for seed in 0..10 {
        let z_t = random_matrix(6, 5, 1300 + seed);
        let z_s = random_matrix(6, 5, 1400 + seed);
        let labels = random_labels(6, 5, 60 + seed);
        let loss = fntd_loss(&z_t, &z_s, 3.0, &labels, FntdVariant::Renormalized)
            .map_err(|e| e.to_string())?;
        let grad = loss.grad(GRAD_Z_STUDENT).unwrap();
        for (b, &t) in labels.iter().enumerate() {
            if grad[(b, t)] != 0.0 {
                return Err(format!("target gradient {} at row {b}", grad[(b, t)]));
            }
        }
    }
    Ok(())
}

fn check_plain_kd_conflict_formula() -> Result<(), String> {
    for seed in 0..10 {
        let z_s = random_matrix(6, 5, 1500 + seed);
        let z_t = random_matrix(6, 5, 1600 + seed);
        let labels = random_labels(6, 5, 70 + seed);
        let tau = 3.0;
        let loss = local_loss_plain_kd(&z_s, &labels, &z_t, tau).map_err(|e| e.to_string())?;
        let grad = loss.grad(GRAD_Z_STUDENT).unwrap();
        let p1 = softmax_rows(&z_s, 1.0).map_err(|e| e.to_string())?;
        let ps = softmax_rows(&z_s, tau).map_err(|e| e.to_string())?;
        let pt = softmax_rows(&z_t, tau).map_err(|e| e.to_string())?;
        for (b, &t) in labels.iter().enumerate() {
            let expected = ((p1[(b, t)] - 1.0) + tau * (ps[(b, t)] - pt[(b, t)])) / 6.0;
            if (grad[(b, t)] - expected).abs() > 1e-10 {
                return Err(format!(
                    "target gradient {} differs from formula {expected}",
                    grad[(b, t)]
                ));
            }
        }
    }
    Ok(())
}

fn tiny_experiment_config() -> FederationConfig {
    FederationConfig {
        strategy: StrategyKind::Fcclplus,
        epochs: 2,
        local_rounds: 1,
        collab_passes: 1,
        collab_batch: 32,
        local_batch: 16,
        pretrain_epochs: 2,
        seed: 3,
        scenario: hetfed_core::data::ScenarioSpec {
            domains: 3,
            classes: 3,
            input_dim: 6,
            train_sizes: vec![40, 30, 50],
            test_size: 30,
            shift_strength: 0.8,
            noise_sigma: 0.3,
            class_separation: 1.0,
            public_size: 64,
            public_provenance: hetfed_core::data::PoolProvenance::Mixture,
            public_relevance: 1.0,
            public_shift_scale: 1.0,
            augment: hetfed_core::data::AugmentMode::Weak,
        },
        model: hetfed_core::federation::ModelSpec {
            hidden: vec![vec![10, 5], vec![12, 6], vec![8, 4]],
            activation: Activation::Tanh,
        },
        ..FederationConfig::default()
    }
}

fn check_experiment_determinism() -> Result<(), String> {
    let cfg = tiny_experiment_config();
    let a = run_experiment_with(&cfg, &SerialRunner).map_err(|e| e.to_string())?;
    let b = run_experiment_with(&cfg, &SerialRunner).map_err(|e| e.to_string())?;
    if metrics_csv_string(&a.log) != metrics_csv_string(&b.log) {
        return Err("identical runs produced different metrics".into());
    }
    Ok(())
}

fn check_frozen_targets() -> Result<(), String> {
    let cfg = tiny_experiment_config();
    let serial = run_experiment_with(&cfg, &SerialRunner).map_err(|e| e.to_string())?;
    let threaded = run_experiment_with(&cfg, &ThreadRunner).map_err(|e| e.to_string())?;
    for (a, b) in serial.clients.iter().zip(&threaded.clients) {
        for (x, y) in a.model.params().iter().zip(b.model.params()) {
            let diff = x.max_abs_diff(y);
            if diff > 1e-12 {
                return Err(format!("serial vs parallel parameter distance {diff}"));
            }
        }
    }
    Ok(())
}

/// Run the whole battery.
pub fn run_battery() -> Vec<CheckResult> {
    vec![
        CheckResult::from("softmax-temperature-identity", check_softmax_reparameterization()),
        CheckResult::from("standardize-idempotence", check_standardize_idempotence()),
        CheckResult::from("kl-nonnegativity", check_kl_nonnegative()),
        CheckResult::from("fccm-gradient", check_fccm_gradient()),
        CheckResult::from("fisl-gradient", check_fisl_gradient()),
        CheckResult::from("local-loss-gradients", check_local_loss_gradients()),
        CheckResult::from("baseline-loss-gradients", check_baseline_gradients()),
        CheckResult::from("full-network-gradient", check_full_network_gradient()),
        CheckResult::from("kd-decomposition-identity", check_kd_decomposition()),
        CheckResult::from("fntd-target-gradient-zero", check_fntd_target_gradient_zero()),
        CheckResult::from("plain-kd-conflict-formula", check_plain_kd_conflict_formula()),
        CheckResult::from("experiment-determinism", check_experiment_determinism()),
        CheckResult::from("frozen-target-parallelism", check_frozen_targets()),
    ]
}

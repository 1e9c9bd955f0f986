//! Full acceptance battery. Each test prints one pass/fail line; the toy
//! generative run is the only long one.

use std::time::Instant;

use conforge_core::datakit::{generate_toy_dataset, toy_mode_conformer, ToySpec};
use conforge_core::denoiser::{DenoiserConfig, DenoiserModel};
use conforge_core::metrics::{aligned_rmsd, cov_mat_precision, cov_mat_recall, rmsd_matrix, ConformerSet};
use conforge_core::objective::ObjectiveKind;
use conforge_core::sampler::{sample, SamplerConfig};
use conforge_core::schedule::SchedulePreset;
use conforge_core::trainer::{train_step, EmaTracker, TrainerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use conforge_core::verify::{
    check_denoiser_equivariance, check_gradient, check_kabsch_recovery, check_kl_weight_identity,
    check_marginal_composition, check_metrics_oracle, check_objective_invariance,
    check_posterior_grid_bayes, check_projector_algebra, check_sampler_equivariance,
    CheckResult,
};

fn report(criterion: &str, r: &CheckResult) {
    let tag = if r.passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {}", r.detail);
    assert!(r.passed, "{criterion}: {}", r.detail);
}

#[test]
fn criterion_01_denoiser_equivariance() {
    report("denoiser equivariance", &check_denoiser_equivariance(100).unwrap());
}

#[test]
fn criterion_02_sampler_equivariance() {
    report("sampler equivariance", &check_sampler_equivariance(20).unwrap());
}

#[test]
fn criterion_03_closed_form_marginal() {
    report(
        "closed-form marginal",
        &check_marginal_composition(100_000, 100).unwrap(),
    );
}

#[test]
fn criterion_04_posterior_and_kl_identity() {
    report("posterior grid Bayes", &check_posterior_grid_bayes().unwrap());
    report("KL weight identity", &check_kl_weight_identity().unwrap());
}

#[test]
fn criterion_05_projector_algebra() {
    report("projector algebra", &check_projector_algebra().unwrap());
}

#[test]
fn criterion_06_gradient_correctness() {
    report("gradient correctness", &check_gradient(1e-5).unwrap());
}

#[test]
fn criterion_07_objective_invariance() {
    report("objective invariance", &check_objective_invariance(50).unwrap());
}

#[test]
fn criterion_08_metrics_oracle() {
    report("metrics oracle", &check_metrics_oracle().unwrap());
}

#[test]
fn criterion_10_kabsch_recovery() {
    report("Kabsch recovery", &check_kabsch_recovery(1000).unwrap());
}

/// Train on the two-mode corpus at desk scale and require the sampled
/// ensembles to recover both modes with high coverage.
#[test]
fn criterion_09_toy_generative_recovery() {
    let start = Instant::now();
    let train_spec = ToySpec::default();
    let delta = 3.0 * train_spec.jitter;
    let (dataset, _) = generate_toy_dataset(&train_spec).unwrap();
    let holdout_spec = ToySpec {
        num_molecules: 20,
        conformers_per_molecule: 5,
        seed: 1234,
        ..train_spec.clone()
    };
    let (holdout, _) = generate_toy_dataset(&holdout_spec).unwrap();

    let schedule = SchedulePreset::Desk.build();
    let mut denoiser_cfg = DenoiserConfig::desk(32, 3, 4, 12.0);
    denoiser_cfg.rbf_bins = 48;
    let mut model = DenoiserModel::init(denoiser_cfg, 0).unwrap();
    let mut cfg = TrainerConfig {
        objective: ObjectiveKind::Aligned,
        batch_size: 16,
        steps: 24_000,
        seed: 5,
        ..Default::default()
    };
    cfg.adam.lr = 1e-3;
    // Long phase at the base rate, short polishing phase at a fifth of it;
    // sampling runs on the averaged weights.
    let mut ema = EmaTracker::new(0.999).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step == 20_000 {
            cfg.adam.lr = 2e-4;
        }
        let loss = train_step(&mut model, &schedule, &dataset, &cfg, &mut rng).unwrap();
        ema.update(&model.params);
        history.push(loss);
    }
    model.params = ema.averaged(&model.params);
    println!(
        "trained {} steps in {:.0}s, loss {:.4} -> {:.4}",
        cfg.steps,
        start.elapsed().as_secs_f64(),
        history[..20].iter().sum::<f64>() / 20.0,
        history[history.len() - 20..].iter().sum::<f64>() / 20.0
    );

    let mode0 = toy_mode_conformer(0, &train_spec).unwrap();
    let mode1 = toy_mode_conformer(1, &train_spec).unwrap();
    let mut sets = Vec::new();
    let mut mode_counts = [0usize; 2];
    let mut total_samples = 0usize;
    for (i, record) in holdout.iter().enumerate() {
        let sampler_cfg = SamplerConfig {
            num_samples: 2 * record.conformers.len(),
            seed: 9000 + i as u64,
            noise_at_t1: false,
        };
        let generated = sample(&model, &schedule, &record.graph, &sampler_cfg).unwrap();
        for g in &generated {
            let d0 = aligned_rmsd(g, &mode0).unwrap();
            let d1 = aligned_rmsd(g, &mode1).unwrap();
            mode_counts[usize::from(d1 < d0)] += 1;
            total_samples += 1;
        }
        sets.push(ConformerSet {
            reference: record.conformers.clone(),
            generated,
        });
    }

    let mut cov_r = 0.0;
    let mut cov_p = 0.0;
    let mut mat_r = 0.0;
    for set in &sets {
        let m = rmsd_matrix(set).unwrap();
        let r = cov_mat_recall(&m, delta).unwrap();
        let p = cov_mat_precision(&m, delta).unwrap();
        cov_r += r.coverage;
        cov_p += p.coverage;
        mat_r += r.matching;
    }
    cov_r /= sets.len() as f64;
    cov_p /= sets.len() as f64;
    mat_r /= sets.len() as f64;
    let frac0 = mode_counts[0] as f64 / total_samples as f64;
    let frac1 = mode_counts[1] as f64 / total_samples as f64;
    let elapsed = start.elapsed().as_secs_f64();

    let passed = cov_r >= 90.0 && cov_p >= 80.0 && frac0 >= 0.2 && frac1 >= 0.2
        && elapsed < 1800.0;
    let tag = if passed { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] toy generative recovery: COV-R {cov_r:.1}% (need >= 90), COV-P {cov_p:.1}% \
         (need >= 80), MAT-R {mat_r:.3} at delta {delta}, mode split {frac0:.2}/{frac1:.2} \
         (each >= 0.20), {elapsed:.0}s (< 1800)"
    );
    assert!(passed, "toy generative recovery failed");
}

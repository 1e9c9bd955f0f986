//! Self-contained correctness checks with independent oracles: Monte Carlo
//! moment matching, grid-based Bayes posteriors, finite-difference
//! gradients, brute-force metric recomputation, and symmetry probes. Each
//! check reports a name, a pass flag, and a short diagnostic.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datakit::{generate_toy_dataset, ToySpec};
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::diffcore::Tensor;
use crate::error::Result;
use crate::geom::{
    apply_transform, dense_com_projector, kabsch_align, project_com_free, rmsd, Conformation,
    RigidTransform,
};
use crate::metrics::{aligned_rmsd, cov_mat_precision, cov_mat_recall, rmsd_matrix, ConformerSet};
use crate::molgraph::{build_neighbor_list, Bond, BondType, MolecularGraph};
use crate::objective::{
    loss, make_aligned_target, make_chainrule_target, make_plain_target, ObjectiveKind,
    TrainingExample,
};
use crate::rng::{random_rotation, random_translation, standard_normal_coords};
use crate::sampler::{noise_like, reverse_step, sample_prior};
use crate::schedule::SchedulePreset;
use crate::trainer::{loss_and_gradients, BatchItem};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

fn chain_graph(n: usize) -> MolecularGraph {
    let bonds = (0..n - 1)
        .map(|i| Bond { i, j: i + 1, bond_type: BondType::Single })
        .collect();
    MolecularGraph::new((0..n).map(|i| (i % 3) as u8).collect(), bonds).unwrap()
}

fn small_model(seed: u64) -> DenoiserModel {
    DenoiserModel::init(DenoiserConfig::desk(16, 2, 2, 20.0), seed).unwrap()
}

/// The predicted field rotates with the input and ignores translations,
/// measured as a relative field norm over random (graph, C, t, R, g).
pub fn check_denoiser_equivariance(trials: usize) -> Result<CheckResult> {
    let model = small_model(3);
    let s = SchedulePreset::Desk.build();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = 3 + trial % 5;
        let g = chain_graph(n);
        let c = standard_normal_coords(n, &mut rng);
        let t = 1 + (trial * 13) % s.len();
        let r = random_rotation(&mut rng);
        let motion = RigidTransform { rotation: r, translation: random_translation(3.0, &mut rng) };
        let base = model.eps_theta(&g, &c, t)?;
        let moved = model.eps_theta(&g, &apply_transform(&c, &motion), t)?;
        let mut diff_sq = 0.0;
        let mut base_sq = 0.0;
        for (a, b) in base.vectors.iter().zip(&moved.vectors) {
            let expect = r * Vector3::from(*a);
            for k in 0..3 {
                diff_sq += (b[k] - expect[k]).powi(2);
                base_sq += a[k] * a[k];
            }
        }
        worst = worst.max(diff_sq.sqrt() / (base_sq.sqrt() + 1e-12));
    }
    Ok(CheckResult::new(
        "denoiser-equivariance",
        worst < 1e-5,
        format!("max relative deviation {worst:.3e} over {trials} draws (tol 1e-5)"),
    ))
}

/// Full reverse chains with paired noise commute with rotations.
pub fn check_sampler_equivariance(trials: usize) -> Result<CheckResult> {
    let model = small_model(4);
    let g = chain_graph(4);
    let s = SchedulePreset::Desk.build();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let r = random_rotation(&mut rng);
        let rot = RigidTransform { rotation: r, translation: Vector3::zeros() };
        let prior = sample_prior(4, &mut rng);
        let noises: Vec<Conformation> = (0..s.len()).map(|_| noise_like(4, &mut rng)).collect();
        let mut a = prior.clone();
        let mut b = apply_transform(&prior, &rot);
        for (step, z) in (1..=s.len()).rev().zip(&noises) {
            a = reverse_step(&model, &s, &g, &a, step, z, false)?;
            b = reverse_step(&model, &s, &g, &b, step, &apply_transform(z, &rot), false)?;
        }
        let mut diff_sq = 0.0;
        let mut base_sq = 0.0;
        for (x, y) in a.coords().iter().zip(b.coords()) {
            let expect = r * Vector3::from(*x);
            for k in 0..3 {
                diff_sq += (y[k] - expect[k]).powi(2);
                base_sq += x[k] * x[k];
            }
        }
        worst = worst.max(diff_sq.sqrt() / (base_sq.sqrt() + 1e-12));
    }
    Ok(CheckResult::new(
        "sampler-equivariance",
        worst < 1e-5,
        format!("max relative deviation {worst:.3e} over {trials} paired chains (tol 1e-5)"),
    ))
}

/// Composing k single-step kernels matches the closed-form marginal, checked
/// by Monte Carlo in one dimension.
pub fn check_marginal_composition(trials: usize, k: usize) -> Result<CheckResult> {
    let s = SchedulePreset::Desk.build();
    let k = k.min(s.len());
    let x0 = 1.3;
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..trials {
        let mut x = x0;
        for t in 1..=k {
            let z: f64 = rng.sample(StandardNormal);
            let beta = s.beta(t)?;
            x = (1.0 - beta).sqrt() * x + beta.sqrt() * z;
        }
        sum += x;
        sumsq += x * x;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = sumsq / n - mean * mean;
    let (mean_coef, var_exp) = s.marginal(k)?;
    let mean_exp = mean_coef * x0;
    let se = (var_exp / n).sqrt();
    let mean_err = (mean - mean_exp).abs();
    let var_rel = (var - var_exp).abs() / var_exp;
    let passed = mean_err < 4.0 * se && var_rel < 0.05;
    Ok(CheckResult::new(
        "marginal-composition",
        passed,
        format!(
            "k={k}, {trials} trials: mean err {mean_err:.3e} (4·SE {:.3e}), var rel err {var_rel:.3e} (tol 0.05)",
            4.0 * se
        ),
    ))
}

/// Closed-form posterior mean and variance against a dense-grid Bayes rule.
pub fn check_posterior_grid_bayes() -> Result<CheckResult> {
    let s = SchedulePreset::Desk.build();
    let mut worst = 0.0f64;
    for t in [2usize, 10, s.len()] {
        for (x0, xt) in [(0.7, -0.4), (-1.1, 0.9), (0.0, 1.5)] {
            let beta = s.beta(t)?;
            let alpha = 1.0 - beta;
            let (prev_coef, prev_var) = s.marginal(t - 1)?;
            let grid: Vec<f64> = (0..4001).map(|i| -6.0 + 12.0 * i as f64 / 4000.0).collect();
            let mut z = 0.0;
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for &x in &grid {
                let lik = (-(xt - alpha.sqrt() * x).powi(2) / (2.0 * beta)).exp();
                let prior = (-(x - prev_coef * x0).powi(2) / (2.0 * prev_var)).exp();
                let w = lik * prior;
                z += w;
                m1 += w * x;
                m2 += w * x * x;
            }
            let mean_num = m1 / z;
            let var_num = m2 / z - mean_num * mean_num;
            let c0 = Conformation::new(vec![[x0, 0.0, 0.0]])?;
            let ct = Conformation::new(vec![[xt, 0.0, 0.0]])?;
            let (mean_cf, var_cf) = s.posterior(t, &c0, &ct)?;
            worst = worst.max((mean_num - mean_cf[0][0]).abs());
            worst = worst.max((var_num - var_cf).abs());
        }
    }
    Ok(CheckResult::new(
        "posterior-grid-bayes",
        worst < 1e-4,
        format!("max |numeric − closed form| {worst:.3e} (tol 1e-4)"),
    ))
}

/// The step weight turns the posterior KL into a plain squared noise error:
/// ‖Δμ‖²/(2σ̃²) = γ_t‖Δε‖², and γ_t·2σ̃²·α_t·(1−ᾱ_t) = β_t².
pub fn check_kl_weight_identity() -> Result<CheckResult> {
    let s = SchedulePreset::Desk.build();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst = 0.0f64;
    for t in [2usize, 10, s.len()] {
        let beta = s.beta(t)?;
        let alpha = s.alpha(t)?;
        let abar = s.alpha_bar(t)?;
        let bt = s.beta_tilde(t)?;
        let gamma = s.gamma(t)?;
        let algebraic = gamma * 2.0 * bt * alpha * (1.0 - abar);
        worst = worst.max((algebraic - beta * beta).abs() / (beta * beta));

        for _ in 0..50 {
            let ct = standard_normal_coords(3, &mut rng);
            let e1 = standard_normal_coords(3, &mut rng);
            let e2 = standard_normal_coords(3, &mut rng);
            let mu1 = s.mu_from_eps(t, &ct, e1.coords())?;
            let mu2 = s.mu_from_eps(t, &ct, e2.coords())?;
            let mut mu_sq = 0.0;
            let mut eps_sq = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    mu_sq += (mu1.coords()[i][k] - mu2.coords()[i][k]).powi(2);
                    eps_sq += (e1.coords()[i][k] - e2.coords()[i][k]).powi(2);
                }
            }
            let kl = mu_sq / (2.0 * bt);
            let weighted = gamma * eps_sq;
            worst = worst.max((kl - weighted).abs() / weighted);
        }
    }
    Ok(CheckResult::new(
        "kl-weight-identity",
        worst < 1e-8,
        format!("max relative error {worst:.3e} (tol 1e-8)"),
    ))
}

/// The CoM-removal matrix is a symmetric projector fixing zero-CoM vectors.
pub fn check_projector_algebra() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for n in [1usize, 2, 5, 20] {
        let q = dense_com_projector(n);
        let dim = 3 * n;
        for i in 0..dim {
            for j in 0..dim {
                let mut qq = 0.0;
                for k in 0..dim {
                    qq += q[i][k] * q[k][j];
                }
                worst = worst.max((qq - q[i][j]).abs());
                worst = worst.max((q[i][j] - q[j][i]).abs());
            }
        }
        let y = project_com_free(&standard_normal_coords(n, &mut rng));
        let flat = y.flat();
        for i in 0..dim {
            let mut qy = 0.0;
            for j in 0..dim {
                qy += q[i][j] * flat[j];
            }
            worst = worst.max((qy - flat[i]).abs());
        }
    }
    Ok(CheckResult::new(
        "projector-algebra",
        worst < 1e-12,
        format!("max deviation {worst:.3e} over n in {{1,2,5,20}} (tol 1e-12)"),
    ))
}

fn batch_loss_value(model: &DenoiserModel, items: &[BatchItem]) -> Result<f64> {
    Ok(loss_and_gradients(model, items)?.0)
}

/// Backpropagated gradients against central finite differences over every
/// parameter entry, for both training targets on a four-atom molecule.
pub fn check_gradient(step: f64) -> Result<CheckResult> {
    let s = SchedulePreset::Desk.build();
    let g = chain_graph(4);
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let c0 = standard_normal_coords(4, &mut rng);
    let noise = standard_normal_coords(4, &mut rng);
    let t = 30;
    let (ct, _) = make_plain_target(&s, t, &c0, &noise)?;
    let edges = build_neighbor_list(&g, &c0, f64::INFINITY)?.edge_indices();
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for kind in [ObjectiveKind::Aligned, ObjectiveKind::Chainrule] {
        let target = match kind {
            ObjectiveKind::Aligned => make_aligned_target(&s, t, &c0, &ct)?,
            ObjectiveKind::Chainrule => make_chainrule_target(&s, t, &g, &c0, &ct, &edges)?,
        };
        let item = BatchItem {
            graph: g.clone(),
            example: TrainingExample { t, ct: ct.clone(), target, weight: 1.0 },
        };
        let model = DenoiserModel::init(DenoiserConfig::desk(8, 1, 2, 20.0), 9)?;
        let (_, grads) = loss_and_gradients(&model, std::slice::from_ref(&item))?;
        let names: Vec<String> = model.params.names().map(String::from).collect();
        for name in names {
            let base = model.params.get(&name)?.clone();
            let analytic = grads
                .get(&name)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(base.rows, base.cols));
            for idx in 0..base.len() {
                let probe = |delta: f64| -> Result<f64> {
                    let mut m = DenoiserModel {
                        config: model.config.clone(),
                        params: model.params.clone(),
                    };
                    let mut bumped = base.clone();
                    bumped.data[idx] += delta;
                    m.params.set_value(&name, bumped)?;
                    batch_loss_value(&m, std::slice::from_ref(&item))
                };
                let fd = (probe(step)? - probe(-step)?) / (2.0 * step);
                let an = analytic.data[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                worst = worst.max(rel);
                entries += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "gradient-check",
        worst < 1e-4,
        format!("max relative error {worst:.3e} over {entries} entries (tol 1e-4)"),
    ))
}

/// The training loss does not move when both conformations undergo the same
/// rigid motion, for either target, with real model predictions.
pub fn check_objective_invariance(trials: usize) -> Result<CheckResult> {
    let s = SchedulePreset::Desk.build();
    let g = chain_graph(5);
    let model = small_model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let c0 = standard_normal_coords(5, &mut rng);
        let noise = standard_normal_coords(5, &mut rng);
        let t = 1 + (trial * 7) % s.len();
        let (ct, _) = make_plain_target(&s, t, &c0, &noise)?;
        let edges = build_neighbor_list(&g, &c0, f64::INFINITY)?.edge_indices();
        let motion = RigidTransform {
            rotation: random_rotation(&mut rng),
            translation: random_translation(2.0, &mut rng),
        };
        let c0m = apply_transform(&c0, &motion);
        let ctm = apply_transform(&ct, &motion);
        for kind in [ObjectiveKind::Aligned, ObjectiveKind::Chainrule] {
            let (target, target_m) = match kind {
                ObjectiveKind::Aligned => (
                    make_aligned_target(&s, t, &c0, &ct)?,
                    make_aligned_target(&s, t, &c0m, &ctm)?,
                ),
                ObjectiveKind::Chainrule => (
                    make_chainrule_target(&s, t, &g, &c0, &ct, &edges)?,
                    make_chainrule_target(&s, t, &g, &c0m, &ctm, &edges)?,
                ),
            };
            let pred = model.eps_theta(&g, &ct, t)?.vectors;
            let pred_m = model.eps_theta(&g, &ctm, t)?.vectors;
            let base = loss(
                &[TrainingExample { t, ct: ct.clone(), target, weight: 1.0 }],
                &[pred],
            )?;
            let moved = loss(
                &[TrainingExample { t, ct: ctm.clone(), target: target_m, weight: 1.0 }],
                &[pred_m],
            )?;
            let rel = (base - moved).abs() / base.abs().max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(CheckResult::new(
        "objective-invariance",
        worst < 1e-6,
        format!("max relative drift {worst:.3e} over {trials} trials (tol 1e-6)"),
    ))
}

/// Coverage and matching recomputed by naive loops, plus threshold
/// monotonicity.
pub fn check_metrics_oracle() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..20 {
        let set = ConformerSet {
            reference: (0..3).map(|_| standard_normal_coords(4, &mut rng)).collect(),
            generated: (0..6).map(|_| standard_normal_coords(4, &mut rng)).collect(),
        };
        let m = rmsd_matrix(&set)?;
        for delta in [0.5, 1.0, 2.0] {
            let r = cov_mat_recall(&m, delta)?;
            let p = cov_mat_precision(&m, delta)?;
            // Direct recomputation from the definitions.
            let mut cov_r = 0.0;
            let mut mat_r = 0.0;
            for a in &set.reference {
                let best = set
                    .generated
                    .iter()
                    .map(|b| aligned_rmsd(a, b).unwrap())
                    .fold(f64::INFINITY, f64::min);
                if best < delta {
                    cov_r += 1.0;
                }
                mat_r += best;
            }
            cov_r = 100.0 * cov_r / set.reference.len() as f64;
            mat_r /= set.reference.len() as f64;
            let mut cov_p = 0.0;
            let mut mat_p = 0.0;
            for b in &set.generated {
                let best = set
                    .reference
                    .iter()
                    .map(|a| aligned_rmsd(a, b).unwrap())
                    .fold(f64::INFINITY, f64::min);
                if best < delta {
                    cov_p += 1.0;
                }
                mat_p += best;
            }
            cov_p = 100.0 * cov_p / set.generated.len() as f64;
            mat_p /= set.generated.len() as f64;
            worst = worst.max((r.coverage - cov_r).abs());
            worst = worst.max((r.matching - mat_r).abs());
            worst = worst.max((p.coverage - cov_p).abs());
            worst = worst.max((p.matching - mat_p).abs());
        }
        let mut prev = -1.0;
        for step in 0..10 {
            let delta = 0.2 + 0.5 * step as f64;
            let c = cov_mat_recall(&m, delta)?.coverage;
            if c < prev {
                monotone = false;
            }
            prev = c;
        }
    }
    Ok(CheckResult::new(
        "metrics-oracle",
        worst == 0.0 && monotone,
        format!("max |fast − naive| {worst:.3e} (exact match required), coverage monotone in threshold: {monotone}"),
    ))
}

/// Alignment recovers a known rigid motion, including flat and collinear
/// shapes, to numerical zero.
pub fn check_kabsch_recovery(trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = 3 + trial % 6;
        let mut coords: Vec<[f64; 3]> = standard_normal_coords(n, &mut rng).coords().to_vec();
        match trial % 3 {
            1 => {
                for row in &mut coords {
                    row[2] = 0.0;
                }
            }
            2 => {
                for (i, row) in coords.iter_mut().enumerate() {
                    *row = [i as f64 * 0.9, 0.0, 0.0];
                }
            }
            _ => {}
        }
        let base = Conformation::new(coords)?;
        let motion = RigidTransform {
            rotation: random_rotation(&mut rng),
            translation: random_translation(4.0, &mut rng),
        };
        let moved = apply_transform(&base, &motion);
        let (_, fitted) = kabsch_align(&base, &moved)?;
        worst = worst.max(rmsd(&fitted, &moved)?);
    }
    Ok(CheckResult::new(
        "kabsch-recovery",
        worst < 1e-9,
        format!("max residual {worst:.3e} over {trials} trials (tol 1e-9)"),
    ))
}

/// The deliberately broken direction convention must trip the equivariance
/// probe, proving the probe has teeth.
pub fn check_equivariance_probe_sensitivity() -> Result<CheckResult> {
    let mut cfg = DenoiserConfig::desk(16, 2, 2, 20.0);
    cfg.debug_break_equivariance = true;
    let model = DenoiserModel::init(cfg, 3)?;
    let g = chain_graph(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = standard_normal_coords(5, &mut rng);
        let r = random_rotation(&mut rng);
        let rot = RigidTransform { rotation: r, translation: Vector3::zeros() };
        let base = model.eps_theta(&g, &c, 10)?;
        let moved = model.eps_theta(&g, &apply_transform(&c, &rot), 10)?;
        for (a, b) in base.vectors.iter().zip(&moved.vectors) {
            let expect = r * Vector3::from(*a);
            for k in 0..3 {
                worst = worst.max((b[k] - expect[k]).abs());
            }
        }
    }
    Ok(CheckResult::new(
        "equivariance-probe-sensitivity",
        worst > 1e-5,
        format!("broken model deviates by {worst:.3e} (must exceed 1e-5)"),
    ))
}

/// Corpus sanity: two well-separated torsion modes, deterministic draws.
pub fn check_toy_corpus() -> Result<CheckResult> {
    let spec = ToySpec { num_molecules: 5, conformers_per_molecule: 4, ..Default::default() };
    let (a, la) = generate_toy_dataset(&spec)?;
    let (b, lb) = generate_toy_dataset(&spec)?;
    let deterministic = a == b && la == lb;
    let m0 = crate::datakit::toy_mode_conformer(0, &spec)?;
    let m1 = crate::datakit::toy_mode_conformer(1, &spec)?;
    let separation = aligned_rmsd(&m0, &m1)?;
    let passed = deterministic && separation > 15.0 * spec.jitter;
    Ok(CheckResult::new(
        "toy-corpus",
        passed,
        format!("deterministic: {deterministic}, mode separation {separation:.3} (jitter {})", spec.jitter),
    ))
}

/// Run the fast checks (everything except full-scale generative recovery).
/// `thorough` uses the trial counts of the full battery.
pub fn run_all(thorough: bool) -> Result<Vec<CheckResult>> {
    let (eq, samp, mc, obj, kab) = if thorough {
        (100, 20, 100_000, 50, 1000)
    } else {
        (20, 5, 20_000, 10, 200)
    };
    Ok(vec![
        check_denoiser_equivariance(eq)?,
        check_sampler_equivariance(samp)?,
        check_marginal_composition(mc, 100)?,
        check_posterior_grid_bayes()?,
        check_kl_weight_identity()?,
        check_projector_algebra()?,
        check_gradient(1e-5)?,
        check_objective_invariance(obj)?,
        check_metrics_oracle()?,
        check_kabsch_recovery(kab)?,
        check_equivariance_probe_sensitivity()?,
        check_toy_corpus()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_battery_passes() {
        for r in run_all(false).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}

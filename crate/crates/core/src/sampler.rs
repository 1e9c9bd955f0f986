//! Ancestral reverse-process sampling in the zero-CoM subspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::geom::{project_com_free, Conformation};
use crate::molgraph::MolecularGraph;
use crate::rng::standard_normal_coords;
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_samples: usize,
    pub seed: u64,
    /// Inject noise at the final step too, instead of the deterministic
    /// last update.
    pub noise_at_t1: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_samples: 1, seed: 0, noise_at_t1: false }
    }
}

/// Draw from the CoM-free isotropic prior.
pub fn sample_prior(n: usize, rng: &mut impl Rng) -> Conformation {
    project_com_free(&standard_normal_coords(n, rng))
}

/// One reverse update `t -> t-1`: recenter, denoise, and perturb. The noise
/// `z` is supplied so callers can pair draws across runs; it is ignored at
/// `t == 1` unless `noise_at_t1` is set.
pub fn reverse_step(
    model: &DenoiserModel,
    schedule: &VarianceSchedule,
    g: &MolecularGraph,
    ct: &Conformation,
    t: usize,
    z: &Conformation,
    noise_at_t1: bool,
) -> Result<Conformation> {
    if t == 0 || t > schedule.len() {
        return Err(Error::Sampling {
            step: t,
            message: format!("timestep outside 1..={}", schedule.len()),
        });
    }
    let centered = project_com_free(ct);
    let field = model
        .eps_theta(g, &centered, t)
        .map_err(|e| Error::Sampling { step: t, message: e.to_string() })?;
    let mu = schedule.mu_from_eps(t, &centered, &field.vectors)?;
    for row in mu.coords() {
        for v in row {
            if !v.is_finite() {
                return Err(Error::Sampling {
                    step: t,
                    message: "non-finite mean in reverse update".into(),
                });
            }
        }
    }
    if t == 1 && !noise_at_t1 {
        return Ok(mu);
    }
    let sigma = schedule.beta_tilde(t)?.sqrt();
    let coords = mu
        .coords()
        .iter()
        .zip(z.coords())
        .map(|(m, n)| [m[0] + sigma * n[0], m[1] + sigma * n[1], m[2] + sigma * n[2]])
        .collect();
    Conformation::new(coords)
}

/// Run the full reverse chain once from a caller-supplied prior draw and
/// noise stream.
pub fn sample_one(
    model: &DenoiserModel,
    schedule: &VarianceSchedule,
    g: &MolecularGraph,
    rng: &mut impl Rng,
    noise_at_t1: bool,
) -> Result<Conformation> {
    let n = g.atom_count();
    let mut c = sample_prior(n, rng);
    for t in (1..=schedule.len()).rev() {
        let z = standard_normal_coords(n, rng);
        c = reverse_step(model, schedule, g, &c, t, &z, noise_at_t1)?;
    }
    Ok(c)
}

/// Generate an ensemble. Each conformer gets its own generator stream keyed
/// by `(seed, index)`, so results do not depend on generation order.
pub fn sample(
    model: &DenoiserModel,
    schedule: &VarianceSchedule,
    g: &MolecularGraph,
    cfg: &SamplerConfig,
) -> Result<Vec<Conformation>> {
    if cfg.num_samples == 0 {
        return Err(Error::invalid("num_samples must be positive"));
    }
    let mut out = Vec::with_capacity(cfg.num_samples);
    for idx in 0..cfg.num_samples {
        let mut rng = conformer_rng(cfg.seed, idx);
        out.push(sample_one(model, schedule, g, &mut rng, cfg.noise_at_t1)?);
    }
    Ok(out)
}

pub fn conformer_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Gaussian draw shaped like one conformation; exposed for paired-noise
/// experiments.
pub fn noise_like(n: usize, rng: &mut impl Rng) -> Conformation {
    let coords = (0..n)
        .map(|_| {
            [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ]
        })
        .collect();
    Conformation::new(coords).expect("nonempty gaussian draw")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::denoiser::{DenoiserConfig, DenoiserModel};
    use crate::geom::{apply_transform, center_of_mass, RigidTransform};
    use crate::molgraph::{Bond, BondType, MolecularGraph};
    use crate::rng::{random_rotation, random_translation};
    use crate::schedule::SchedulePreset;

    fn small_model() -> (DenoiserModel, MolecularGraph) {
        let cfg = DenoiserConfig::desk(16, 1, 2, 6.0);
        let model = DenoiserModel::init(cfg, 42).unwrap();
        let g = MolecularGraph::new(
            vec![0, 1, 0, 2],
            vec![
                Bond { i: 0, j: 1, bond_type: BondType::Single },
                Bond { i: 1, j: 2, bond_type: BondType::Single },
                Bond { i: 2, j: 3, bond_type: BondType::Single },
            ],
        )
        .unwrap();
        (model, g)
    }

    #[test]
    fn prior_is_com_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = sample_prior(7, &mut rng);
            assert!(center_of_mass(&c).norm() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_order_independent() {
        let (model, g) = small_model();
        let s = SchedulePreset::Desk.build();
        let cfg = SamplerConfig { num_samples: 3, seed: 9, noise_at_t1: false };
        let a = sample(&model, &s, &g, &cfg).unwrap();
        let b = sample(&model, &s, &g, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.coords(), y.coords());
        }
        // Conformer 2 alone matches conformer 2 of the batch.
        let mut rng = conformer_rng(9, 2);
        let solo = sample_one(&model, &s, &g, &mut rng, false).unwrap();
        assert_eq!(solo.coords(), a[2].coords());
        // Different seed differs.
        let c = sample(&model, &s, &g, &SamplerConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a[0].coords(), c[0].coords());
    }

    #[test]
    fn final_step_is_deterministic_by_default() {
        let (model, g) = small_model();
        let s = SchedulePreset::Desk.build();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ct = sample_prior(4, &mut rng);
        let z1 = noise_like(4, &mut rng);
        let z2 = noise_like(4, &mut rng);
        let a = reverse_step(&model, &s, &g, &ct, 1, &z1, false).unwrap();
        let b = reverse_step(&model, &s, &g, &ct, 1, &z2, false).unwrap();
        assert_eq!(a.coords(), b.coords());
        // The posterior variance vanishes at the last step, so even the
        // literal noisy update is deterministic there.
        let c = reverse_step(&model, &s, &g, &ct, 1, &z1, true).unwrap();
        let d = reverse_step(&model, &s, &g, &ct, 1, &z2, true).unwrap();
        assert_eq!(c.coords(), d.coords());
        assert_eq!(a.coords(), c.coords());
        // At t = 2 the injected noise does matter.
        let e = reverse_step(&model, &s, &g, &ct, 2, &z1, false).unwrap();
        let f = reverse_step(&model, &s, &g, &ct, 2, &z2, false).unwrap();
        assert_ne!(e.coords(), f.coords());
    }

    #[test]
    fn timestep_bounds_checked() {
        let (model, g) = small_model();
        let s = SchedulePreset::Desk.build();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ct = sample_prior(4, &mut rng);
        let z = noise_like(4, &mut rng);
        assert!(reverse_step(&model, &s, &g, &ct, 0, &z, false).is_err());
        assert!(reverse_step(&model, &s, &g, &ct, 101, &z, false).is_err());
    }

    #[test]
    fn reverse_step_equivariant_under_paired_noise() {
        // Rotating the input state and rotating the injected noise must
        // rotate the output: one step of the chain commutes with rigid
        // rotations about the origin.
        let (model, g) = small_model();
        let s = SchedulePreset::Desk.build();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let ct = sample_prior(4, &mut rng);
            let z = noise_like(4, &mut rng);
            let t = 1 + (trial * 9) % s.len();
            let r = random_rotation(&mut rng);
            let rot = RigidTransform { rotation: r, translation: Vector3::zeros() };
            let base = reverse_step(&model, &s, &g, &ct, t, &z, false).unwrap();
            let moved = reverse_step(
                &model,
                &s,
                &g,
                &apply_transform(&ct, &rot),
                t,
                &apply_transform(&z, &rot),
                false,
            )
            .unwrap();
            for (a, b) in base.coords().iter().zip(moved.coords()) {
                let expect = r * Vector3::from(*a);
                for k in 0..3 {
                    assert_abs_diff_eq!(b[k], expect[k], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn translation_is_projected_out() {
        // Shifting the state leaves the update unchanged: the recentering
        // step removes any CoM offset before the model sees it.
        let (model, g) = small_model();
        let s = SchedulePreset::Desk.build();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ct = sample_prior(4, &mut rng);
        let z = noise_like(4, &mut rng);
        let shift = RigidTransform {
            rotation: nalgebra::Matrix3::identity(),
            translation: random_translation(5.0, &mut rng),
        };
        let base = reverse_step(&model, &s, &g, &ct, 50, &z, false).unwrap();
        let shifted = reverse_step(&model, &s, &g, &apply_transform(&ct, &shift), 50, &z, false)
            .unwrap();
        for (a, b) in base.coords().iter().zip(shifted.coords()) {
            for k in 0..3 {
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-9);
            }
        }
    }
}

//! Seeded randomness helpers used by training, sampling and tests.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geom::Conformation;

/// n×3 matrix of independent standard normal draws.
pub fn standard_normal_coords<R: Rng>(n: usize, rng: &mut R) -> Conformation {
    let coords = (0..n)
        .map(|_| {
            [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ]
        })
        .collect();
    Conformation::new(coords).expect("n >= 1")
}

/// Uniformly distributed proper rotation, via QR of a Gaussian matrix with
/// sign correction (Haar measure up to the usual diagonal fix).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let m = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = m.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Fix the sign ambiguity so the distribution is uniform.
        for k in 0..3 {
            if r[(k, k)] < 0.0 {
                for row in 0..3 {
                    q[(row, k)] = -q[(row, k)];
                }
            }
        }
        if q.determinant() < 0.0 {
            for row in 0..3 {
                q[(row, 2)] = -q[(row, 2)];
            }
        }
        if (q.transpose() * q - Matrix3::identity()).abs().max() < 1e-10 {
            return q;
        }
    }
}

/// Random translation with entries in [-scale, scale].
pub fn random_translation<R: Rng>(scale: f64, rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}

//! Training targets and loss: forward-noised samples, the plain noise
//! target, the alignment-modified target, the chain-rule (distance-score)
//! target, and the weighted L2 objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{kabsch_align, Conformation};
use crate::molgraph::{distance_jacobian_apply, distances, MolecularGraph};
use crate::schedule::VarianceSchedule;

/// Which modified noise target supervises the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Aligned,
    #[default]
    Chainrule,
}

/// Per-step weighting of the squared noise error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Unit,
    Elbo,
}

/// One supervised example: the noised conformation and its target field.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub t: usize,
    pub ct: Conformation,
    pub target: Vec<[f64; 3]>,
    pub weight: f64,
}

/// Reparameterized forward draw plus the raw noise as target.
pub fn make_plain_target(
    schedule: &VarianceSchedule,
    t: usize,
    c0: &Conformation,
    noise: &Conformation,
) -> Result<(Conformation, Vec<[f64; 3]>)> {
    let ct = schedule.sample_forward(t, c0, noise)?;
    Ok((ct, noise.coords().to_vec()))
}

/// Alignment target: rigidly superpose the marginal-scaled clean structure
/// onto `ct` (CoM translation plus optimal rotation), then read the noise
/// off the aligned copy. Scaling before alignment keeps the target
/// equivariant: a shared rigid motion of both inputs rotates the output and
/// leaves its magnitude unchanged.
pub fn make_aligned_target(
    schedule: &VarianceSchedule,
    t: usize,
    c0: &Conformation,
    ct: &Conformation,
) -> Result<Vec<[f64; 3]>> {
    let (mean_coef, var) = schedule.marginal(t)?;
    let scaled = Conformation::new(
        c0.coords()
            .iter()
            .map(|r| [mean_coef * r[0], mean_coef * r[1], mean_coef * r[2]])
            .collect(),
    )?;
    let (_, aligned) = kabsch_align(&scaled, ct)?;
    let inv_sd = 1.0 / var.sqrt();
    Ok(ct
        .coords()
        .iter()
        .zip(aligned.coords())
        .map(|(xt, x0)| {
            [
                (xt[0] - x0[0]) * inv_sd,
                (xt[1] - x0[1]) * inv_sd,
                (xt[2] - x0[2]) * inv_sd,
            ]
        })
        .collect())
}

/// Chain-rule target: an approximate score over pairwise distances pulled
/// back to coordinates through the distance Jacobian. Rotation-equivariant,
/// translation-invariant, and CoM-free by construction.
pub fn make_chainrule_target(
    schedule: &VarianceSchedule,
    t: usize,
    _g: &MolecularGraph,
    c0: &Conformation,
    ct: &Conformation,
    edges: &[(usize, usize)],
) -> Result<Vec<[f64; 3]>> {
    let (mean_coef, var) = schedule.marginal(t)?;
    let d0 = distances(edges, c0)?;
    let dt = distances(edges, ct)?;
    // Per-edge distance score, then eps_hat = sqrt(1 - alpha_bar) · Jᵀ s.
    let scores: Vec<f64> = dt
        .distances
        .iter()
        .zip(&d0.distances)
        .map(|(dt_e, d0_e)| (dt_e - mean_coef * d0_e) / var)
        .collect();
    let applied = distance_jacobian_apply(edges, ct, &scores)?;
    let scale = var.sqrt();
    Ok(applied
        .field
        .iter()
        .map(|v| [v[0] * scale, v[1] * scale, v[2] * scale])
        .collect())
}

/// `Σ w ‖ε̂ − ε_pred‖²`, mean over atoms and examples.
pub fn loss(targets: &[TrainingExample], predictions: &[Vec<[f64; 3]>]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::shape("loss batch", targets.len(), predictions.len()));
    }
    if targets.is_empty() {
        return Err(Error::invalid("loss over empty batch"));
    }
    let mut total = 0.0;
    let mut atoms = 0usize;
    for (ex, pred) in targets.iter().zip(predictions) {
        if pred.len() != ex.target.len() {
            return Err(Error::shape("loss example", ex.target.len(), pred.len()));
        }
        for (a, b) in ex.target.iter().zip(pred) {
            for k in 0..3 {
                total += ex.weight * (a[k] - b[k]).powi(2);
            }
        }
        atoms += ex.target.len();
    }
    if !total.is_finite() {
        return Err(Error::Training("non-finite loss".into()));
    }
    Ok(total / atoms as f64)
}

/// Weight for a timestep under the chosen weighting mode.
pub fn step_weight(schedule: &VarianceSchedule, t: usize, weighting: Weighting) -> Result<f64> {
    match weighting {
        Weighting::Unit => {
            schedule.beta(t)?;
            Ok(1.0)
        }
        Weighting::Elbo => schedule.gamma(t),
    }
}

/// Squared CoM of a vector field; diagnostic for the chain-rule target.
pub fn field_com_norm(field: &[[f64; 3]]) -> f64 {
    let n = field.len().max(1) as f64;
    let mut com = [0.0; 3];
    for v in field {
        for k in 0..3 {
            com[k] += v[k] / n;
        }
    }
    (com[0] * com[0] + com[1] * com[1] + com[2] * com[2]).sqrt()
}

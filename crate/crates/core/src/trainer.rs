//! Minibatch training of the denoiser: draw a timestep and a noised
//! conformation, build the target field, backpropagate the weighted
//! squared error, and apply the adaptive-moment update.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::DatasetRecord;
use crate::denoiser::DenoiserModel;
use crate::diffcore::{adam_step, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::molgraph::{build_neighbor_list, MolecularGraph};
use crate::objective::{
    make_aligned_target, make_chainrule_target, make_plain_target, step_weight, ObjectiveKind,
    TrainingExample, Weighting,
};
use crate::rng::standard_normal_coords;
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub objective: ObjectiveKind,
    pub weighting: Weighting,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Chainrule,
            weighting: Weighting::Unit,
            adam: AdamConfig::default(),
            batch_size: 16,
            steps: 1000,
            seed: 0,
        }
    }
}

/// One supervised item ready for the forward pass.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub graph: MolecularGraph,
    pub example: TrainingExample,
}

/// Noise a conformer at a uniform random timestep and derive its target.
pub fn draw_example(
    schedule: &VarianceSchedule,
    objective: ObjectiveKind,
    weighting: Weighting,
    record: &DatasetRecord,
    rng: &mut impl Rng,
) -> Result<BatchItem> {
    if record.conformers.is_empty() {
        return Err(Error::invalid(format!("record '{}' has no conformers", record.id)));
    }
    let c0 = &record.conformers[rng.gen_range(0..record.conformers.len())];
    let t = rng.gen_range(1..=schedule.len());
    let noise = standard_normal_coords(c0.atom_count(), rng);
    let (ct, _) = make_plain_target(schedule, t, c0, &noise)?;
    let target = match objective {
        ObjectiveKind::Aligned => make_aligned_target(schedule, t, c0, &ct)?,
        ObjectiveKind::Chainrule => {
            // Edge set fixed from the clean geometry so both sides of the
            // regression see the same graph.
            let edges = build_neighbor_list(&record.graph, c0, f64::INFINITY)?.edge_indices();
            make_chainrule_target(schedule, t, &record.graph, c0, &ct, &edges)?
        }
    };
    let weight = step_weight(schedule, t, weighting)?;
    Ok(BatchItem {
        graph: record.graph.clone(),
        example: TrainingExample { t, ct, target, weight },
    })
}

/// Mean weighted squared error over the batch plus parameter gradients.
/// The loss normalizer is the total atom count, matching the batch loss.
pub fn loss_and_gradients(
    model: &DenoiserModel,
    items: &[BatchItem],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    if items.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut total_atoms = 0usize;
    let mut total_loss = 0.0;
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    for item in items {
        let n = item.graph.atom_count();
        if item.example.target.len() != n {
            return Err(Error::shape("training target", n, item.example.target.len()));
        }
        total_atoms += n;
        let neighbors = build_neighbor_list(&item.graph, &item.example.ct, model.config.tau)?;
        let mut tape = Tape::new();
        let (pred, _) = model.forward_on_tape(
            &mut tape,
            &item.graph,
            &item.example.ct,
            item.example.t,
            &neighbors,
            None,
        )?;
        let flat: Vec<f64> = item.example.target.iter().flatten().copied().collect();
        let target = tape.constant(Tensor::new(n, 3, flat)?);
        let diff = tape.sub(pred, target)?;
        let sq = tape.mul(diff, diff)?;
        let sum = tape.sum_all(sq);
        let scaled = tape.scale(sum, item.example.weight);
        let item_loss = tape.value(scaled).data[0];
        if !item_loss.is_finite() {
            return Err(Error::Training("non-finite loss in batch".into()));
        }
        total_loss += item_loss;
        for (name, grad) in tape.backward(scaled)? {
            match acc.get_mut(&name) {
                Some(t) => {
                    for (a, b) in t.data.iter_mut().zip(&grad.data) {
                        *a += b;
                    }
                }
                None => {
                    acc.insert(name, grad);
                }
            }
        }
    }
    let inv = 1.0 / total_atoms as f64;
    for grad in acc.values_mut() {
        for v in &mut grad.data {
            *v *= inv;
        }
    }
    Ok((total_loss * inv, acc))
}

/// One optimizer step over a freshly drawn batch. Returns the batch loss.
pub fn train_step(
    model: &mut DenoiserModel,
    schedule: &VarianceSchedule,
    dataset: &[DatasetRecord],
    cfg: &TrainerConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty training dataset"));
    }
    let mut items = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size.max(1) {
        let record = &dataset[rng.gen_range(0..dataset.len())];
        items.push(draw_example(schedule, cfg.objective, cfg.weighting, record, rng)?);
    }
    let (loss, grads) = loss_and_gradients(model, &items)?;
    adam_step(&mut model.params, &grads, &cfg.adam)?;
    Ok(loss)
}

/// Exponential moving average of the parameters. Sampling from the
/// averaged weights is markedly less noisy than from the raw iterates.
#[derive(Debug, Clone)]
pub struct EmaTracker {
    decay: f64,
    shadow: BTreeMap<String, Tensor>,
}

impl EmaTracker {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("EMA decay must be in [0, 1), got {decay}")));
        }
        Ok(Self { decay, shadow: BTreeMap::new() })
    }

    /// Fold the current parameter values into the running average.
    pub fn update(&mut self, params: &crate::diffcore::ParameterStore) {
        for (name, slot) in &params.slots {
            match self.shadow.get_mut(name) {
                Some(avg) => {
                    for (a, v) in avg.data.iter_mut().zip(&slot.value.data) {
                        *a = self.decay * *a + (1.0 - self.decay) * v;
                    }
                }
                None => {
                    self.shadow.insert(name.clone(), slot.value.clone());
                }
            }
        }
    }

    /// Copy of the store with values replaced by their running averages.
    pub fn averaged(&self, params: &crate::diffcore::ParameterStore) -> crate::diffcore::ParameterStore {
        let mut out = params.clone();
        for (name, slot) in &mut out.slots {
            if let Some(avg) = self.shadow.get(name) {
                slot.value = avg.clone();
            }
        }
        out
    }
}

/// Full training run; returns the per-step loss history. `on_step` fires
/// after every optimizer step with (step index, loss) for logging or
/// checkpointing.
pub fn train(
    model: &mut DenoiserModel,
    schedule: &VarianceSchedule,
    dataset: &[DatasetRecord],
    cfg: &TrainerConfig,
    mut on_step: impl FnMut(usize, f64) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let loss = train_step(model, schedule, dataset, cfg, &mut rng)?;
        on_step(step, loss)?;
        history.push(loss);
    }
    Ok(history)
}

//! Minibatch training of transducer models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batchify, Batch, Utterance};
use crate::error::{invalid, Error, Result};
use crate::models::{compute_loss_no_grad, compute_loss_with_input_grad, Arch, LossBreakdown, ModelBundle};
use crate::numerics::{adam_step, OptimConfig, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Checkpoint callback period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            optim: OptimConfig::default(),
            clip_norm: 5.0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("steps must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be >= 1");
        }
        if !(self.clip_norm >= 0.0) {
            return invalid("clip_norm must be >= 0");
        }
        self.optim.validate()
    }
}

/// Batch-mean loss components after one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub loss: LossBreakdown,
}

/// Sum of per-utterance objectives over a padded batch. With `with_grad`, parameter
/// gradients are accumulated and the gradient with respect to the padded features is
/// returned (zero on padding frames).
pub fn batch_loss(m: &mut ModelBundle, batch: &Batch, with_grad: bool) -> Result<(LossBreakdown, Option<Tensor>)> {
    let mut total = LossBreakdown::new(0.0, 0.0, m.config.lambda_f);
    let mut d_feats = with_grad.then(|| Tensor::zeros(batch.feats.shape()));
    for b in 0..batch.len() {
        let feats = batch.item_feats(b);
        let target = &batch.targets[b];
        let loss = match d_feats.as_mut() {
            Some(d) => {
                let (loss, g) = compute_loss_with_input_grad(m, &feats, target)?;
                let (t_max, dim) = (batch.feats.shape()[1], batch.feats.shape()[2]);
                let start = b * t_max * dim;
                d.data_mut()[start..start + g.len()].copy_from_slice(g.data());
                loss
            }
            None => compute_loss_no_grad(m, &feats, target)?,
        };
        total = total.add(&loss);
    }
    Ok((total, d_feats))
}

/// Mean objective over `utts` (no gradients).
pub fn mean_loss(m: &ModelBundle, utts: &[Utterance]) -> Result<LossBreakdown> {
    if utts.is_empty() {
        return invalid("cannot evaluate on an empty set");
    }
    let mut total = LossBreakdown::new(0.0, 0.0, m.config.lambda_f);
    for u in utts {
        total = total.add(&compute_loss_no_grad(m, &u.feats, &u.transcript)?);
    }
    Ok(total.scaled(1.0 / utts.len() as f64))
}

pub(crate) fn grad_norm(params: &ParamStore, include: impl Fn(&str) -> bool) -> f64 {
    params
        .iter()
        .filter(|(n, _)| include(n))
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients so their global norm is at most `clip`.
pub(crate) fn clip_gradients(params: &mut ParamStore, clip: f64, include: impl Fn(&str) -> bool) {
    if clip <= 0.0 {
        return;
    }
    let norm = grad_norm(params, &include);
    if norm > clip && norm.is_finite() {
        params.scale_grads(clip / norm);
    }
}

/// Endless shuffled index stream: one fresh permutation per epoch.
pub(crate) struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains `m` in place. `on_checkpoint(model, step)` is called every
/// `checkpoint_every` steps and after the final step. On a non-finite loss the
/// model is left at its last good state and [`Error::NonFiniteLoss`] is returned.
pub fn train(
    m: &mut ModelBundle,
    utts: &[Utterance],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&ModelBundle, u64) -> Result<()>,
) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    m.require_arch(&[Arch::Nt, Arch::Fnt, Arch::Ifnt], "training")?;
    if utts.is_empty() {
        return invalid("training set is empty");
    }
    let max_frames = utts.iter().map(Utterance::frames).max().unwrap_or(1);
    let mut sampler = Sampler::new(utts.len(), cfg.optim.seed);
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let first = m.step();
    for step in first + 1..=first + cfg.steps {
        let picked: Vec<Utterance> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| utts[i].clone())
            .collect();
        let batch = batchify(&picked, picked.len(), max_frames)?.remove(0);
        m.params.zero_grads();
        let (loss, _) = batch_loss(m, &batch, true)?;
        let mean = loss.scaled(1.0 / batch.len() as f64);
        if !mean.is_finite() {
            m.params.zero_grads();
            return Err(Error::NonFiniteLoss { step });
        }
        m.params.scale_grads(1.0 / batch.len() as f64);
        clip_gradients(&mut m.params, cfg.clip_norm, |_| true);
        adam_step(&mut m.params, &cfg.optim)?;
        log.push(TrainLogRow { step, loss: mean });
        let last = step == first + cfg.steps;
        if last || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            on_checkpoint(m, step)?;
        }
    }
    Ok(log)
}

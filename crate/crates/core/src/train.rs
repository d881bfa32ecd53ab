//! Minibatch SGD with momentum over the per-sample tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{OptimConfig, RunConfig};
use crate::dataset::{Dataset, Sample};
use crate::error::{Result, VlqaError};
use crate::eval;
use crate::model::{Knockout, Model};
use crate::parallel::Execution;
use crate::tensor::Tensor;

/// Optimizer state that must survive a checkpoint for resumption to be exact.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    /// One momentum buffer per parameter, in store order.
    pub velocity: Vec<Tensor>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        Self {
            step: 0,
            epoch: 0,
            velocity: model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub step: u64,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub heldout_top1: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Mean per-sample loss of every batch, in step order.
    pub batch_losses: Vec<f64>,
}

/// Order of the training set in `epoch`; depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn diverged(step: u64, loss: f64) -> VlqaError {
    VlqaError::Divergence { step, loss }
}

/// Train until `state.epoch == optim.epochs`, logging after every epoch.
pub fn train(
    model: &mut Model,
    state: &mut TrainState,
    train_set: &[Sample],
    heldout: &[Sample],
    optim: &OptimConfig,
    seed: u64,
    exec: Execution,
    mut log: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(VlqaError::Precondition("empty training set".into()));
    }
    if state.velocity.len() != model.params().len() {
        return Err(VlqaError::Config(format!(
            "optimizer state has {} buffers for {} parameters",
            state.velocity.len(),
            model.params().len()
        )));
    }
    let mut report = TrainReport::default();
    while state.epoch < optim.epochs as u64 {
        let order = epoch_order(seed, state.epoch, train_set.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(optim.batch_size) {
            let step = state.step + 1;
            let (loss, mut grads) = match model.batch_loss_and_grad(train_set, batch, exec) {
                Ok(x) => x,
                Err(VlqaError::Numeric(_)) => return Err(diverged(step, f64::NAN)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(step, loss));
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = optim.clip_norm {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            let ids: Vec<_> = model.params().ids().collect();
            for (id, (vel, g)) in ids.into_iter().zip(state.velocity.iter_mut().zip(grads.iter())) {
                let w = model.params_mut().get_mut(id);
                for ((w, v), g) in w.data_mut().iter_mut().zip(vel.data_mut()).zip(g.data()) {
                    *v = optim.momentum * *v + g + optim.weight_decay * *w;
                    *w -= optim.lr * *v;
                }
                if !w.all_finite() {
                    return Err(diverged(step, loss / batch.len() as f64));
                }
            }
            state.step = step;
            epoch_loss += loss;
            report.batch_losses.push(loss / batch.len() as f64);
        }
        state.epoch += 1;
        let heldout_top1 = if heldout.is_empty() {
            None
        } else {
            Some(eval::top1_of(model, heldout, exec)?)
        };
        let entry = EpochLog {
            epoch: state.epoch,
            step: state.step,
            loss: epoch_loss / train_set.len() as f64,
            heldout_top1,
        };
        log(&entry);
        report.epochs.push(entry);
    }
    Ok(report)
}

/// Build a model from `config.seed`, optionally with a module knocked out,
/// and train it on `data.train` while logging held-out accuracy on `data.test`.
pub fn fit(
    config: &RunConfig,
    data: &Dataset,
    knockout: Option<Knockout>,
    exec: Execution,
    log: impl FnMut(&EpochLog),
) -> Result<(Model, TrainState, TrainReport)> {
    let mut model = Model::from_config(config, &data.manifest)?;
    model.set_knockout(knockout)?;
    let mut state = TrainState::new(&model);
    let report = train(&mut model, &mut state, &data.train, &data.test, &config.optim, config.seed, exec, log)?;
    Ok((model, state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(3, 1, 50);
        assert_eq!(a, epoch_order(3, 1, 50));
        assert_ne!(a, epoch_order(3, 2, 50));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }
}

//! Mini-batch training with Adam and early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::Mode;
use super::tape::{Grads, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            hidden_units: 64,
            dropout_rate: 0.3,
            max_epochs: 100,
            patience: 5,
            seed: 42,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.hidden_units == 0 {
            return Err(Error::config("hidden_units", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("adam.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// A model that can be fitted by [`fit`].
pub trait Trainable: Sync {
    type Example: Sync;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Records the scalar loss of one example on `tape`.
    fn example_loss<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        example: &Self::Example,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the minimum validation loss; stops after `patience` epochs
/// without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait > self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn loss_and_grads<M: Trainable>(model: &M, example: &M::Example, rng: &mut ChaCha8Rng) -> Result<(f64, Grads)> {
    let mut tape = Tape::new(model.params());
    let loss = model.example_loss(&mut tape, example, Mode::Train, rng)?;
    tape.ensure_finite()?;
    let value = tape.value(loss).as_scalar();
    Ok((value, tape.backward(loss)))
}

/// Loss and gradient of one example, without dropout.
pub fn example_gradient<M: Trainable>(model: &M, example: &M::Example) -> Result<(f64, Grads)> {
    let mut tape = Tape::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = model.example_loss(&mut tape, example, Mode::Infer, &mut rng)?;
    tape.ensure_finite()?;
    Ok((tape.value(loss).as_scalar(), tape.backward(loss)))
}

/// Mean per-example loss without dropout.
pub fn mean_loss<M: Trainable>(model: &M, examples: &[M::Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("loss over an empty example set"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(model.params());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let loss = model.example_loss(&mut tape, ex, Mode::Infer, &mut rng)?;
            tape.ensure_finite()?;
            Ok(tape.value(loss).as_scalar())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with minimum validation loss. Per-example gradients inside a batch are
/// computed in parallel and summed in example order, so runs are
/// reproducible for a fixed seed.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[M::Example],
    valid: &[M::Example],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if valid.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().clone();
    let mut history = History { train_loss: Vec::new(), val_loss: Vec::new(), best_epoch: 0 };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Grads)> = {
                let model_ref = &*model;
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = example_rng(cfg.seed, epoch, i);
                        loss_and_grads(model_ref, &train[i], &mut rng)
                    })
                    .collect::<Result<_>>()?
            };
            let mut total = model.params().zero_grads();
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += loss;
                total.add_assign(grads);
            }
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no, loss: batch_loss });
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(model.params_mut(), &total, &mut adam)?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = mean_loss(model, valid)?;
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        log::debug!("epoch {epoch}: train {train_loss:.5} validation {val_loss:.5}");
        match stopper.update(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch();
    *model.params_mut() = best_params;
    log::info!(
        "training stopped after {} epochs, best epoch {} (validation loss {:.5})",
        history.val_loss.len(),
        history.best_epoch,
        history.val_loss.get(history.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
    );
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::mat::Mat;
    use crate::numcore::tape::ParamId;

    #[test]
    fn patience_zero_keeps_second_epoch() {
        let mut es = EarlyStopping::new(0);
        assert_eq!(es.update(1, 5.0), StopDecision::Improved);
        assert_eq!(es.update(2, 4.0), StopDecision::Improved);
        assert_eq!(es.update(3, 6.0), StopDecision::Stop);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn patience_waits_before_stopping() {
        let mut es = EarlyStopping::new(2);
        es.update(1, 1.0);
        assert_eq!(es.update(2, 2.0), StopDecision::Continue);
        assert_eq!(es.update(3, 2.0), StopDecision::Continue);
        assert_eq!(es.update(4, 2.0), StopDecision::Stop);
    }

    /// Least squares `w * x ≈ y` with a single weight.
    struct Line {
        params: ParamSet,
        w: ParamId,
    }

    impl Trainable for Line {
        type Example = (f64, f64);
        fn params(&self) -> &ParamSet {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamSet {
            &mut self.params
        }
        fn example_loss<'p>(
            &'p self,
            tape: &mut Tape<'p>,
            ex: &(f64, f64),
            _mode: Mode,
            _rng: &mut ChaCha8Rng,
        ) -> Result<Var> {
            let w = tape.param(self.w);
            let x = tape.input(Mat::scalar(ex.0));
            let pred = tape.mul(w, x);
            let neg_y = tape.input(Mat::scalar(-ex.1));
            let diff = tape.add(pred, neg_y);
            Ok(tape.mul(diff, diff))
        }
    }

    fn line() -> Line {
        let mut params = ParamSet::new();
        let w = params.add("w", Mat::scalar(0.0));
        Line { params, w }
    }

    #[test]
    fn fit_learns_and_is_deterministic() {
        let data: Vec<(f64, f64)> = (0..64).map(|i| (i as f64 / 32.0, 2.0 * i as f64 / 32.0)).collect();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 200,
            patience: 5,
            adam: AdamConfig { learning_rate: 0.05, ..Default::default() },
            ..Default::default()
        };
        let mut a = line();
        let before = mean_loss(&a, &data).unwrap();
        let ha = fit(&mut a, &data, &data, &cfg).unwrap();
        let after = mean_loss(&a, &data).unwrap();
        assert!(after < 0.5 * before);
        let mut b = line();
        let hb = fit(&mut b, &data, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn fit_rejects_empty_splits() {
        let mut m = line();
        let cfg = TrainConfig::default();
        assert!(fit(&mut m, &[], &[(1.0, 1.0)], &cfg).is_err());
        assert!(fit(&mut m, &[(1.0, 1.0)], &[], &cfg).is_err());
    }
}

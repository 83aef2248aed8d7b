//! Small dense numerical engine: matrices, a reverse-mode tape, GRU and dense
//! layers, dropout, Adam, early-stopped training and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod tape;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{dense, dropout, gru_cell, Activation, DenseLayer, GruLayer, GruWeights, Mode};
pub use mat::Mat;
pub use tape::{Grads, ParamId, ParamSet, Tape, Var};
pub use train::{example_gradient, fit, mean_loss, EarlyStopping, History, StopDecision, TrainConfig, Trainable};

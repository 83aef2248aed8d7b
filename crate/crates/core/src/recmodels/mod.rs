//! Cross-session recommenders: a GRU over the encoded sessions of a task with
//! a BCE, censored-Weibull or attention head and an optional demographic
//! branch.

mod attention;
mod weibull;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::CensoredLabels;
use crate::encoders::{EncodedTask, EncoderKind, TaskEncoder};
use crate::error::{Error, Result};
use crate::numcore::layers::{glorot, tape_dropout};
use crate::numcore::{
    Activation, DenseLayer, GruLayer, Mat, Mode, ParamId, ParamSet, Tape, TrainConfig, Trainable, Var,
};

pub use attention::{extract_attention, AttentionTable};
pub use weibull::{
    loss_bce, loss_censored_weibull, weibull_activation, weibull_median, weibull_pmf, weibull_score, weibull_tail,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Bce,
    Weibull,
    Attention,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Bce => "bce",
            HeadKind::Weibull => "weibull",
            HeadKind::Attention => "attention",
        })
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(HeadKind::Bce),
            "weibull" => Ok(HeadKind::Weibull),
            "attention" => Ok(HeadKind::Attention),
            _ => Err(Error::InvalidArgument(format!("unknown head `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub head: HeadKind,
    pub hybrid: bool,
    /// Width of the demographic branch's hidden layer.
    pub demo_units: usize,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Encode,
            head: HeadKind::Bce,
            hybrid: false,
            demo_units: 32,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hybrid && self.demo_units == 0 {
            return Err(Error::config("demo_units", "must be positive"));
        }
        self.train.validate()
    }

    pub fn name(&self) -> String {
        format!("cross-{}-{}{}", self.encoder, self.head, if self.hybrid { "-hybrid" } else { "" })
    }
}

/// One training or evaluation case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub encoded: EncodedTask,
    /// 1 for each purchased item.
    pub target: Vec<f64>,
    /// Time-to-purchase targets per session; required by the Weibull head.
    pub labels: Option<CensoredLabels>,
    /// Scaled demographic and portfolio features; required by hybrids.
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Output {
    Probability(DenseLayer),
    Weibull { alpha: DenseLayer, beta: DenseLayer },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AttentionScorer {
    /// `H x H`
    w_a: ParamId,
    /// `H x 1`
    v: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HybridBranch {
    demo: DenseLayer,
    merge: DenseLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSessionsModel {
    pub config: ModelConfig,
    pub encoder: TaskEncoder,
    pub params: ParamSet,
    pub n_items: usize,
    pub n_features: Option<usize>,
    gru: GruLayer,
    hidden: DenseLayer,
    attention: Option<AttentionScorer>,
    hybrid: Option<HybridBranch>,
    output: Output,
}

/// Values of one forward pass that callers may inspect.
pub struct Forward {
    /// `1 x K` probabilities (BCE and attention heads).
    pub probs: Option<Var>,
    /// `T x K` α and β, one row per step (Weibull head).
    pub alpha_beta: Option<(Var, Var)>,
    /// `1 x T` attention weights.
    pub attention: Option<Var>,
}

impl CrossSessionsModel {
    pub fn new(config: ModelConfig, encoder: TaskEncoder, n_items: usize, n_features: Option<usize>) -> Result<Self> {
        config.validate()?;
        if encoder.kind != config.encoder {
            return Err(Error::InvalidArgument("encoder does not match the model configuration".into()));
        }
        if config.hybrid != n_features.is_some() {
            return Err(Error::InvalidArgument("hybrid models need feature width, others must not have one".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let h = config.train.hidden_units;
        let mut params = ParamSet::new();
        let gru = GruLayer::new(&mut params, "gru", encoder.input_dim(), h, &mut rng);
        let hidden = DenseLayer::new(&mut params, "hidden", h, h, Activation::Relu, &mut rng);
        let attention = (config.head == HeadKind::Attention).then(|| AttentionScorer {
            w_a: params.add("attention.w_a", glorot(h, h, &mut rng)),
            v: params.add("attention.v", glorot(h, 1, &mut rng)),
        });
        let hybrid = n_features.map(|f| HybridBranch {
            demo: DenseLayer::new(&mut params, "demo", f, config.demo_units, Activation::Relu, &mut rng),
            merge: DenseLayer::new(&mut params, "merge", h + config.demo_units, h, Activation::Relu, &mut rng),
        });
        let output = match config.head {
            HeadKind::Weibull => Output::Weibull {
                alpha: DenseLayer::new(&mut params, "out.alpha", h, n_items, Activation::Exp, &mut rng),
                beta: DenseLayer::new(&mut params, "out.beta", h, n_items, Activation::Sigmoid, &mut rng),
            },
            _ => Output::Probability(DenseLayer::new(&mut params, "out", h, n_items, Activation::Sigmoid, &mut rng)),
        };
        Ok(CrossSessionsModel { config, encoder, params, n_items, n_features, gru, hidden, attention, hybrid, output })
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    /// Records the forward pass of one task on `tape`.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        task: &EncodedTask,
        features: Option<&[f64]>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        if task.is_empty() {
            return Err(Error::EmptyInput("task without steps"));
        }
        let width = self.encoder.input_dim();
        if task.steps.iter().any(|s| s.len() != width) {
            return Err(Error::Shape(format!("task step width differs from encoder width {width}")));
        }
        let demo = match (&self.hybrid, features) {
            (None, _) => None,
            (Some(_), None) => return Err(Error::ProfileRequired("hybrid model input".into())),
            (Some(b), Some(x)) => {
                if Some(x.len()) != self.n_features {
                    return Err(Error::Shape(format!("{} features, expected {:?}", x.len(), self.n_features)));
                }
                let xv = tape.input(Mat::row(x.to_vec()));
                Some((b, b.demo.forward(tape, xv)))
            }
        };
        let inputs: Vec<Var> = task.steps.iter().map(|s| tape.input(Mat::row(s.clone()))).collect();
        let states = self.gru.run(tape, &inputs, None);
        let rate = self.config.train.dropout_rate;

        // Session representation: one row, or one row per step for Weibull.
        let mut attention = None;
        let rep = match self.config.head {
            HeadKind::Bce => {
                let last = *states.last().expect("non-empty task");
                let d = tape_dropout(tape, last, rate, mode, rng);
                self.hidden.forward(tape, d)
            }
            HeadKind::Weibull => {
                let all = tape.vcat(&states);
                let d = tape_dropout(tape, all, rate, mode, rng);
                self.hidden.forward(tape, d)
            }
            HeadKind::Attention => {
                let scorer = self.attention.as_ref().expect("attention head has a scorer");
                let all = tape.vcat(&states);
                let d = tape_dropout(tape, all, rate, mode, rng);
                let g = self.hidden.forward(tape, d);
                let (w_a, v) = (tape.param(scorer.w_a), tape.param(scorer.v));
                let proj = tape.matmul(g, w_a);
                let act = tape.tanh(proj);
                let e = tape.matmul(act, v);
                let e_row = tape.transpose(e);
                let lambda = tape.softmax_row(e_row);
                attention = Some(lambda);
                tape.matmul(lambda, g)
            }
        };
        let rep = match demo {
            None => rep,
            Some((branch, d)) => {
                let rows = tape.value(rep).rows();
                let d_rows = if rows == 1 { d } else { tape.vcat(&vec![d; rows]) };
                let joined = tape.hcat(&[rep, d_rows]);
                branch.merge.forward(tape, joined)
            }
        };
        let out = match &self.output {
            Output::Probability(layer) => {
                Forward { probs: Some(layer.forward(tape, rep)), alpha_beta: None, attention }
            }
            Output::Weibull { alpha, beta } => {
                let a = alpha.forward(tape, rep);
                let b = beta.forward(tape, rep);
                Forward { probs: None, alpha_beta: Some((a, b)), attention }
            }
        };
        tape.ensure_finite()?;
        Ok(out)
    }

    fn infer<T>(
        &self,
        task: &EncodedTask,
        features: Option<&[f64]>,
        read: impl FnOnce(&Tape<'_>, &Forward) -> T,
    ) -> Result<T> {
        let mut tape = Tape::new(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, task, features, Mode::Infer, &mut rng)?;
        Ok(read(&tape, &f))
    }

    /// Item scores after the last step: probabilities, or negated median
    /// days to purchase for the Weibull head.
    pub fn scores(&self, task: &EncodedTask, features: Option<&[f64]>) -> Result<Vec<f64>> {
        self.infer(task, features, |tape, f| match (f.probs, f.alpha_beta) {
            (Some(p), _) => tape.value(p).data().to_vec(),
            (None, Some((a, b))) => {
                let (a, b) = (tape.value(a), tape.value(b));
                let last = a.rows() - 1;
                weibull_score(a.row_slice(last), b.row_slice(last))
            }
            (None, None) => unreachable!("every head has an output"),
        })
    }

    /// Weibull parameters at every step (Weibull head only).
    pub fn weibull_params(&self, task: &EncodedTask, features: Option<&[f64]>) -> Result<(Mat, Mat)> {
        if self.config.head != HeadKind::Weibull {
            return Err(Error::InvalidArgument("not a Weibull model".into()));
        }
        self.infer(task, features, |tape, f| {
            let (a, b) = f.alpha_beta.expect("Weibull output");
            (tape.value(a).clone(), tape.value(b).clone())
        })
    }

    /// Scores using only the first `j` sessions, for `j = 1..=sessions`.
    /// The Weibull head reads them from one pass; other heads rerun each prefix.
    pub fn session_prefix_scores(&self, task: &EncodedTask, features: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let n = task.sessions();
        if self.config.head == HeadKind::Weibull {
            let (a, b) = self.weibull_params(task, features)?;
            return Ok((0..n)
                .map(|j| {
                    let row = task.step_session.iter().rposition(|&s| s == j).expect("session has steps");
                    weibull_score(a.row_slice(row), b.row_slice(row))
                })
                .collect());
        }
        (1..=n).map(|j| self.scores(&task.session_prefix(j), features)).collect()
    }

    /// Attention weight of every step (attention head only).
    pub fn attention_weights(&self, task: &EncodedTask, features: Option<&[f64]>) -> Result<Vec<f64>> {
        if self.config.head != HeadKind::Attention {
            return Err(Error::InvalidArgument("not an attention model".into()));
        }
        self.infer(task, features, |tape, f| tape.value(f.attention.expect("attention output")).data().to_vec())
    }
}

impl Trainable for CrossSessionsModel {
    type Example = TaskExample;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        ex: &TaskExample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if ex.target.len() != self.n_items {
            return Err(Error::Shape(format!("target of {} items for {} outputs", ex.target.len(), self.n_items)));
        }
        let f = self.forward(tape, &ex.encoded, ex.features.as_deref(), mode, rng)?;
        match (f.probs, f.alpha_beta) {
            (Some(p), _) => Ok(tape.bce(p, ex.target.clone())),
            (None, Some((a, b))) => {
                let labels = ex.labels.as_ref().ok_or(Error::EmptyInput("time-to-purchase labels"))?;
                let steps = ex.encoded.len();
                let mut y = Vec::with_capacity(steps * self.n_items);
                let mut u = Vec::with_capacity(steps * self.n_items);
                for &s in &ex.encoded.step_session {
                    let (ys, us) = labels.y.get(s).zip(labels.u.get(s)).ok_or_else(|| {
                        Error::Shape(format!("labels for {} sessions, step refers to session {s}", labels.y.len()))
                    })?;
                    y.extend_from_slice(ys);
                    u.extend_from_slice(us);
                }
                if y.len() != steps * self.n_items {
                    return Err(Error::Shape("label width differs from item count".into()));
                }
                let total = tape.weibull_nll(a, b, y, u);
                Ok(tape.scale(total, 1.0 / steps as f64))
            }
            (None, None) => unreachable!("every head has an output"),
        }
    }
}

/// Mean and spread of each feature over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("feature scaling over no rows"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::Shape("feature rows differ in length".into()));
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in rows {
            for ((s, x), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        let scale = scale.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(FeatureScaler { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Shape(format!("{} features, scaler fitted on {}", row.len(), self.mean.len())));
        }
        Ok(row.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect())
    }
}

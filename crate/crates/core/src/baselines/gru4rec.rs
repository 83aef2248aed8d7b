use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{binarize_action, Action, ActionVocabulary, Session};
use crate::encoders::concat_sessions;
use crate::error::{Error, Result};
use crate::eval::{Case, Recommender};
use crate::numcore::layers::tape_dropout;
use crate::numcore::tape::softmax_in_place;
use crate::numcore::{
    fit, gru_cell, Activation, DenseLayer, GruLayer, History, Mat, Mode, ParamSet, Tape, TrainConfig, Trainable, Var,
};

/// Next-action GRU with one softmax head per action component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru4Rec {
    pub params: ParamSet,
    pub concat: bool,
    vocab: ActionVocabulary,
    /// Catalog item of each object, if it names one.
    object_items: Vec<Option<usize>>,
    n_items: usize,
    gru: GruLayer,
    heads: [DenseLayer; 3],
    dropout_rate: f64,
}

impl Gru4Rec {
    pub fn new(
        vocab: ActionVocabulary,
        object_items: Vec<Option<usize>>,
        n_items: usize,
        concat: bool,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if object_items.len() != vocab.objects.len() {
            return Err(Error::Shape("object-item map does not match the vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let h = cfg.hidden_units;
        let gru = GruLayer::new(&mut params, "gru", vocab.width(), h, &mut rng);
        let heads = [
            DenseLayer::new(&mut params, "head.section", h, vocab.sections.len(), Activation::Identity, &mut rng),
            DenseLayer::new(&mut params, "head.object", h, vocab.objects.len(), Activation::Identity, &mut rng),
            DenseLayer::new(&mut params, "head.type", h, vocab.types.len(), Activation::Identity, &mut rng),
        ];
        Ok(Gru4Rec { params, concat, vocab, object_items, n_items, gru, heads, dropout_rate: cfg.dropout_rate })
    }

    pub fn vocab(&self) -> &ActionVocabulary {
        &self.vocab
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// The input sequence of a task: its last session, or all sessions joined.
    pub fn sequence(&self, sessions: &[Session]) -> Vec<Action> {
        if self.concat {
            concat_sessions(sessions)
        } else {
            sessions.last().map(|s| s.actions.clone()).unwrap_or_default()
        }
    }

    /// Training sequences of the given cases; those too short for a target are skipped.
    pub fn examples(&self, cases: &[Case]) -> Vec<Vec<Action>> {
        cases.iter().map(|c| self.sequence(&c.task.sessions)).filter(|s| s.len() >= 2).collect()
    }

    pub fn fit(
        vocab: ActionVocabulary,
        object_items: Vec<Option<usize>>,
        n_items: usize,
        concat: bool,
        train: &[Case],
        valid: &[Case],
        cfg: &TrainConfig,
    ) -> Result<(Self, History)> {
        let mut model = Gru4Rec::new(vocab, object_items, n_items, concat, cfg)?;
        let (tr, va) = (model.examples(train), model.examples(valid));
        let history = fit(&mut model, &tr, &va, cfg)?;
        Ok((model, history))
    }

    /// Section, object and type distributions after the final action.
    pub fn next_action(&self, actions: &[Action]) -> Result<[Vec<f64>; 3]> {
        if actions.is_empty() {
            return Err(Error::EmptyInput("next-action prediction without actions"));
        }
        let w = self.gru.weights(&self.params);
        let mut h = vec![0.0; self.gru.hidden];
        for a in actions {
            h = gru_cell(&binarize_action(a, &self.vocab)?, &h, &w)?;
        }
        let head = |c: usize| -> Result<Vec<f64>> {
            let mut v = self.heads[c].apply(&self.params, &h)?;
            softmax_in_place(&mut v);
            Ok(v)
        };
        Ok([head(0)?, head(1)?, head(2)?])
    }
}

impl Trainable for Gru4Rec {
    type Example = Vec<Action>;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Summed head cross-entropy of predicting action `t + 1` from the state
    /// after action `t`, averaged over the `T - 1` targets.
    fn example_loss<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        actions: &Vec<Action>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if actions.len() < 2 {
            return Err(Error::EmptyInput("next-action sequence shorter than two"));
        }
        let inputs: Vec<Var> = actions[..actions.len() - 1]
            .iter()
            .map(|a| Ok(tape.input(Mat::row(binarize_action(a, &self.vocab)?))))
            .collect::<Result<_>>()?;
        let states = self.gru.run(tape, &inputs, None);
        let mut losses = Vec::with_capacity(3 * states.len());
        for (h, next) in states.into_iter().zip(&actions[1..]) {
            let h = tape_dropout(tape, h, self.dropout_rate, mode, rng);
            let target = [next.section, next.object, next.act_type];
            for c in 0..3 {
                let logits = self.heads[c].forward(tape, h);
                losses.push(tape.softmax_ce(logits, target[c] as usize));
            }
        }
        let total = tape.sum(&losses);
        Ok(tape.scale(total, 1.0 / (actions.len() - 1) as f64))
    }
}

impl Recommender for Gru4Rec {
    fn name(&self) -> String {
        if self.concat { "gru4rec-concat" } else { "gru4rec" }.into()
    }

    /// Object-head probability of each item's object at the final step.
    fn score(&self, case: &Case) -> Result<Vec<f64>> {
        let [_, objects, _] = self.next_action(&self.sequence(&case.task.sessions))?;
        let mut scores = vec![0.0; self.n_items];
        for (p, item) in objects.iter().zip(&self.object_items) {
            if let Some(k) = item {
                scores[*k] += p;
            }
        }
        Ok(scores)
    }
}

//! Sequence-to-sequence GRU autoencoder over the actions of one session.
//! The decoder starts from the encoder's final state and is fed the previous
//! target action (a zero vector at the first step).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vocab_sizes;
use crate::dataio::{ActionVocabulary, Session};
use crate::error::{Error, Result};
use crate::numcore::layers::tape_dropout;
use crate::numcore::{
    fit, gru_cell, Activation, DenseLayer, GruLayer, GruWeights, History, Mat, Mode, ParamSet, Tape, TrainConfig,
    Trainable, Var,
};

/// A session as (section, object, type) code triples.
pub type SessionCodes = Vec<[u32; 3]>;

pub fn session_codes(session: &Session, vocab: &ActionVocabulary) -> Result<SessionCodes> {
    session
        .actions
        .iter()
        .map(|a| {
            vocab.check(a)?;
            Ok([a.section, a.object, a.act_type])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub params: ParamSet,
    encoder: GruLayer,
    decoder: GruLayer,
    heads: [DenseLayer; 3],
    sizes: [usize; 3],
    dropout_rate: f64,
}

/// Fraction of decoder steps whose arg-max matches the input, per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionAccuracy {
    pub section: f64,
    pub object: f64,
    pub act_type: f64,
}

impl Autoencoder {
    pub fn new(sizes: [usize; 3], hidden: usize, dropout_rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width: usize = sizes.iter().sum();
        let mut params = ParamSet::new();
        let encoder = GruLayer::new(&mut params, "encoder", width, hidden, &mut rng);
        let decoder = GruLayer::new(&mut params, "decoder", width, hidden, &mut rng);
        let heads = [
            DenseLayer::new(&mut params, "head.section", hidden, sizes[0], Activation::Identity, &mut rng),
            DenseLayer::new(&mut params, "head.object", hidden, sizes[1], Activation::Identity, &mut rng),
            DenseLayer::new(&mut params, "head.type", hidden, sizes[2], Activation::Identity, &mut rng),
        ];
        Autoencoder { params, encoder, decoder, heads, sizes, dropout_rate }
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.hidden
    }

    pub fn vocab_sizes(&self) -> [usize; 3] {
        self.sizes
    }

    fn width(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn one_hot(&self, code: &[u32; 3]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.width()];
        let mut offset = 0;
        for (c, (&k, &n)) in code.iter().zip(&self.sizes).enumerate() {
            if k as usize >= n {
                let component = ["section", "object", "type"][c];
                return Err(Error::UnknownCategory { component, value: k.to_string() });
            }
            v[offset + k as usize] = 1.0;
            offset += n;
        }
        Ok(v)
    }

    /// Final encoder state for each session.
    pub fn embed_many(&self, sessions: &[SessionCodes]) -> Result<Vec<Vec<f64>>> {
        let w = self.encoder.weights(&self.params);
        sessions.par_iter().map(|s| self.embed_with(&w, s)).collect()
    }

    pub fn embed(&self, session: &SessionCodes) -> Result<Vec<f64>> {
        self.embed_with(&self.encoder.weights(&self.params), session)
    }

    fn embed_with(&self, w: &GruWeights, session: &SessionCodes) -> Result<Vec<f64>> {
        if session.is_empty() {
            return Err(Error::EmptyInput("embedding an empty session"));
        }
        let mut h = vec![0.0; self.embedding_dim()];
        for code in session {
            h = gru_cell(&self.one_hot(code)?, &h, w)?;
        }
        Ok(h)
    }

    /// Teacher-forced reconstruction accuracy over `sessions`.
    pub fn reconstruction_accuracy(&self, sessions: &[SessionCodes]) -> Result<ReconstructionAccuracy> {
        let enc = self.encoder.weights(&self.params);
        let dec = self.decoder.weights(&self.params);
        let per_session: Vec<([usize; 3], usize)> = sessions
            .par_iter()
            .map(|s| {
                let mut h = self.embed_with(&enc, s)?;
                let mut hits = [0usize; 3];
                let mut prev = vec![0.0; self.width()];
                for code in s {
                    h = gru_cell(&prev, &h, &dec)?;
                    for c in 0..3 {
                        let logits = self.heads[c].apply(&self.params, &h)?;
                        let best = argmax(&logits);
                        if best == code[c] as usize {
                            hits[c] += 1;
                        }
                    }
                    prev = self.one_hot(code)?;
                }
                Ok((hits, s.len()))
            })
            .collect::<Result<_>>()?;
        let total: usize = per_session.iter().map(|p| p.1).sum();
        if total == 0 {
            return Err(Error::EmptyInput("reconstruction over no actions"));
        }
        let frac = |c: usize| per_session.iter().map(|p| p.0[c]).sum::<usize>() as f64 / total as f64;
        Ok(ReconstructionAccuracy { section: frac(0), object: frac(1), act_type: frac(2) })
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

impl Trainable for Autoencoder {
    type Example = SessionCodes;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Summed cross-entropy of the three heads, averaged over steps.
    fn example_loss<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        session: &SessionCodes,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if session.is_empty() {
            return Err(Error::EmptyInput("autoencoding an empty session"));
        }
        let inputs: Vec<Var> =
            session.iter().map(|c| Ok(tape.input(Mat::row(self.one_hot(c)?)))).collect::<Result<_>>()?;
        let states = self.encoder.run(tape, &inputs, None);
        let mut h = *states.last().expect("non-empty session");
        let mut prev = tape.input(Mat::zeros(1, self.width()));
        let mut losses = Vec::with_capacity(3 * session.len());
        for (t, code) in session.iter().enumerate() {
            h = self.decoder.step(tape, prev, h);
            let hd = tape_dropout(tape, h, self.dropout_rate, mode, rng);
            for c in 0..3 {
                let logits = self.heads[c].forward(tape, hd);
                losses.push(tape.softmax_ce(logits, code[c] as usize));
            }
            prev = inputs[t];
        }
        let total = tape.sum(&losses);
        Ok(tape.scale(total, 1.0 / session.len() as f64))
    }
}

/// Trains an autoencoder whose embedding size is `cfg.hidden_units`.
pub fn fit_autoencoder(
    vocab: &ActionVocabulary,
    train: &[SessionCodes],
    valid: &[SessionCodes],
    cfg: &TrainConfig,
) -> Result<(Autoencoder, History)> {
    let mut model = Autoencoder::new(vocab_sizes(vocab), cfg.hidden_units, cfg.dropout_rate, cfg.seed);
    let history = fit(&mut model, train, valid, cfg)?;
    Ok((model, history))
}

//! Turning a task's sessions into the input sequence of a recurrent model:
//! one max-pooled vector per session, the concatenated action stream, or
//! one autoencoder embedding per session.

mod autoencoder;

use serde::{Deserialize, Serialize};

use crate::dataio::{binarize_action, Action, ActionVocabulary, Session};
use crate::error::{Error, Result};

pub use autoencoder::{fit_autoencoder, session_codes, Autoencoder, ReconstructionAccuracy, SessionCodes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Encode,
    Concat,
    Auto,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Encode => "encode",
            EncoderKind::Concat => "concat",
            EncoderKind::Auto => "auto",
        })
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode" => Ok(EncoderKind::Encode),
            "concat" => Ok(EncoderKind::Concat),
            "auto" => Ok(EncoderKind::Auto),
            _ => Err(Error::InvalidArgument(format!("unknown encoder `{s}`"))),
        }
    }
}

/// Element-wise maximum of equally long vectors.
pub fn encode_maxpool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::EmptyInput("max-pooling an empty session"))?;
    let mut out = first.clone();
    for v in &vectors[1..] {
        if v.len() != out.len() {
            return Err(Error::Shape(format!("pooling vectors of length {} and {}", out.len(), v.len())));
        }
        for (o, &x) in out.iter_mut().zip(v) {
            *o = o.max(x);
        }
    }
    Ok(out)
}

/// Binary vector with a one for every section, object and type in `actions`.
pub fn pooled_actions<'a>(actions: impl IntoIterator<Item = &'a Action>, vocab: &ActionVocabulary) -> Result<Vec<f64>> {
    let mut out = vec![0.0; vocab.width()];
    let mut any = false;
    for a in actions {
        vocab.check(a)?;
        for i in vocab.hot_indices(a) {
            out[i] = 1.0;
        }
        any = true;
    }
    if !any {
        return Err(Error::EmptyInput("max-pooling an empty session"));
    }
    Ok(out)
}

/// All actions of the sessions in order.
pub fn concat_sessions(sessions: &[Session]) -> Vec<Action> {
    sessions.iter().flat_map(|s| s.actions.iter().copied()).collect()
}

/// Model input for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTask {
    pub steps: Vec<Vec<f64>>,
    /// Index of the session each step comes from.
    pub step_session: Vec<usize>,
}

impl EncodedTask {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The steps belonging to the first `n` sessions.
    pub fn session_prefix(&self, n: usize) -> EncodedTask {
        let end = self.step_session.iter().position(|&s| s >= n).unwrap_or(self.steps.len());
        EncodedTask { steps: self.steps[..end].to_vec(), step_session: self.step_session[..end].to_vec() }
    }

    pub fn sessions(&self) -> usize {
        self.step_session.last().map_or(0, |s| s + 1)
    }
}

/// Encoder configured with a fixed vocabulary (and autoencoder if needed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEncoder {
    pub kind: EncoderKind,
    pub vocab: ActionVocabulary,
    pub autoencoder: Option<Autoencoder>,
}

impl TaskEncoder {
    pub fn new(kind: EncoderKind, vocab: ActionVocabulary, autoencoder: Option<Autoencoder>) -> Result<Self> {
        match (kind, &autoencoder) {
            (EncoderKind::Auto, None) => {
                return Err(Error::InvalidArgument("the auto encoder needs a trained autoencoder".into()))
            }
            (EncoderKind::Auto, Some(ae)) if ae.vocab_sizes() != vocab_sizes(&vocab) => {
                return Err(Error::Shape("autoencoder was trained on a different vocabulary".into()))
            }
            _ => {}
        }
        Ok(TaskEncoder { kind, vocab, autoencoder })
    }

    pub fn input_dim(&self) -> usize {
        match (&self.kind, &self.autoencoder) {
            (EncoderKind::Auto, Some(ae)) => ae.embedding_dim(),
            _ => self.vocab.width(),
        }
    }

    pub fn encode(&self, sessions: &[Session]) -> Result<EncodedTask> {
        if sessions.is_empty() {
            return Err(Error::EmptyInput("task without sessions"));
        }
        match self.kind {
            EncoderKind::Encode => {
                let steps = sessions.iter().map(|s| pooled_actions(&s.actions, &self.vocab)).collect::<Result<_>>()?;
                Ok(EncodedTask { steps, step_session: (0..sessions.len()).collect() })
            }
            EncoderKind::Concat => {
                let mut steps = Vec::new();
                let mut step_session = Vec::new();
                for (i, s) in sessions.iter().enumerate() {
                    for a in &s.actions {
                        steps.push(binarize_action(a, &self.vocab)?);
                        step_session.push(i);
                    }
                }
                if steps.is_empty() {
                    return Err(Error::EmptyInput("task without actions"));
                }
                Ok(EncodedTask { steps, step_session })
            }
            EncoderKind::Auto => {
                let ae = self.autoencoder.as_ref().ok_or(Error::EmptyInput("autoencoder"))?;
                let codes = sessions.iter().map(|s| session_codes(s, &self.vocab)).collect::<Result<Vec<_>>>()?;
                Ok(EncodedTask { steps: ae.embed_many(&codes)?, step_session: (0..sessions.len()).collect() })
            }
        }
    }
}

pub(crate) fn vocab_sizes(v: &ActionVocabulary) -> [usize; 3] {
    [v.sections.len(), v.objects.len(), v.types.len()]
}

//! A small span-extraction reader with hand-written gradients.
//!
//! Layers, one row per passage token:
//!
//! 0. word embedding `E[w_i]`
//! 1. input `x_i = E[w_i] + P[p_i]`
//! 2. question attention `h_i = x_i + sigmoid(q . k_i / sqrt(d)) v_i`, where
//!    `q = mean(E[question]) Wq` and keys/values read the previous token
//!    `x_{i-1}` (`x_{-1} = 0`)
//! 3. final `f_i = h_i + tanh(h_i Wf + bf)`
//!
//! Start and end scores are `f_i . w_start` and `f_i . w_end`.

mod forward;
mod params;
mod train;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias_stats::AnswerPrior;
use crate::config::TrainConfig;
use crate::corpus::{Dataset, Example};
use crate::ensemble::log_softmax;
use crate::error::{Error, Result};

pub use forward::{
    embedding_cosines, forward_ids, loss_and_gradients, ForwardCache, HiddenStates, Instance, LossOutput, LAYER_NAMES,
};
pub use params::{Gradients, ModelParams};
pub use train::{prepare_instances, train, EpochMetrics, Prepared};

pub const UNK: &str = "<unk>";
pub const CHECKPOINT_FORMAT: &str = "posbias-model/1";

/// Token to id map; id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::InvalidArgument(format!("vocabulary must start with {UNK}")));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::InvalidArgument("duplicate vocabulary entries".into()));
        }
        Ok(Vocab { tokens, index })
    }

    /// Every passage and question token of `dataset`, case-sensitive, sorted.
    pub fn build(dataset: &Dataset) -> Self {
        let mut seen = BTreeSet::new();
        for ex in &dataset.examples {
            for t in ex.passage_tokens.iter().chain(&ex.question_tokens) {
                if t.text != UNK {
                    seen.insert(t.text.as_str());
                }
            }
        }
        let tokens = std::iter::once(UNK.to_string())
            .chain(seen.into_iter().map(str::to_string))
            .collect();
        Self::from_tokens(tokens).expect("unique by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vocab::from_tokens(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub metrics_log: Vec<EpochMetrics>,
    /// Prior used by the training objective. Never read at inference.
    pub prior: Option<AnswerPrior>,
    /// Training examples skipped because the answer lies past `max_seq_len`.
    pub dropped_overlong: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    model: TrainedModel,
}

impl TrainedModel {
    /// Freshly initialized model with the vocabulary of `dataset`.
    pub fn untrained(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::build(dataset);
        let params = train::init_params(vocab.len(), config);
        Ok(TrainedModel {
            params,
            config: config.clone(),
            vocab,
            metrics_log: Vec::new(),
            prior: None,
            dropped_overlong: 0,
        })
    }

    /// Passage ids (truncated to `max_seq_len`) and question ids.
    pub fn encode(&self, example: &Example) -> (Vec<usize>, Vec<usize>) {
        let n = example.len().min(self.params.max_seq_len());
        let ids = example.passage_tokens[..n]
            .iter()
            .map(|t| self.vocab.id(&t.text))
            .collect();
        let q = example.question_tokens.iter().map(|t| self.vocab.id(&t.text)).collect();
        (ids, q)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: self.clone(),
        };
        serde_json::to_string(&ck).map_err(|e| Error::Input(format!("cannot serialize model: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::format(
                    path,
                    format!("unsupported checkpoint format {other:?}, expected {CHECKPOINT_FORMAT:?}"),
                ))
            }
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::parse(path, e))?;
        let m = ck.model;
        let p = &m.params;
        if p.vocab_size() != m.vocab.len()
            || p.max_seq_len() != m.config.max_seq_len
            || p.dim != m.config.dim
            || p.word_embeddings.ncols() != p.dim
        {
            return Err(Error::format(
                path,
                "parameter shapes disagree with config and vocabulary",
            ));
        }
        Ok(m)
    }
}

/// Runs the model on `example`. Fails if the passage exceeds `max_seq_len`.
pub fn forward(
    example: &Example,
    model: &TrainedModel,
    position_indices: Option<&[usize]>,
) -> Result<(HiddenStates, Vec<f64>, Vec<f64>)> {
    if example.len() > model.params.max_seq_len() {
        return Err(Error::Input(format!(
            "{}: passage of {} tokens exceeds max_seq_len {}",
            example.id,
            example.len(),
            model.params.max_seq_len()
        )));
    }
    let (ids, q) = model.encode(example);
    let c = forward_ids(&model.params, &ids, &q, position_indices)?;
    Ok((c.hidden, c.start_scores, c.end_scores))
}

/// Highest-scoring `(start, end, start_logp[start] + end_logp[end])` with
/// `start <= end < start + max_answer_len`. Ties keep the earliest span.
#[allow(clippy::needless_range_loop)]
pub fn best_span(start_logp: &[f64], end_logp: &[f64], max_answer_len: usize) -> (usize, usize, f64) {
    let n = start_logp.len().min(end_logp.len());
    let mut best = (0, 0, f64::NEG_INFINITY);
    for s in 0..n {
        for e in s..n.min(s + max_answer_len.max(1)) {
            let v = start_logp[s] + end_logp[e];
            if v > best.2 {
                best = (s, e, v);
            }
        }
    }
    best
}

/// Predicted span over the first `max_seq_len` tokens; reads only the model.
pub fn predict(example: &Example, model: &TrainedModel) -> (usize, usize, f64) {
    let (ids, q) = model.encode(example);
    if ids.is_empty() {
        return (0, 0, 0.0);
    }
    let c = forward_ids(&model.params, &ids, &q, None).expect("encoded within model bounds");
    let sl = log_softmax(&c.start_scores).expect("non-empty");
    let el = log_softmax(&c.end_scores).expect("non-empty");
    best_span(&sl, &el, model.config.max_answer_len)
}

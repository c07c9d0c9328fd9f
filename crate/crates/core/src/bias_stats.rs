//! Biased subsets, answer-position statistics and answer priors.
//!
//! Priors hold raw relative frequencies `count / N`. How a frequency turns
//! into the additive ensemble term is decided by [`PriorTransform`]; the
//! literal transform uses the frequency itself.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PriorKind, PriorTransform, Target};
use crate::corpus::{Dataset, Example, Transform};
use crate::ensemble::BiasTerm;
use crate::error::{Error, Result};

/// Training examples whose training answer starts in sentence `k`.
pub fn build_subset(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidArgument("sentence index k starts at 1".into()));
    }
    let examples = dataset
        .examples
        .iter()
        .filter(|ex| ex.train_sentence_index() == k)
        .cloned()
        .collect();
    Ok(dataset.derive(examples, Transform::Subset { k }))
}

/// Examples whose training answer starts in sentence `k_min` or later.
pub fn build_subset_at_least(dataset: &Dataset, k_min: usize) -> Result<Dataset> {
    if k_min < 2 {
        return Err(Error::InvalidArgument(format!("k_min = {k_min} must be at least 2")));
    }
    let examples = dataset
        .examples
        .iter()
        .filter(|ex| ex.train_sentence_index() >= k_min)
        .cloned()
        .collect();
    Ok(dataset.derive(examples, Transform::SubsetAtLeast { k_min }))
}

/// Uniform sample of `n` examples without replacement.
///
/// Examples are sorted by id before sampling, so the result does not depend on
/// the input order.
pub fn sample_matched(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} examples from a dataset of {}",
            dataset.len()
        )));
    }
    let mut sorted: Vec<&Example> = dataset.examples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = rand::seq::index::sample(&mut rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect();
    Ok(dataset.derive(examples, Transform::Sample { n, seed }))
}

fn target_position(example: &Example, target: Target) -> usize {
    let a = example.train_answer();
    match target {
        Target::Start => a.token_start,
        Target::End => a.token_end,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub counts_by_sentence: BTreeMap<usize, usize>,
    /// Counts of training-answer start tokens by position.
    pub counts_by_token: Vec<usize>,
    pub total: usize,
}

pub fn position_histogram(dataset: &Dataset) -> PositionHistogram {
    let mut counts_by_sentence = BTreeMap::new();
    let mut counts_by_token = Vec::new();
    for ex in &dataset.examples {
        *counts_by_sentence.entry(ex.train_sentence_index()).or_insert(0) += 1;
        let p = target_position(ex, Target::Start);
        if counts_by_token.len() <= p {
            counts_by_token.resize(p + 1, 0);
        }
        counts_by_token[p] += 1;
    }
    PositionHistogram {
        counts_by_sentence,
        counts_by_token,
        total: dataset.len(),
    }
}

impl PositionHistogram {
    /// Sentence index with the most training answers (lowest index on ties).
    pub fn mode_sentence(&self) -> Option<usize> {
        self.counts_by_sentence
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| *k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sentence,count\n");
        for (k, c) in &self.counts_by_sentence {
            out.push_str(&format!("{k},{c}\n"));
        }
        out
    }
}

/// Relative frequency of training answers at each token position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "word")]
pub struct WordLevelPrior {
    pub target: Target,
    /// One term per position `0..max_seq_len`.
    pub terms: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub source: String,
}

/// Answers at positions `>= max_seq_len` count towards `N` but have no term.
pub fn word_level_prior(dataset: &Dataset, max_seq_len: usize, target: Target) -> Result<WordLevelPrior> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute a prior over an empty dataset".into(),
        ));
    }
    let mut counts = vec![0usize; max_seq_len];
    for ex in &dataset.examples {
        let p = target_position(ex, target);
        if p < max_seq_len {
            counts[p] += 1;
        }
    }
    let n = dataset.len();
    Ok(WordLevelPrior {
        target,
        terms: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        n,
        source: dataset.name.clone(),
    })
}

/// Relative frequency of training answers in each sentence index `1..=L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "sentence")]
pub struct SentenceLevelPrior {
    pub sentence_freq: BTreeMap<usize, f64>,
    /// Largest sentence count over the training passages.
    #[serde(rename = "L")]
    pub max_sentences: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub source: String,
}

pub fn sentence_level_prior(dataset: &Dataset) -> Result<SentenceLevelPrior> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute a prior over an empty dataset".into(),
        ));
    }
    let max_sentences = dataset.examples.iter().map(|e| e.sentences.len()).max().unwrap_or(0);
    let mut counts: BTreeMap<usize, usize> = (1..=max_sentences).map(|l| (l, 0)).collect();
    for ex in &dataset.examples {
        *counts.entry(ex.train_sentence_index()).or_insert(0) += 1;
    }
    let n = dataset.len();
    Ok(SentenceLevelPrior {
        sentence_freq: counts.into_iter().map(|(l, c)| (l, c as f64 / n as f64)).collect(),
        max_sentences,
        n,
        source: dataset.name.clone(),
    })
}

/// Per-position frequencies for one example: every token of sentence `l`
/// receives the frequency of `l`; sentences beyond `L` receive 0.
pub fn expand_prior(prior: &SentenceLevelPrior, example: &Example) -> Vec<f64> {
    let mut out = vec![0.0; example.len()];
    for s in &example.sentences {
        let f = if s.index <= prior.max_sentences {
            prior.sentence_freq.get(&s.index).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        for slot in &mut out[s.token_start..s.token_end] {
            *slot = f;
        }
    }
    out
}

/// The bias model used by the ensemble objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerPrior {
    Word { start: WordLevelPrior, end: WordLevelPrior },
    Sentence(SentenceLevelPrior),
}

impl AnswerPrior {
    pub fn compute(dataset: &Dataset, kind: PriorKind, max_seq_len: usize) -> Result<AnswerPrior> {
        Ok(match kind {
            PriorKind::Word => AnswerPrior::Word {
                start: word_level_prior(dataset, max_seq_len, Target::Start)?,
                end: word_level_prior(dataset, max_seq_len, Target::End)?,
            },
            PriorKind::Sentence => AnswerPrior::Sentence(sentence_level_prior(dataset)?),
        })
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            AnswerPrior::Word { .. } => PriorKind::Word,
            AnswerPrior::Sentence(_) => PriorKind::Sentence,
        }
    }

    /// Additive start/end terms for the first `len` positions of `example`.
    pub fn bias_terms(&self, example: &Example, len: usize, transform: PriorTransform) -> BiasTerm {
        let (start, end) = match self {
            AnswerPrior::Word { start, end } => {
                let take = |p: &WordLevelPrior| {
                    (0..len)
                        .map(|i| p.terms.get(i).copied().unwrap_or(0.0))
                        .collect::<Vec<_>>()
                };
                (take(start), take(end))
            }
            AnswerPrior::Sentence(p) => {
                let mut f = expand_prior(p, example);
                f.truncate(len);
                (f.clone(), f)
            }
        };
        BiasTerm {
            start_terms: start.into_iter().map(|f| transform.apply(f)).collect(),
            end_terms: end.into_iter().map(|f| transform.apply(f)).collect(),
            transform,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AnswerPrior> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

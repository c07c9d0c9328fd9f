//! Word-information curves and rank correlations between output logits and
//! per-layer information.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Target;
use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{embedding_cosines, forward_ids, HiddenStates, TrainedModel};

/// Access to layer activations and raw start/end scores.
pub trait Introspect {
    fn trace(&self, example: &Example) -> Result<(HiddenStates, Vec<f64>, Vec<f64>)>;
}

impl Introspect for TrainedModel {
    /// Passages longer than `max_seq_len` are cut to it.
    fn trace(&self, example: &Example) -> Result<(HiddenStates, Vec<f64>, Vec<f64>)> {
        let (ids, q) = self.encode(example);
        let c = forward_ids(&self.params, &ids, &q, None)?;
        Ok((c.hidden, c.start_scores, c.end_scores))
    }
}

/// Mean cosine similarity to the word embedding, per passage position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoCurve {
    pub layer: usize,
    pub values: Vec<f64>,
    /// Examples contributing to each position.
    pub counts: Vec<usize>,
    pub n_examples: usize,
}

impl InfoCurve {
    /// Mean of `values` over `positions`, weighted by contributing examples.
    pub fn weighted_mean(&self, positions: impl IntoIterator<Item = usize>) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0usize);
        for p in positions {
            if let (Some(v), Some(&c)) = (self.values.get(p), self.counts.get(p)) {
                num += v * c as f64;
                den += c;
            }
        }
        (den > 0).then(|| num / den as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,position,cosine,count\n");
        for (p, (v, c)) in self.values.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{},{p},{v},{c}", self.layer);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub target: Target,
    /// Mean per-example coefficient per layer; `None` when every example was degenerate.
    pub per_layer: Vec<Option<f64>>,
    pub used: Vec<usize>,
    pub skipped: Vec<usize>,
}

impl CorrelationCurve {
    pub fn final_layer(&self) -> Option<f64> {
        self.per_layer.last().copied().flatten()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,layer,spearman,used,skipped\n");
        for (l, v) in self.per_layer.iter().enumerate() {
            let v = v.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(out, "{},{l},{v},{},{}", self.target, self.used[l], self.skipped[l]);
        }
        out
    }
}

/// Per-position mean of `cos(word embedding, layer activation)` over `dataset`.
pub fn cosine_info<M: Introspect + ?Sized>(model: &M, dataset: &Dataset, layer: usize) -> Result<InfoCurve> {
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for ex in &dataset.examples {
        let (hidden, _, _) = model.trace(ex)?;
        if layer >= hidden.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for a model with {} layers",
                hidden.num_layers()
            )));
        }
        let cos = embedding_cosines(&hidden, layer);
        if cos.len() > sums.len() {
            sums.resize(cos.len(), 0.0);
            counts.resize(cos.len(), 0);
        }
        for (p, c) in cos.into_iter().enumerate() {
            sums[p] += c;
            counts[p] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (s / c as f64).clamp(-1.0, 1.0))
        .collect();
    Ok(InfoCurve {
        layer,
        values,
        counts,
        n_examples: dataset.len(),
    })
}

/// Mean layer cosine over first-sentence tokens and over all later tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceContrast {
    pub first: f64,
    pub later: f64,
}

/// Pools `cos(word embedding, layer activation)` by whether each token lies in
/// its passage's first sentence. Truncated tokens are not counted.
pub fn first_sentence_contrast<M: Introspect + ?Sized>(
    model: &M,
    dataset: &Dataset,
    layer: usize,
) -> Result<SentenceContrast> {
    let (mut first, mut later) = ((0.0, 0usize), (0.0, 0usize));
    for ex in &dataset.examples {
        let (hidden, _, _) = model.trace(ex)?;
        if layer >= hidden.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for a model with {} layers",
                hidden.num_layers()
            )));
        }
        let boundary = ex.sentences.first().map_or(0, |s| s.token_end);
        for (p, c) in embedding_cosines(&hidden, layer).into_iter().enumerate() {
            let slot = if p < boundary { &mut first } else { &mut later };
            slot.0 += c;
            slot.1 += 1;
        }
    }
    if first.1 == 0 || later.1 == 0 {
        return Err(Error::InvalidArgument(
            "need tokens both inside and after the first sentence".into(),
        ));
    }
    Ok(SentenceContrast {
        first: first.0 / first.1 as f64,
        later: later.0 / later.1 as f64,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
/// Constant inputs have no defined coefficient and return an error.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "spearman needs two vectors of equal length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("spearman input contains NaN".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "spearman undefined for a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// For each layer, the mean over examples of the Spearman coefficient between
/// the target logits and that layer's cosine similarities.
pub fn correlation_curve<M: Introspect + ?Sized>(
    model: &M,
    dataset: &Dataset,
    target: Target,
) -> Result<CorrelationCurve> {
    let mut sums: Vec<f64> = Vec::new();
    let mut used: Vec<usize> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();
    for ex in &dataset.examples {
        let (hidden, start, end) = model.trace(ex)?;
        let logits = match target {
            Target::Start => start,
            Target::End => end,
        };
        let layers = hidden.num_layers();
        if sums.len() < layers {
            sums.resize(layers, 0.0);
            used.resize(layers, 0);
            skipped.resize(layers, 0);
        }
        for l in 0..layers {
            match spearman(&logits, &embedding_cosines(&hidden, l)) {
                Ok(r) => {
                    sums[l] += r;
                    used[l] += 1;
                }
                Err(_) => skipped[l] += 1,
            }
        }
    }
    let per_layer = sums
        .iter()
        .zip(&used)
        .map(|(s, &u)| (u > 0).then(|| s / u as f64))
        .collect();
    Ok(CorrelationCurve {
        target,
        per_layer,
        used,
        skipped,
    })
}

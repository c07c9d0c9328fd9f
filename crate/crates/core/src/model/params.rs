use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::MixinHead;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub word_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_ff: Array2<f64>,
    pub b_ff: Array1<f64>,
    pub start_scorer: Array1<f64>,
    pub end_scorer: Array1<f64>,
    pub start_gate: MixinHead,
    pub end_gate: MixinHead,
}

impl ModelParams {
    pub fn zeros(vocab_size: usize, max_seq_len: usize, dim: usize) -> Self {
        let sq = || Array2::zeros((dim, dim));
        ModelParams {
            dim,
            word_embeddings: Array2::zeros((vocab_size, dim)),
            position_embeddings: Array2::zeros((max_seq_len, dim)),
            w_query: sq(),
            w_key: sq(),
            w_value: sq(),
            w_ff: sq(),
            b_ff: Array1::zeros(dim),
            start_scorer: Array1::zeros(dim),
            end_scorer: Array1::zeros(dim),
            start_gate: MixinHead::zeros(dim),
            end_gate: MixinHead::zeros(dim),
        }
    }

    /// Gaussian initialization with standard deviation `1/sqrt(dim)`. Gate
    /// heads and the feed-forward bias start at zero.
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, max_seq_len: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut p = Self::zeros(vocab_size, max_seq_len, dim);
        for group in [
            &mut p.word_embeddings,
            &mut p.position_embeddings,
            &mut p.w_query,
            &mut p.w_key,
            &mut p.w_value,
            &mut p.w_ff,
        ] {
            group.mapv_inplace(|_| normal.sample(rng));
        }
        p.start_scorer.mapv_inplace(|_| normal.sample(rng));
        p.end_scorer.mapv_inplace(|_| normal.sample(rng));
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.word_embeddings.nrows()
    }

    pub fn max_seq_len(&self) -> usize {
        self.position_embeddings.nrows()
    }

    /// Every parameter group as a named mutable slice, in a fixed order.
    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
            a.as_slice_mut().expect("standard layout")
        }
        vec![
            ("word_embeddings", s(&mut self.word_embeddings)),
            ("position_embeddings", s(&mut self.position_embeddings)),
            ("w_query", s(&mut self.w_query)),
            ("w_key", s(&mut self.w_key)),
            ("w_value", s(&mut self.w_value)),
            ("w_ff", s(&mut self.w_ff)),
            ("b_ff", s(&mut self.b_ff)),
            ("start_scorer", s(&mut self.start_scorer)),
            ("end_scorer", s(&mut self.end_scorer)),
            ("start_gate.weight", s(&mut self.start_gate.weight)),
            ("start_gate.bias", std::slice::from_mut(&mut self.start_gate.bias)),
            ("end_gate.weight", s(&mut self.end_gate.weight)),
            ("end_gate.bias", std::slice::from_mut(&mut self.end_gate.bias)),
        ]
    }

    pub fn groups(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut c = self.clone();
        c.groups_mut().into_iter().map(|(n, s)| (n, s.to_vec())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradients with a sparse word-embedding block.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub word_rows: BTreeMap<usize, Array1<f64>>,
    pub position_embeddings: Array2<f64>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_ff: Array2<f64>,
    pub b_ff: Array1<f64>,
    pub start_scorer: Array1<f64>,
    pub end_scorer: Array1<f64>,
    pub start_gate: MixinHead,
    pub end_gate: MixinHead,
}

impl Gradients {
    pub fn zeros(max_seq_len: usize, dim: usize) -> Self {
        let sq = || Array2::zeros((dim, dim));
        Gradients {
            word_rows: BTreeMap::new(),
            position_embeddings: Array2::zeros((max_seq_len, dim)),
            w_query: sq(),
            w_key: sq(),
            w_value: sq(),
            w_ff: sq(),
            b_ff: Array1::zeros(dim),
            start_scorer: Array1::zeros(dim),
            end_scorer: Array1::zeros(dim),
            start_gate: MixinHead::zeros(dim),
            end_gate: MixinHead::zeros(dim),
        }
    }

    pub(crate) fn add_word_row(&mut self, id: usize, row: ndarray::ArrayView1<f64>) {
        let dim = row.len();
        let slot = self.word_rows.entry(id).or_insert_with(|| Array1::zeros(dim));
        *slot += &row;
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, row) in &other.word_rows {
            self.add_word_row(*id, row.view());
        }
        self.position_embeddings += &other.position_embeddings;
        self.w_query += &other.w_query;
        self.w_key += &other.w_key;
        self.w_value += &other.w_value;
        self.w_ff += &other.w_ff;
        self.b_ff += &other.b_ff;
        self.start_scorer += &other.start_scorer;
        self.end_scorer += &other.end_scorer;
        self.start_gate.weight += &other.start_gate.weight;
        self.start_gate.bias += other.start_gate.bias;
        self.end_gate.weight += &other.end_gate.weight;
        self.end_gate.bias += other.end_gate.bias;
    }

    /// Dense, parameter-shaped copy.
    pub fn to_dense(&self, vocab_size: usize) -> ModelParams {
        let dim = self.b_ff.len();
        let mut words = Array2::zeros((vocab_size, dim));
        for (id, row) in &self.word_rows {
            words.row_mut(*id).assign(row);
        }
        ModelParams {
            dim,
            word_embeddings: words,
            position_embeddings: self.position_embeddings.clone(),
            w_query: self.w_query.clone(),
            w_key: self.w_key.clone(),
            w_value: self.w_value.clone(),
            w_ff: self.w_ff.clone(),
            b_ff: self.b_ff.clone(),
            start_scorer: self.start_scorer.clone(),
            end_scorer: self.end_scorer.clone(),
            start_gate: self.start_gate.clone(),
            end_gate: self.end_gate.clone(),
        }
    }

    /// Plain SGD step `params -= lr * scale * self`.
    pub fn apply(&self, params: &mut ModelParams, lr: f64, scale: f64) {
        let step = lr * scale;
        for (id, row) in &self.word_rows {
            params.word_embeddings.row_mut(*id).scaled_add(-step, row);
        }
        let upd2 = |p: &mut Array2<f64>, g: &Array2<f64>| Zip::from(p).and(g).for_each(|p, g| *p -= step * g);
        upd2(&mut params.position_embeddings, &self.position_embeddings);
        upd2(&mut params.w_query, &self.w_query);
        upd2(&mut params.w_key, &self.w_key);
        upd2(&mut params.w_value, &self.w_value);
        upd2(&mut params.w_ff, &self.w_ff);
        params.b_ff.scaled_add(-step, &self.b_ff);
        params.start_scorer.scaled_add(-step, &self.start_scorer);
        params.end_scorer.scaled_add(-step, &self.end_scorer);
        params.start_gate.weight.scaled_add(-step, &self.start_gate.weight);
        params.start_gate.bias -= step * self.start_gate.bias;
        params.end_gate.weight.scaled_add(-step, &self.end_gate.weight);
        params.end_gate.bias -= step * self.end_gate.bias;
    }
}

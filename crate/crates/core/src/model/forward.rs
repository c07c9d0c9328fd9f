use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ModelParams};
use crate::config::{Objective, TrainConfig};
use crate::ensemble::{self, entropy_with_grad, gate_trace, sigmoid, BiasTerm, GateTrace};
use crate::error::{Error, Result};

pub const LAYER_NAMES: [&str; 4] = ["embedding", "input", "attention", "final"];

/// Activations of every layer, one row per passage position. Layer 0 is the
/// word-embedding lookup, the last layer feeds the start/end scorers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    pub layers: Vec<Array2<f64>>,
}

impl HiddenStates {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> Option<&Array2<f64>> {
        self.layers.get(i)
    }

    pub fn embedding(&self) -> &Array2<f64> {
        &self.layers[0]
    }

    pub fn final_layer(&self) -> &Array2<f64> {
        self.layers.last().expect("at least one layer")
    }

    pub fn len(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token ids and gold span of one training or evaluation passage.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub ids: Vec<usize>,
    pub question_ids: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

/// Forward activations kept for the backward pass.
pub struct ForwardCache {
    pub hidden: HiddenStates,
    pub start_scores: Vec<f64>,
    pub end_scores: Vec<f64>,
    pos_rows: Vec<usize>,
    q_mean: Array1<f64>,
    shifted: Array2<f64>,
    query: Array1<f64>,
    keys: Array2<f64>,
    attn: Array1<f64>,
    values: Array2<f64>,
    tanh: Array2<f64>,
}

fn position_rows(n: usize, max_seq_len: usize, positions: Option<&[usize]>) -> Result<Vec<usize>> {
    match positions {
        None => Ok((0..n).collect()),
        Some(p) => {
            if p.len() < n {
                return Err(Error::InvalidArgument(format!(
                    "{} position indices for a passage of {n} tokens",
                    p.len()
                )));
            }
            let p = &p[..n];
            if p.iter().any(|&i| i == 0 || i > max_seq_len) || p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "position indices must be strictly ascending within 1..={max_seq_len}"
                )));
            }
            Ok(p.iter().map(|i| i - 1).collect())
        }
    }
}

/// Runs the reader over token ids. `positions` holds 1-based sorted indices
/// into the position table; row `i` of the passage uses `positions[i]`.
pub fn forward_ids(
    params: &ModelParams,
    ids: &[usize],
    question_ids: &[usize],
    positions: Option<&[usize]>,
) -> Result<ForwardCache> {
    let n = ids.len();
    let d = params.dim;
    if n == 0 {
        return Err(Error::Input("empty passage".into()));
    }
    if n > params.max_seq_len() {
        return Err(Error::Input(format!(
            "passage of {n} tokens exceeds max_seq_len {}",
            params.max_seq_len()
        )));
    }
    if let Some(bad) = ids.iter().chain(question_ids).find(|&&i| i >= params.vocab_size()) {
        return Err(Error::Input(format!("token id {bad} outside the vocabulary")));
    }
    let pos_rows = position_rows(n, params.max_seq_len(), positions)?;

    let emb = params.word_embeddings.select(Axis(0), ids);
    let x = &emb + &params.position_embeddings.select(Axis(0), &pos_rows);
    let q_mean = if question_ids.is_empty() {
        Array1::zeros(d)
    } else {
        params
            .word_embeddings
            .select(Axis(0), question_ids)
            .mean_axis(Axis(0))
            .expect("non-empty question")
    };

    let mut shifted = Array2::zeros((n, d));
    shifted.slice_mut(s![1.., ..]).assign(&x.slice(s![..n - 1, ..]));
    let query = q_mean.dot(&params.w_query);
    let keys = shifted.dot(&params.w_key);
    let scale = (d as f64).sqrt();
    let attn = keys.dot(&query).mapv(|a| sigmoid(a / scale));
    let values = shifted.dot(&params.w_value);
    let h = &x + &(&values * &attn.view().insert_axis(Axis(1)));

    let mut z = h.dot(&params.w_ff);
    z += &params.b_ff;
    let tanh = z.mapv(f64::tanh);
    let f = &h + &tanh;

    let start_scores = f.dot(&params.start_scorer).to_vec();
    let end_scores = f.dot(&params.end_scorer).to_vec();
    Ok(ForwardCache {
        hidden: HiddenStates {
            layers: vec![emb, x, h, f],
        },
        start_scores,
        end_scores,
        pos_rows,
        q_mean,
        shifted,
        query,
        keys,
        attn,
        values,
        tanh,
    })
}

/// Loss value, gradients and gate readings for one instance.
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
    pub gate_start: Option<f64>,
    pub gate_end: Option<f64>,
}

fn cosine_parts(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> (f64, f64, f64) {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        (0.0, na, nb)
    } else {
        (a.dot(&b) / (na * nb), na, nb)
    }
}

/// Cosine similarity between the word embedding and `layer` at each position.
pub fn embedding_cosines(hidden: &HiddenStates, layer: usize) -> Vec<f64> {
    let e = hidden.embedding();
    let l = &hidden.layers[layer];
    e.rows()
        .into_iter()
        .zip(l.rows())
        .map(|(a, b)| cosine_parts(a, b).0)
        .collect()
}

fn gate_backward(
    grads_head: &mut ensemble::MixinHead,
    df: &mut Array2<f64>,
    f: &Array2<f64>,
    head: &ensemble::MixinHead,
    trace: GateTrace,
    dg: f64,
) {
    let da = dg * sigmoid(trace.pre_activation);
    grads_head.weight.scaled_add(da, &f.row(trace.argmax));
    grads_head.bias += da;
    df.row_mut(trace.argmax).scaled_add(da, &head.weight);
}

/// Objective value and exact gradients for one instance.
///
/// `bias` is required for the ensemble objectives; `positions` replaces the
/// default position indices.
pub fn loss_and_gradients(
    params: &ModelParams,
    inst: &Instance,
    config: &TrainConfig,
    bias: Option<&BiasTerm>,
    positions: Option<&[usize]>,
) -> Result<LossOutput> {
    let n = inst.ids.len();
    let bias = match (config.objective.needs_prior(), bias) {
        (true, None) => {
            return Err(Error::Config(format!(
                "objective {} requires an answer prior",
                config.objective
            )))
        }
        (true, Some(b)) => {
            if b.start_terms.len() != n || b.end_terms.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "bias terms cover {} positions, passage has {n}",
                    b.start_terms.len()
                )));
            }
            Some(b)
        }
        (false, _) => None,
    };
    if inst.start >= n || inst.end >= n {
        return Err(Error::InvalidArgument("gold span outside the passage".into()));
    }
    let c = forward_ids(params, &inst.ids, &inst.question_ids, positions)?;
    let f = c.hidden.final_layer();
    let d = params.dim;

    let (gs, ge) = match config.objective {
        Objective::LearnedMixin => (
            Some(gate_trace(f.view(), &params.start_gate)),
            Some(gate_trace(f.view(), &params.end_gate)),
        ),
        _ => (None, None),
    };
    let coef = |g: Option<GateTrace>| g.map_or(1.0, |t| t.value);
    let ls = ensemble::ensemble_loss(&c.start_scores, bias.map(|b| &b.start_terms[..]), coef(gs), inst.start)?;
    let le = ensemble::ensemble_loss(&c.end_scores, bias.map(|b| &b.end_terms[..]), coef(ge), inst.end)?;
    let mut loss = 0.5 * (ls.loss + le.loss);

    let mut grads = Gradients::zeros(params.max_seq_len(), d);
    let dstart = Array1::from(ls.grad_scores) * 0.5;
    let dend = Array1::from(le.grad_scores) * 0.5;
    grads.start_scorer = f.t().dot(&dstart);
    grads.end_scorer = f.t().dot(&dend);
    let mut df = outer(&dstart, &params.start_scorer) + outer(&dend, &params.end_scorer);

    if let Some(t) = gs {
        gate_backward(
            &mut grads.start_gate,
            &mut df,
            f,
            &params.start_gate,
            t,
            0.5 * ls.grad_coef,
        );
    }
    if let Some(t) = ge {
        gate_backward(&mut grads.end_gate, &mut df, f, &params.end_gate, t, 0.5 * le.grad_coef);
    }

    let emb = c.hidden.embedding();
    let mut demb = Array2::<f64>::zeros((n, d));
    if config.objective == Objective::EntropyReg && config.lambda != 0.0 {
        let mut cos = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        for (e, fr) in emb.rows().into_iter().zip(f.rows()) {
            let (cs, ne, nf) = cosine_parts(e, fr);
            cos.push(cs);
            norms.push((ne, nf));
        }
        let (h, dh) = entropy_with_grad(&cos);
        loss -= config.lambda * h;
        for j in 0..n {
            let dc = -config.lambda * dh[j];
            let (ne, nf) = norms[j];
            if dc == 0.0 || ne == 0.0 || nf == 0.0 {
                continue;
            }
            let (e, fr) = (emb.row(j), f.row(j));
            let mut drow = df.row_mut(j);
            drow.scaled_add(dc / (ne * nf), &e);
            drow.scaled_add(-dc * cos[j] / (nf * nf), &fr);
            let mut erow = demb.row_mut(j);
            erow.scaled_add(dc / (ne * nf), &fr);
            erow.scaled_add(-dc * cos[j] / (ne * ne), &e);
        }
    }

    // F = H + tanh(H Wf + bf)
    let h = &c.hidden.layers[2];
    let dz = &df * &c.tanh.mapv(|t| 1.0 - t * t);
    grads.w_ff = h.t().dot(&dz);
    grads.b_ff = dz.sum_axis(Axis(0));
    let dh = &df + &dz.dot(&params.w_ff.t());

    // H = X + attn * V
    let mut dx = dh.clone();
    let dv = &dh * &c.attn.view().insert_axis(Axis(1));
    let ds = (&dh * &c.values).sum_axis(Axis(1));
    let scale = (d as f64).sqrt();
    let da = Array1::from_iter(ds.iter().zip(&c.attn).map(|(g, s)| g * s * (1.0 - s) / scale));
    grads.w_value = c.shifted.t().dot(&dv);
    let dk = outer(&da, &c.query);
    let dq = c.keys.t().dot(&da);
    grads.w_key = c.shifted.t().dot(&dk);
    let dshift = dv.dot(&params.w_value.t()) + dk.dot(&params.w_key.t());
    grads.w_query = outer(&c.q_mean, &dq);
    let dq_mean = params.w_query.dot(&dq);

    if n > 1 {
        let mut head = dx.slice_mut(s![..n - 1, ..]);
        head += &dshift.slice(s![1.., ..]);
    }

    // X = E + P
    demb += &dx;
    for (i, row) in dx.rows().into_iter().enumerate() {
        grads.position_embeddings.row_mut(c.pos_rows[i]).scaled_add(1.0, &row);
    }
    dx = demb;
    for (i, row) in dx.rows().into_iter().enumerate() {
        grads.add_word_row(inst.ids[i], row);
    }
    if !inst.question_ids.is_empty() {
        let share = dq_mean / inst.question_ids.len() as f64;
        for &q in &inst.question_ids {
            grads.add_word_row(q, share.view());
        }
    }

    Ok(LossOutput {
        loss,
        grads,
        gate_start: gs.map(|t| t.value),
        gate_end: ge.map(|t| t.value),
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{loss_and_gradients, Instance};
use super::params::{Gradients, ModelParams};
use super::{TrainedModel, Vocab};
use crate::bias_stats::AnswerPrior;
use crate::config::{Objective, TrainConfig};
use crate::corpus::Dataset;
use crate::ensemble::{sample_positions, BiasTerm};
use crate::error::{Error, Result};
use crate::mix_seed;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const POSITION_STREAM: u64 = 2 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_gate_start: Option<f64>,
    pub mean_gate_end: Option<f64>,
}

pub(crate) fn init_params(vocab_size: usize, config: &TrainConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, INIT_STREAM));
    ModelParams::init(vocab_size, config.max_seq_len, config.dim, &mut rng)
}

/// Encoded training set.
pub struct Prepared {
    pub instances: Vec<Instance>,
    pub bias: Vec<Option<BiasTerm>>,
    pub dropped: usize,
}

/// Encodes `dataset`, dropping examples whose training answer ends at or
/// past `max_seq_len` and truncating longer passages.
pub fn prepare_instances(
    dataset: &Dataset,
    vocab: &Vocab,
    config: &TrainConfig,
    prior: Option<&AnswerPrior>,
) -> Prepared {
    let mut out = Prepared {
        instances: Vec::with_capacity(dataset.len()),
        bias: Vec::with_capacity(dataset.len()),
        dropped: 0,
    };
    for ex in &dataset.examples {
        let ans = ex.train_answer();
        if ans.token_end >= config.max_seq_len {
            out.dropped += 1;
            continue;
        }
        let n = ex.len().min(config.max_seq_len);
        out.instances.push(Instance {
            ids: ex.passage_tokens[..n].iter().map(|t| vocab.id(&t.text)).collect(),
            question_ids: ex.question_tokens.iter().map(|t| vocab.id(&t.text)).collect(),
            start: ans.token_start,
            end: ans.token_end,
        });
        out.bias
            .push(prior.map(|p| p.bias_terms(ex, n, config.prior_transform)));
    }
    out
}

/// Mini-batch SGD on `dataset` under `config.objective`.
pub fn train(dataset: &Dataset, config: &TrainConfig, prior: Option<&AnswerPrior>) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input(format!("training set {:?} is empty", dataset.name)));
    }
    let prior = if config.objective.needs_prior() {
        Some(prior.ok_or_else(|| Error::Config(format!("objective {} requires an answer prior", config.objective)))?)
    } else {
        None
    };
    let vocab = Vocab::build(dataset);
    let data = prepare_instances(dataset, &vocab, config, prior);
    if data.instances.is_empty() {
        return Err(Error::Input("no training example fits within max_seq_len".into()));
    }
    let mut params = init_params(vocab.len(), config);
    let mut metrics_log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.instances.len()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, SHUFFLE_STREAM + epoch as u64));
        let mut pos_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, POSITION_STREAM + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut gs_sum, mut ge_sum) = (0.0, 0.0, 0.0);

        for batch in order.chunks(config.batch_size) {
            let mut acc = Gradients::zeros(config.max_seq_len, config.dim);
            for &i in batch {
                let inst = &data.instances[i];
                let positions = if config.objective == Objective::RandomPos {
                    let n = inst.ids.len();
                    let mut p = sample_positions(config.max_seq_len, config.t.max(n), &mut pos_rng)?;
                    p.truncate(n);
                    Some(p)
                } else {
                    None
                };
                let out = loss_and_gradients(&params, inst, config, data.bias[i].as_ref(), positions.as_deref())?;
                if !out.loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: out.loss,
                    });
                }
                loss_sum += out.loss;
                gs_sum += out.gate_start.unwrap_or(0.0);
                ge_sum += out.gate_end.unwrap_or(0.0);
                acc.accumulate(&out.grads);
            }
            acc.apply(&mut params, config.learning_rate, 1.0 / batch.len() as f64);
            step += 1;
        }
        if !params.all_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                loss: f64::NAN,
            });
        }
        let m = data.instances.len() as f64;
        let mixin = config.objective == Objective::LearnedMixin;
        metrics_log.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / m,
            mean_gate_start: mixin.then(|| gs_sum / m),
            mean_gate_end: mixin.then(|| ge_sum / m),
        });
    }

    Ok(TrainedModel {
        params,
        config: config.clone(),
        vocab,
        metrics_log,
        prior: prior.cloned(),
        dropped_overlong: data.dropped,
    })
}

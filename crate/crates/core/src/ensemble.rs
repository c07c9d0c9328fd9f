//! De-biasing objectives: bias product, learned-mixin, entropy regularization
//! and randomized positions, plus the log-softmax numerics they share.
//!
//! The bias term only ever enters the training loss. Prediction reads the
//! model's own log-probabilities.

use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PriorTransform;
use crate::error::{Error, Result};

/// Lower clamp applied to cosine similarities before normalization.
pub const ENTROPY_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanDistribution {
    pub start_logp: Vec<f64>,
    pub end_logp: Vec<f64>,
}

impl SpanDistribution {
    pub fn from_scores(start: &[f64], end: &[f64]) -> Result<Self> {
        Ok(SpanDistribution {
            start_logp: log_softmax(start)?,
            end_logp: log_softmax(end)?,
        })
    }

    pub fn len(&self) -> usize {
        self.start_logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_logp.is_empty()
    }
}

/// Additive log-space bias terms for one passage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTerm {
    pub start_terms: Vec<f64>,
    pub end_terms: Vec<f64>,
    pub transform: PriorTransform,
}

/// Affine scorer whose softplus-then-max-pool output is the mixing gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixinHead {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl MixinHead {
    pub fn zeros(dim: usize) -> Self {
        MixinHead {
            weight: Array1::zeros(dim),
            bias: 0.0,
        }
    }
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    Ok(())
}

/// Max-shifted log-softmax.
pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    check_finite(scores)?;
    let (arg, max) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, s)| if s > b.1 { (i, s) } else { b });
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, s)| (s - max).exp())
        .sum();
    let tail = rest.ln_1p();
    Ok(scores.iter().map(|s| (s - max) - tail).collect())
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    check_finite(scores)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} log-probabilities vs {} bias terms",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `softmax(logp + bias)`.
pub fn bias_product(logp: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    learned_mixin(logp, bias, 1.0)
}

/// `softmax(logp + g * bias)`.
pub fn learned_mixin(logp: &[f64], bias: &[f64], g: f64) -> Result<Vec<f64>> {
    same_len(logp, bias)?;
    let mixed: Vec<f64> = logp.iter().zip(bias).map(|(l, b)| l + g * b).collect();
    softmax(&mixed)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate value with the position that attains the max and its pre-activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateTrace {
    pub value: f64,
    pub argmax: usize,
    pub pre_activation: f64,
}

/// `g = max_i softplus(weight . x_i + bias)` over the rows of `hidden`.
pub fn gate_trace(hidden: ArrayView2<f64>, head: &MixinHead) -> GateTrace {
    let mut best = GateTrace {
        value: f64::NEG_INFINITY,
        argmax: 0,
        pre_activation: 0.0,
    };
    for (i, row) in hidden.rows().into_iter().enumerate() {
        let a = row.dot(&head.weight) + head.bias;
        let v = softplus(a);
        if v > best.value {
            best = GateTrace {
                value: v,
                argmax: i,
                pre_activation: a,
            };
        }
    }
    best
}

pub fn gate(hidden: ArrayView2<f64>, head: &MixinHead) -> f64 {
    gate_trace(hidden, head).value
}

/// Entropy of the clamped, sum-normalized similarities, with its gradient
/// with respect to the raw similarities.
pub fn entropy_with_grad(cos_sims: &[f64]) -> (f64, Vec<f64>) {
    let clamped: Vec<f64> = cos_sims.iter().map(|&c| c.max(ENTROPY_EPS)).collect();
    let total: f64 = clamped.iter().sum();
    let q: Vec<f64> = clamped.iter().map(|c| c / total).collect();
    let h = -q.iter().map(|&p| p * p.ln()).sum::<f64>();
    let grad = cos_sims
        .iter()
        .zip(&q)
        .map(|(&c, &p)| if c > ENTROPY_EPS { (-p.ln() - h) / total } else { 0.0 })
        .collect();
    (h, grad)
}

/// Entropy `H` of the normalized similarities; the loss adds `-lambda * H`.
pub fn entropy_regularizer(cos_sims: &[f64]) -> f64 {
    entropy_with_grad(cos_sims).0
}

/// `t` distinct indices drawn uniformly from `1..=max_seq_len`, ascending.
pub fn randomized_positions(max_seq_len: usize, t: usize, seed: u64) -> Result<Vec<usize>> {
    sample_positions(max_seq_len, t, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// [`randomized_positions`] drawing from a caller-owned generator.
pub fn sample_positions<R: Rng + ?Sized>(max_seq_len: usize, t: usize, rng: &mut R) -> Result<Vec<usize>> {
    if t == 0 || t > max_seq_len {
        return Err(Error::InvalidArgument(format!("t = {t} must lie in 1..={max_seq_len}")));
    }
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, max_seq_len, t)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

/// `-ln p[gold]`.
pub fn nll_loss(probs: &[f64], gold: usize) -> Result<f64> {
    let p = probs
        .get(gold)
        .ok_or_else(|| Error::InvalidArgument(format!("gold position {gold} outside 0..{}", probs.len())))?;
    Ok(-p.ln())
}

/// Loss of `softmax(scores + coef * bias)` at `gold`, with gradients with
/// respect to `scores` and `coef`.
pub struct EnsembleLoss {
    pub loss: f64,
    pub grad_scores: Vec<f64>,
    pub grad_coef: f64,
    pub probs: Vec<f64>,
}

pub fn ensemble_loss(scores: &[f64], bias: Option<&[f64]>, coef: f64, gold: usize) -> Result<EnsembleLoss> {
    let mixed: Vec<f64> = match bias {
        Some(b) => {
            same_len(scores, b)?;
            scores.iter().zip(b).map(|(s, b)| s + coef * b).collect()
        }
        None => scores.to_vec(),
    };
    let logp = log_softmax(&mixed)?;
    let loss = -*logp
        .get(gold)
        .ok_or_else(|| Error::InvalidArgument(format!("gold position {gold} outside 0..{}", scores.len())))?;
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let mut grad_scores = probs.clone();
    grad_scores[gold] -= 1.0;
    let grad_coef = match bias {
        Some(b) => grad_scores.iter().zip(b).map(|(g, b)| g * b).sum(),
        None => 0.0,
    };
    Ok(EnsembleLoss {
        loss,
        grad_scores,
        grad_coef,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn log_softmax_basics() {
        let l = log_softmax(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 0.5f64.ln(), epsilon = 1e-15);
        assert!(log_softmax(&[]).is_err());
    }

    #[test]
    fn log_softmax_large_gap() {
        // exact: [-ln(1 + e^-1000), -1000 - ln(1 + e^-1000)], and e^-1000 underflows
        let l = log_softmax(&[1000.0, 0.0]).unwrap();
        assert!(l.iter().all(|v| v.is_finite()));
        assert_eq!(l[0], 0.0);
        assert_eq!(l[1], -1000.0);
        // moderate gap against the ln_1p form
        let l = log_softmax(&[30.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l[0], -(-30f64).exp().ln_1p(), epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], -30.0 - (-30f64).exp().ln_1p(), epsilon = 1e-13);
    }

    #[test]
    fn bias_product_closed_form() {
        let logp = [0.5f64.ln(), 0.5f64.ln()];
        let p = bias_product(&logp, &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);

        let logp = log_softmax(&[0.3, -1.2, 2.0]).unwrap();
        let same = bias_product(&logp, &[0.0; 3]).unwrap();
        for (a, b) in same.iter().zip(&logp) {
            assert_abs_diff_eq!(*a, b.exp(), epsilon = 1e-15);
        }
        let shifted = bias_product(&logp, &[7.5; 3]).unwrap();
        for (a, b) in shifted.iter().zip(&same) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        assert!(bias_product(&logp, &[1.0]).is_err());
    }

    #[test]
    fn learned_mixin_closed_form() {
        let logp = [0.5f64.ln(), 0.5f64.ln()];
        let bias = [1.0, 0.0];
        let p = learned_mixin(&logp, &bias, 2.0).unwrap();
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(p[0], e2 / (e2 + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.1192, epsilon = 1e-4);
        let closed = learned_mixin(&logp, &bias, 0.0).unwrap();
        assert_abs_diff_eq!(closed[0], 0.5, epsilon = 1e-15);
        assert_eq!(
            learned_mixin(&logp, &bias, 1.0).unwrap(),
            bias_product(&logp, &bias).unwrap()
        );
        assert!(learned_mixin(&logp, &[1.0], 1.0).is_err());
    }

    #[test]
    fn gate_values() {
        let h = array![[1.0, -2.0], [0.5, 3.0], [0.0, 0.0]];
        let zero = MixinHead::zeros(2);
        assert_abs_diff_eq!(gate(h.view(), &zero), 2f64.ln(), epsilon = 1e-15);

        let head = MixinHead {
            weight: array![10.0, 0.0],
            bias: 0.0,
        };
        // softplus(10) = 10 + ln(1 + e^-10)
        let want = 10.0 + (-10f64).exp().ln_1p();
        assert_abs_diff_eq!(gate(h.view(), &head), want, epsilon = 1e-12);
        assert_abs_diff_eq!(want, 10.0000454, epsilon = 1e-7);

        let permuted = array![[0.0, 0.0], [1.0, -2.0], [0.5, 3.0]];
        assert_eq!(gate(h.view(), &head), gate(permuted.view(), &head));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_abs_diff_eq!(softplus(0.3), (1.0 + 0.3f64.exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn entropy_cases() {
        assert_abs_diff_eq!(entropy_regularizer(&[0.7; 4]), 4f64.ln(), epsilon = 1e-12);
        let point = entropy_regularizer(&[1.0, -0.5, 0.0, ENTROPY_EPS]);
        assert!(point < 1e-4, "{point}");
        let h = entropy_regularizer(&[0.8, 0.2]);
        let want = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert_abs_diff_eq!(h, want, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.5004, epsilon = 1e-4);
    }

    #[test]
    fn entropy_gradient_matches_differences() {
        let c = [0.3, 0.9, 0.05, 0.6, -0.2];
        let (_, g) = entropy_with_grad(&c);
        for i in 0..c.len() {
            let h = 1e-6;
            let mut up = c;
            let mut dn = c;
            up[i] += h;
            dn[i] -= h;
            let fd = (entropy_regularizer(&up) - entropy_regularizer(&dn)) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn positions() {
        let all = randomized_positions(16, 16, 1).unwrap();
        assert_eq!(all, (1..=16).collect::<Vec<_>>());
        assert!(randomized_positions(16, 17, 1).is_err());
        assert!(randomized_positions(16, 0, 1).is_err());
        let p = randomized_positions(512, 384, 1).unwrap();
        assert_eq!(p.len(), 384);
        assert_eq!(p, randomized_positions(512, 384, 1).unwrap());
    }

    #[test]
    fn nll() {
        assert_eq!(nll_loss(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(nll_loss(&[0.25; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert!(nll_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn aligned_bias_lowers_loss() {
        let logp = log_softmax(&[0.2, 0.1, -0.4]).unwrap();
        let plain = nll_loss(&logp.iter().map(|l| l.exp()).collect::<Vec<_>>(), 1).unwrap();
        let biased = nll_loss(&bias_product(&logp, &[0.0, 1.0, 0.0]).unwrap(), 1).unwrap();
        assert!(biased < plain);
    }

    #[test]
    fn ensemble_loss_gradients() {
        let s = [0.4, -1.0, 2.2, 0.1];
        let b = [0.3, 1.0, 0.0, 0.25];
        let g = 1.7;
        let out = ensemble_loss(&s, Some(&b), g, 1).unwrap();
        let f = |s: &[f64], g: f64| ensemble_loss(s, Some(&b), g, 1).unwrap().loss;
        let h = 1e-6;
        for i in 0..s.len() {
            let mut up = s;
            let mut dn = s;
            up[i] += h;
            dn[i] -= h;
            assert_abs_diff_eq!(out.grad_scores[i], (f(&up, g) - f(&dn, g)) / (2.0 * h), epsilon = 1e-8);
        }
        assert_abs_diff_eq!(out.grad_coef, (f(&s, g + h) - f(&s, g - h)) / (2.0 * h), epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn ensembles_are_distributions(
            scores in proptest::collection::vec(-30.0f64..30.0, 1..40),
            seed in any::<u64>(),
            g in 0.0f64..20.0,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bias: Vec<f64> = scores.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let logp = log_softmax(&scores).unwrap();
            for p in [bias_product(&logp, &bias).unwrap(), learned_mixin(&logp, &bias, g).unwrap()] {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|&x| x > 0.0 || scores.len() > 1));
            }
            let moved: Vec<f64> = bias.iter().map(|b| b + shift).collect();
            let a = learned_mixin(&logp, &bias, g).unwrap();
            let b = learned_mixin(&logp, &moved, g).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let l2 = log_softmax(&shifted).unwrap();
            for (x, y) in logp.iter().zip(&l2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn sampled_positions_are_sorted(seed in any::<u64>(), max in 1usize..600, frac in 0.0f64..1.0) {
            let t = ((max as f64 * frac) as usize).clamp(1, max);
            let p = randomized_positions(max, t, seed).unwrap();
            prop_assert_eq!(p.len(), t);
            prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(p[0] >= 1 && *p.last().unwrap() <= max);
        }
    }
}

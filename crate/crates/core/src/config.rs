//! Training configuration. Serializes to a flat `key = value` file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    None,
    BiasProduct,
    LearnedMixin,
    EntropyReg,
    RandomPos,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::None,
        Objective::BiasProduct,
        Objective::LearnedMixin,
        Objective::EntropyReg,
        Objective::RandomPos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::None => "none",
            Objective::BiasProduct => "bias_product",
            Objective::LearnedMixin => "learned_mixin",
            Objective::EntropyReg => "entropy_reg",
            Objective::RandomPos => "random_pos",
        }
    }

    /// Objectives that ensemble with an answer prior during training.
    pub fn needs_prior(self) -> bool {
        matches!(self, Objective::BiasProduct | Objective::LearnedMixin)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective {s:?}")))
    }
}

/// Start or end position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Start,
    End,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Start => "start",
            Target::End => "end",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(Target::Start),
            "end" => Ok(Target::End),
            _ => Err(Error::Config(format!("unknown target {s:?}"))),
        }
    }
}

/// How prior frequencies become additive ensemble terms.
///
/// `Literal` uses the frequency itself as the log-space term; `LogSmoothed`
/// uses `ln(freq + epsilon)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PriorTransform {
    Literal,
    LogSmoothed(f64),
}

impl PriorTransform {
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn apply(self, freq: f64) -> f64 {
        match self {
            PriorTransform::Literal => freq,
            PriorTransform::LogSmoothed(eps) => (freq + eps).ln(),
        }
    }
}

impl fmt::Display for PriorTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorTransform::Literal => f.write_str("literal"),
            PriorTransform::LogSmoothed(eps) => write!(f, "log_smoothed:{eps:e}"),
        }
    }
}

/// `literal`, `log_smoothed` or `log_smoothed:<epsilon>`.
impl FromStr for PriorTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown prior transform {s:?}"));
        match s.split_once(':') {
            None if s == "literal" => Ok(PriorTransform::Literal),
            None if s == "log_smoothed" => Ok(PriorTransform::LogSmoothed(Self::DEFAULT_EPSILON)),
            Some(("log_smoothed", eps)) => {
                let eps: f64 = eps.parse().map_err(|_| bad())?;
                if eps > 0.0 && eps.is_finite() {
                    Ok(PriorTransform::LogSmoothed(eps))
                } else {
                    Err(Error::Config(format!("epsilon must be positive, got {eps}")))
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Which answer prior feeds the ensemble objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Word,
    Sentence,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Word => "word",
            PriorKind::Sentence => "sentence",
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(PriorKind::Word),
            "sentence" => Ok(PriorKind::Sentence),
            _ => Err(Error::Config(format!("unknown prior kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Entropy-regularization scale.
    pub lambda: f64,
    /// Number of sampled positions for randomized positions.
    pub t: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Embedding width.
    pub dim: usize,
    pub max_answer_len: usize,
    pub prior_transform: PriorTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::None,
            lambda: 5.0,
            t: 384,
            max_seq_len: 512,
            seed: 0,
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 16,
            dim: 32,
            max_answer_len: 30,
            prior_transform: PriorTransform::Literal,
        }
    }
}

/// On-disk flat form.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    objective: String,
    lambda: f64,
    t: usize,
    max_seq_len: usize,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    dim: usize,
    max_answer_len: usize,
    prior_transform: String,
    #[serde(default = "default_eps")]
    prior_epsilon: f64,
}

fn default_eps() -> f64 {
    PriorTransform::DEFAULT_EPSILON
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive".into());
        }
        if self.t == 0 || self.t > self.max_seq_len {
            return fail(format!("t = {} must lie in 1..={}", self.t, self.max_seq_len));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.dim == 0 || self.max_answer_len == 0 {
            return fail("batch_size, dim and max_answer_len must be positive".into());
        }
        if let PriorTransform::LogSmoothed(eps) = self.prior_transform {
            if !(eps > 0.0 && eps.is_finite()) {
                return fail(format!("prior epsilon = {eps} must be positive"));
            }
        }
        Ok(())
    }

    fn to_flat(&self) -> FlatConfig {
        let (transform, eps) = match self.prior_transform {
            PriorTransform::Literal => ("literal", PriorTransform::DEFAULT_EPSILON),
            PriorTransform::LogSmoothed(e) => ("log_smoothed", e),
        };
        FlatConfig {
            objective: self.objective.name().to_string(),
            lambda: self.lambda,
            t: self.t,
            max_seq_len: self.max_seq_len,
            seed: self.seed,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            dim: self.dim,
            max_answer_len: self.max_answer_len,
            prior_transform: transform.to_string(),
            prior_epsilon: eps,
        }
    }

    fn from_flat(flat: FlatConfig) -> Result<Self> {
        let prior_transform = match flat.prior_transform.as_str() {
            "literal" => PriorTransform::Literal,
            "log_smoothed" => PriorTransform::LogSmoothed(flat.prior_epsilon),
            other => return Err(Error::Config(format!("unknown prior_transform {other:?}"))),
        };
        let cfg = TrainConfig {
            objective: flat.objective.parse()?,
            lambda: flat.lambda,
            t: flat.t,
            max_seq_len: flat.max_seq_len,
            seed: flat.seed,
            epochs: flat.epochs,
            learning_rate: flat.learning_rate,
            batch_size: flat.batch_size,
            dim: flat.dim,
            max_answer_len: flat.max_answer_len,
            prior_transform,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(&self.to_flat()).expect("flat config always serializes")
    }

    pub fn from_kv_str(s: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(s).map_err(|e| Error::Config(format!("bad config file: {e}")))?;
        Self::from_flat(flat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&s)
    }
}

impl Serialize for TrainConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_flat().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        TrainConfig::from_flat(FlatConfig::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_names() {
        let names: Vec<&str> = Objective::ALL.iter().map(|o| o.name()).collect();
        assert_eq!(
            names,
            ["none", "bias_product", "learned_mixin", "entropy_reg", "random_pos"]
        );
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("mixin".parse::<Objective>().is_err());
    }

    #[test]
    fn defaults() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.max_seq_len, cfg.t), (512, 384));
        assert_eq!((cfg.learning_rate, cfg.batch_size, cfg.dim), (0.05, 16, 32));
        assert_eq!(cfg.lambda, 5.0);
        assert_eq!(cfg.prior_transform, PriorTransform::Literal);
        cfg.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let cfg = TrainConfig {
            objective: Objective::LearnedMixin,
            prior_transform: PriorTransform::LogSmoothed(1e-8),
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let text = cfg.to_kv_string();
        assert!(text.contains("objective = \"learned_mixin\""));
        assert_eq!(TrainConfig::from_kv_str(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = TrainConfig {
            t: 513,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.t = 0;
        assert!(cfg.validate().is_err());
        cfg.t = 512;
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
        let text = TrainConfig::default().to_kv_string().replace("literal", "cubic");
        assert!(TrainConfig::from_kv_str(&text).is_err());
    }

    #[test]
    fn transform_names() {
        for t in [
            PriorTransform::Literal,
            PriorTransform::LogSmoothed(1e-8),
            PriorTransform::LogSmoothed(0.5),
        ] {
            assert_eq!(t.to_string().parse::<PriorTransform>().unwrap(), t);
        }
        assert_eq!(
            "log_smoothed".parse::<PriorTransform>().unwrap(),
            PriorTransform::LogSmoothed(1e-8)
        );
        assert!("log_smoothed:-1".parse::<PriorTransform>().is_err());
        assert!("log".parse::<PriorTransform>().is_err());
        assert_eq!("word".parse::<PriorKind>().unwrap().to_string(), "word");
    }

    #[test]
    fn transforms() {
        assert_eq!(PriorTransform::Literal.apply(0.25), 0.25);
        let v = PriorTransform::LogSmoothed(1e-8).apply(0.0);
        assert!((v - (1e-8f64).ln()).abs() < 1e-12);
    }
}

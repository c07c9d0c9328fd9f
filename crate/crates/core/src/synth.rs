//! Marker-question synthetic corpora.
//!
//! Every sentence opens with a capitalized word and carries one or more facts
//! `marker answer...` among filler words. A question names one marker; the
//! gold answer is the token run that follows it. Markers are unique within a
//! passage, so every question is answerable from content wherever the fact
//! sits.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Transform};
use crate::error::{Error, Result};
use crate::mix_seed;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const MARKER_BASE: usize = 100_000;
const OPENER_BASE: usize = 200_000;
const OPENERS: usize = 16;

/// Which sentence holds the questioned fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPlacement {
    Uniform,
    FixedK(usize),
}

impl fmt::Display for AnswerPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerPlacement::Uniform => f.write_str("uniform"),
            AnswerPlacement::FixedK(k) => write!(f, "fixed_k({k})"),
        }
    }
}

impl FromStr for AnswerPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(AnswerPlacement::Uniform);
        }
        let k = s
            .strip_prefix("fixed_k(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("fixed_k:"))
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown answer placement {s:?}")))?;
        Ok(AnswerPlacement::FixedK(k))
    }
}

/// Generator settings. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub sentences_per_passage: (usize, usize),
    /// Words per sentence, excluding the closing period.
    pub tokens_per_sentence: (usize, usize),
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub answer_placement: AnswerPlacement,
    pub seed: u64,
    pub facts_per_sentence: (usize, usize),
    pub answer_len: usize,
    /// Number of distinct marker words.
    pub marker_pool: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_examples: 2000,
            sentences_per_passage: (4, 4),
            tokens_per_sentence: (8, 12),
            vocab_size: 200,
            answer_placement: AnswerPlacement::Uniform,
            seed: 0,
            facts_per_sentence: (3, 3),
            answer_len: 1,
            marker_pool: 16,
        }
    }
}

fn pseudo_word(mut i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        let syl = i % n;
        i /= n;
        w.push(CONSONANTS[syl / VOWELS.len()] as char);
        w.push(VOWELS[syl % VOWELS.len()] as char);
    }
    w
}

pub fn filler_word(i: usize) -> String {
    pseudo_word(i)
}

pub fn marker_word(i: usize) -> String {
    pseudo_word(MARKER_BASE + i)
}

fn opener_word(i: usize) -> String {
    let w = pseudo_word(OPENER_BASE + i);
    let mut c = w.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

enum Unit {
    Filler,
    Fact(usize),
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, (lo, hi)) in [
            ("sentences_per_passage", self.sentences_per_passage),
            ("tokens_per_sentence", self.tokens_per_sentence),
            ("facts_per_sentence", self.facts_per_sentence),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range {lo}..={hi} is empty or starts at 0"));
            }
        }
        if self.vocab_size < 10 {
            return bad(format!("vocab_size {} must be at least 10", self.vocab_size));
        }
        if self.answer_len == 0 {
            return bad("answer_len must be positive".into());
        }
        let fact_width = 1 + self.answer_len;
        if self.tokens_per_sentence.0 < 1 + self.facts_per_sentence.1 * fact_width {
            return bad(format!(
                "sentences of {} words cannot hold an opener and {} facts of {fact_width} words",
                self.tokens_per_sentence.0, self.facts_per_sentence.1
            ));
        }
        let max_facts = self.sentences_per_passage.1 * self.facts_per_sentence.1;
        if self.marker_pool < max_facts {
            return bad(format!(
                "marker_pool {} below {max_facts} facts per passage",
                self.marker_pool
            ));
        }
        if self.vocab_size <= max_facts * self.answer_len {
            return bad(format!("vocab_size {} leaves no filler words", self.vocab_size));
        }
        if let AnswerPlacement::FixedK(k) = self.answer_placement {
            if k == 0 || k > self.sentences_per_passage.0 {
                return bad(format!(
                    "fixed_k({k}) needs every passage to have at least {k} sentences"
                ));
            }
        }
        Ok(())
    }

    /// Generates `n_examples` passages named `{split}-NNNNN`.
    pub fn generate(&self, split: &str) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let examples = (0..self.n_examples)
            .map(|i| self.example(format!("{split}-{i:05}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::new(format!("synthetic-{split}"), examples);
        ds.provenance.push(Transform::Synthetic {
            split: split.to_string(),
            placement: self.answer_placement.to_string(),
            seed: self.seed,
        });
        ds.validate()?;
        Ok(ds)
    }

    fn example(&self, id: String, rng: &mut ChaCha8Rng) -> Result<Example> {
        let (slo, shi) = self.sentences_per_passage;
        let n_sent = rng.random_range(slo..=shi);
        let target = match self.answer_placement {
            AnswerPlacement::Uniform => rng.random_range(1..=n_sent),
            AnswerPlacement::FixedK(k) => k,
        };
        let lens: Vec<usize> = (0..n_sent)
            .map(|_| rng.random_range(self.tokens_per_sentence.0..=self.tokens_per_sentence.1))
            .collect();
        let facts: Vec<usize> = (0..n_sent)
            .map(|_| rng.random_range(self.facts_per_sentence.0..=self.facts_per_sentence.1))
            .collect();
        let total: usize = facts.iter().sum();

        let markers = rand::seq::index::sample(rng, self.marker_pool, total).into_vec();
        let answer_ids = rand::seq::index::sample(rng, self.vocab_size, total * self.answer_len).into_vec();
        let reserved: BTreeSet<usize> = answer_ids.iter().copied().collect();
        let fillers: Vec<usize> = (0..self.vocab_size).filter(|i| !reserved.contains(i)).collect();

        let asked_sentence = target - 1;
        let first_fact: usize = facts[..asked_sentence].iter().sum();
        let asked = first_fact + rng.random_range(0..facts[asked_sentence]);

        let mut words: Vec<String> = Vec::new();
        let mut context = String::new();
        let mut answer_start = None;
        let mut fact = 0;
        for s in 0..n_sent {
            let mut units: Vec<Unit> = (0..facts[s]).map(|j| Unit::Fact(fact + j)).collect();
            fact += facts[s];
            let n_fill = lens[s] - 1 - facts[s] * (1 + self.answer_len);
            units.extend((0..n_fill).map(|_| Unit::Filler));
            units.shuffle(rng);

            words.clear();
            words.push(opener_word(rng.random_range(0..OPENERS)));
            let mut answer_word = None;
            for u in units {
                match u {
                    Unit::Filler => words.push(filler_word(*fillers.choose(rng).expect("fillers"))),
                    Unit::Fact(f) => {
                        words.push(marker_word(markers[f]));
                        if f == asked {
                            answer_word = Some(words.len());
                        }
                        for a in 0..self.answer_len {
                            words.push(filler_word(answer_ids[f * self.answer_len + a]));
                        }
                    }
                }
            }
            if !context.is_empty() {
                context.push(' ');
            }
            for (w, word) in words.iter().enumerate() {
                if w > 0 {
                    context.push(' ');
                }
                if answer_word == Some(w) {
                    answer_start = Some(context.chars().count());
                }
                context.push_str(word);
            }
            context.push('.');
        }

        let answer_text = (0..self.answer_len)
            .map(|a| filler_word(answer_ids[asked * self.answer_len + a]))
            .collect::<Vec<_>>()
            .join(" ");
        let question = format!("What follows {}?", marker_word(markers[asked]));
        let start = answer_start.expect("asked fact placed");
        let ex = Example::build(id, context, question, &[(answer_text, start)])?;
        if ex.train_sentence_index() != target || ex.sentences.len() != n_sent {
            return Err(Error::Rejected {
                id: ex.id.clone(),
                reason: "sentence segmentation disagrees with the generated layout".into(),
            });
        }
        Ok(ex)
    }
}

/// Training caches and a held-out development set from one spec.
pub struct SyntheticSuite {
    pub full: Dataset,
    pub fixed: Vec<(usize, Dataset)>,
    pub dev: Dataset,
}

/// `full` uses `spec.placement` (normally uniform), `fixed` one corpus per
/// `k`, and `dev` `n_dev` uniform examples; all from independent seed streams.
pub fn generate_suite(spec: &SyntheticSpec, ks: &[usize], n_dev: usize) -> Result<SyntheticSuite> {
    let full = spec.generate("train")?;
    let fixed = ks
        .iter()
        .map(|&k| {
            let s = SyntheticSpec {
                answer_placement: AnswerPlacement::FixedK(k),
                seed: mix_seed(spec.seed, 100 + k as u64),
                ..spec.clone()
            };
            s.generate(&format!("fixed_k{k}")).map(|d| (k, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let dev = SyntheticSpec {
        n_examples: n_dev,
        answer_placement: AnswerPlacement::Uniform,
        seed: mix_seed(spec.seed, 1),
        ..spec.clone()
    }
    .generate("dev")?;
    Ok(SyntheticSuite { full, fixed, dev })
}

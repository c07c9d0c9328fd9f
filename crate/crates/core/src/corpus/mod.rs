//! Extractive-QA corpora: tokens, sentences, aligned answers and the dataset
//! transformations used to build positionally biased training sets.

mod cache;
mod loaders;
mod text;
mod transform;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{read_cache, write_cache, CACHE_FORMAT};
pub use loaders::{load_mrqa, load_squad};
pub use text::{char_slice, is_punctuation, normalize_whitespace, segment_sentences, tokenize, ABBREVIATIONS};
pub use transform::{
    reorder_sentences, select_first_answer, shuffle_sentences, shuffle_sentences_with_order, truncate_first_sentence,
    truncate_passage,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Codepoint offset of the first character.
    pub char_start: usize,
    /// Exclusive codepoint offset.
    pub char_end: usize,
    pub position: usize,
}

/// A contiguous token range `[token_start, token_end)` with a 1-based index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub token_start: usize,
    pub token_end: usize,
}

impl Sentence {
    pub fn contains(&self, token: usize) -> bool {
        (self.token_start..self.token_end).contains(&token)
    }

    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end == self.token_start
    }
}

/// Gold answer with an inclusive token span.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub char_start: usize,
    pub token_start: usize,
    pub token_end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub context: String,
    pub question: String,
    pub passage_tokens: Vec<Token>,
    pub sentences: Vec<Sentence>,
    pub question_tokens: Vec<Token>,
    pub answers: Vec<Answer>,
    pub train_answer_index: usize,
}

impl Example {
    /// Tokenizes and segments `context`, then aligns every `(text, char_start)` answer.
    /// The earliest answer becomes the training answer.
    pub fn build(
        id: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        answers: &[(String, usize)],
    ) -> Result<Example> {
        let id = id.into();
        let context = context.into();
        let question = question.into();
        let passage_tokens = tokenize(&context);
        let sentences = segment_sentences(&passage_tokens, &context);
        Self::from_parts(id, context, question, passage_tokens, sentences, answers)
    }

    pub(crate) fn from_parts(
        id: String,
        context: String,
        question: String,
        passage_tokens: Vec<Token>,
        sentences: Vec<Sentence>,
        answers: &[(String, usize)],
    ) -> Result<Example> {
        if answers.is_empty() {
            return Err(Error::Rejected {
                id,
                reason: "no gold answers".into(),
            });
        }
        let aligned = answers
            .iter()
            .map(|(text, start)| align_answer(&id, &context, &passage_tokens, text, *start))
            .collect::<Result<Vec<_>>>()?;
        let question_tokens = tokenize(&question);
        let ex = Example {
            id,
            context,
            question,
            passage_tokens,
            sentences,
            question_tokens,
            answers: aligned,
            train_answer_index: 0,
        };
        Ok(select_first_answer(&ex))
    }

    pub fn train_answer(&self) -> &Answer {
        &self.answers[self.train_answer_index]
    }

    pub fn len(&self) -> usize {
        self.passage_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_tokens.is_empty()
    }

    /// 1-based sentence index of the training answer.
    pub fn train_sentence_index(&self) -> usize {
        answer_sentence_index(self, self.train_answer())
    }

    /// Passage text covered by the inclusive token span.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let (a, b) = (&self.passage_tokens[start], &self.passage_tokens[end]);
        char_slice(&self.context, a.char_start, b.char_end)
    }

    /// Sentence index (1-based) for every passage token.
    pub fn sentence_of_tokens(&self) -> Vec<usize> {
        let mut out = vec![0; self.passage_tokens.len()];
        for s in &self.sentences {
            for slot in &mut out[s.token_start..s.token_end] {
                *slot = s.index;
            }
        }
        out
    }

    /// Checks the structural invariants of tokens, sentences and answers.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Rejected {
            id: self.id.clone(),
            reason,
        };
        let mut last_end = 0;
        for (i, t) in self.passage_tokens.iter().enumerate() {
            if t.position != i || t.char_start >= t.char_end || t.char_start < last_end {
                return Err(bad(format!("malformed token {i}")));
            }
            last_end = t.char_end;
        }
        let mut next = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.index != i + 1 || s.token_start != next || s.token_end <= s.token_start {
                return Err(bad(format!("sentence {} does not partition the passage", i + 1)));
            }
            next = s.token_end;
        }
        if next != self.passage_tokens.len() {
            return Err(bad("sentences do not cover the passage".into()));
        }
        if self.answers.is_empty() || self.train_answer_index >= self.answers.len() {
            return Err(bad("invalid training answer index".into()));
        }
        for a in &self.answers {
            if a.token_start > a.token_end || a.token_end >= self.passage_tokens.len() {
                return Err(bad(format!("answer {:?} outside the passage", a.text)));
            }
        }
        Ok(())
    }
}

/// Record of one transformation applied to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    LoadSquad {
        source: String,
    },
    LoadMrqa {
        source: String,
        skipped_no_answer: usize,
    },
    Synthetic {
        split: String,
        placement: String,
        seed: u64,
    },
    Subset {
        k: usize,
    },
    SubsetAtLeast {
        k_min: usize,
    },
    Sample {
        n: usize,
        seed: u64,
    },
    TruncateFirstSentence {
        rejected: usize,
    },
    ShuffleSentences {
        seed: u64,
    },
    TruncatePassage {
        max_words: usize,
        dropped: usize,
    },
    SelectFirstAnswer,
    DropOverlong {
        max_seq_len: usize,
        dropped: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub provenance: Vec<Transform>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Self {
        Dataset {
            name: name.into(),
            examples,
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// New dataset with the same name and provenance plus `step`.
    pub fn derive(&self, examples: Vec<Example>, step: Transform) -> Dataset {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Dataset {
            name: self.name.clone(),
            examples,
            provenance,
        }
    }

    /// Fails on duplicate ids or an example violating its invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for ex in &self.examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Input(format!("duplicate example id {}", ex.id)));
            }
            ex.validate()?;
        }
        Ok(())
    }

    pub fn truncate_first_sentence(&self) -> Dataset {
        let mut rejected = 0;
        let examples = self
            .examples
            .iter()
            .filter_map(|ex| match truncate_first_sentence(ex) {
                Ok(t) => Some(t),
                Err(_) => {
                    rejected += 1;
                    None
                }
            })
            .collect();
        self.derive(examples, Transform::TruncateFirstSentence { rejected })
    }

    /// Shuffles every example with a per-example seed derived from `seed` and its index.
    pub fn shuffle_sentences(&self, seed: u64) -> Dataset {
        let examples = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, ex)| shuffle_sentences(ex, crate::mix_seed(seed, i as u64)))
            .collect();
        self.derive(examples, Transform::ShuffleSentences { seed })
    }

    pub fn truncate_passages(&self, max_words: usize) -> Dataset {
        let examples: Vec<Example> = self
            .examples
            .iter()
            .filter_map(|ex| truncate_passage(ex, max_words))
            .collect();
        let dropped = self.len() - examples.len();
        self.derive(examples, Transform::TruncatePassage { max_words, dropped })
    }

    pub fn select_first_answers(&self) -> Dataset {
        let examples = self.examples.iter().map(select_first_answer).collect();
        self.derive(examples, Transform::SelectFirstAnswer)
    }
}

/// Aligns a character-level answer to the tokens it intersects.
pub fn align_answer(id: &str, context: &str, tokens: &[Token], answer_text: &str, char_start: usize) -> Result<Answer> {
    let len = answer_text.chars().count();
    let char_end = char_start + len;
    let fail = || Error::Alignment {
        ids: vec![id.to_string()],
    };
    let found = char_slice(context, char_start, char_end);
    if found.chars().count() != len || normalize_whitespace(&found) != normalize_whitespace(answer_text) {
        return Err(fail());
    }
    let mut hits = tokens
        .iter()
        .filter(|t| t.char_start < char_end && t.char_end > char_start)
        .map(|t| t.position);
    let token_start = hits.next().ok_or_else(fail)?;
    let token_end = hits.next_back().unwrap_or(token_start);
    Ok(Answer {
        text: answer_text.to_string(),
        char_start,
        token_start,
        token_end,
    })
}

/// 1-based index of the sentence containing the answer's start token.
pub fn answer_sentence_index(example: &Example, answer: &Answer) -> usize {
    example
        .sentences
        .iter()
        .find(|s| s.contains(answer.token_start))
        .map(|s| s.index)
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok_texts(ex: &Example, a: &Answer) -> String {
        ex.span_text(a.token_start, a.token_end)
    }

    #[test]
    fn exact_single_token() {
        let ctx = "one two three four five six seven Denver nine";
        let toks = tokenize(ctx);
        let a = align_answer("q", ctx, &toks, "Denver", 34).unwrap();
        assert_eq!((a.token_start, a.token_end), (7, 7));
        assert_eq!(a.char_start, 34);
    }

    #[test]
    fn multi_token() {
        let ctx = "a b c Denver Broncos won d";
        let toks = tokenize(ctx);
        let a = align_answer("q", ctx, &toks, "Denver Broncos won", 6).unwrap();
        assert_eq!((a.token_start, a.token_end), (3, 5));
    }

    #[test]
    fn mid_token_start_uses_containing_token() {
        let ctx = "a well-known fact";
        let toks = tokenize(ctx);
        // "known" starts inside the hyphenated token 1
        let a = align_answer("q", ctx, &toks, "known", 7).unwrap();
        // brute-force oracle: tokens whose [start, end) intersects [7, 12)
        let oracle: Vec<usize> = toks
            .iter()
            .filter(|t| (t.char_start..t.char_end).any(|c| (7..12).contains(&c)))
            .map(|t| t.position)
            .collect();
        assert_eq!(oracle, vec![1]);
        assert_eq!((a.token_start, a.token_end), (1, 1));
    }

    #[test]
    fn misaligned_answer_names_id() {
        let ctx = "a b c";
        let toks = tokenize(ctx);
        let err = align_answer("qid-7", ctx, &toks, "zzz", 0).unwrap_err();
        assert!(err.to_string().contains("qid-7"));
        let err = align_answer("qid-8", ctx, &toks, " ", 1).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn whitespace_normalized_match() {
        let ctx = "New  York is big.";
        let toks = tokenize(ctx);
        let a = align_answer("q", ctx, &toks, "New  York", 0).unwrap();
        assert_eq!((a.token_start, a.token_end), (0, 1));
    }

    #[test]
    fn sentence_index_uses_start_token() {
        let ctx = "A a. B b. C c ends. D d.";
        let ex = Example::build("x", ctx, "q?", &[("ends. D".to_string(), 14)]).unwrap();
        assert_eq!(ex.sentences.len(), 4);
        assert_eq!(ex.train_sentence_index(), 3);
        assert_eq!(tok_texts(&ex, ex.train_answer()), "ends. D");

        let ex = Example::build("y", ctx, "q?", &[("A".to_string(), 0)]).unwrap();
        assert_eq!(ex.train_sentence_index(), 1);
        let ex = Example::build("z", "only one here", "q", &[("here".into(), 9)]).unwrap();
        assert_eq!(ex.train_sentence_index(), 1);
    }

    #[test]
    fn build_validates() {
        let ex = Example::build("x", "A a. B b.", "q", &[("b".into(), 7)]).unwrap();
        ex.validate().unwrap();
        assert!(Example::build("x", "A a.", "q", &[]).is_err());
    }
}

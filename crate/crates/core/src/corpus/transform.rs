use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{char_slice, Answer, Example, Sentence, Token};
use crate::error::{Error, Result};

/// Keeps the leading sentences `[0, keep)` and the answers inside them.
/// Returns `None` when the training answer does not survive.
fn keep_leading_sentences(example: &Example, keep: usize) -> Option<Example> {
    if keep == 0 {
        return None;
    }
    if keep >= example.sentences.len() {
        return Some(example.clone());
    }
    let cut = example.sentences[keep - 1].token_end;
    let train = example.train_answer();
    if train.token_end >= cut {
        return None;
    }
    let mut train_answer_index = 0;
    let mut answers = Vec::new();
    for (i, a) in example.answers.iter().enumerate() {
        if a.token_end < cut {
            if i == example.train_answer_index {
                train_answer_index = answers.len();
            }
            answers.push(a.clone());
        }
    }
    let end_char = example.passage_tokens[cut - 1].char_end;
    Some(Example {
        id: example.id.clone(),
        context: char_slice(&example.context, 0, end_char),
        question: example.question.clone(),
        passage_tokens: example.passage_tokens[..cut].to_vec(),
        sentences: example.sentences[..keep].to_vec(),
        question_tokens: example.question_tokens.clone(),
        answers,
        train_answer_index,
    })
}

/// Cuts the passage down to its first sentence.
///
/// Fails when the training answer is not entirely inside sentence 1.
pub fn truncate_first_sentence(example: &Example) -> Result<Example> {
    keep_leading_sentences(example, 1).ok_or_else(|| Error::Rejected {
        id: example.id.clone(),
        reason: "training answer is not in the first sentence".into(),
    })
}

/// Cuts the passage at the last sentence boundary at or before `max_words`
/// tokens. Returns `None` when the training answer would be cut off (or no
/// whole sentence fits).
pub fn truncate_passage(example: &Example, max_words: usize) -> Option<Example> {
    let keep = example
        .sentences
        .iter()
        .take_while(|s| s.token_end <= max_words)
        .count();
    keep_leading_sentences(example, keep)
}

/// Marks the earliest answer (by `char_start`, ties to the lowest index) as the
/// training answer.
pub fn select_first_answer(example: &Example) -> Example {
    let best = example
        .answers
        .iter()
        .enumerate()
        .min_by_key(|(i, a)| (a.char_start, *i))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Example {
        train_answer_index: best,
        ..example.clone()
    }
}

/// Rebuilds `example` with its sentences in `order` (`order[new] = old`,
/// 0-based). Sentences that stay adjacent keep their original separator;
/// others are joined by a single space. Fails if an answer spanning several
/// sentences would be split apart.
pub fn reorder_sentences(example: &Example, order: &[usize]) -> Result<Example> {
    let n = example.sentences.len();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
        return Err(Error::InvalidArgument(format!(
            "sentence order {order:?} is not a permutation of 0..{n}"
        )));
    }
    if n == 0 {
        return Ok(example.clone());
    }
    let toks = &example.passage_tokens;
    let span_chars = |s: &Sentence| (toks[s.token_start].char_start, toks[s.token_end - 1].char_end);

    let mut context = String::new();
    let mut context_len = 0;
    let mut passage_tokens = Vec::with_capacity(toks.len());
    let mut sentences = Vec::with_capacity(n);
    // old sentence index -> (char shift, token shift)
    let mut shifts = vec![(0isize, 0isize); n];
    let mut new_pos_of = vec![0; n];
    for (new_idx, &old) in order.iter().enumerate() {
        let s = example.sentences[old];
        let (c0, c1) = span_chars(&s);
        if new_idx > 0 {
            let prev = order[new_idx - 1];
            let sep = if prev + 1 == old {
                char_slice(&example.context, span_chars(&example.sentences[prev]).1, c0)
            } else {
                " ".to_string()
            };
            context_len += sep.chars().count();
            context.push_str(&sep);
        }
        let char_shift = context_len as isize - c0 as isize;
        let token_shift = passage_tokens.len() as isize - s.token_start as isize;
        shifts[old] = (char_shift, token_shift);
        new_pos_of[old] = new_idx;
        let token_start = passage_tokens.len();
        for t in &toks[s.token_start..s.token_end] {
            passage_tokens.push(Token {
                text: t.text.clone(),
                char_start: (t.char_start as isize + char_shift) as usize,
                char_end: (t.char_end as isize + char_shift) as usize,
                position: passage_tokens.len(),
            });
        }
        let text = char_slice(&example.context, c0, c1);
        context_len += c1 - c0;
        context.push_str(&text);
        sentences.push(Sentence {
            index: new_idx + 1,
            token_start,
            token_end: passage_tokens.len(),
        });
    }

    let sentence_of = example.sentence_of_tokens();
    let mut answers = Vec::with_capacity(example.answers.len());
    for a in &example.answers {
        let first = sentence_of[a.token_start] - 1;
        let last = sentence_of[a.token_end] - 1;
        let contiguous = (first..=last).all(|s| new_pos_of[s] == new_pos_of[first] + (s - first));
        if !contiguous {
            return Err(Error::Rejected {
                id: example.id.clone(),
                reason: format!("answer {:?} would be split by the reordering", a.text),
            });
        }
        let (char_shift, token_shift) = shifts[first];
        answers.push(Answer {
            text: a.text.clone(),
            char_start: (a.char_start as isize + char_shift) as usize,
            token_start: (a.token_start as isize + token_shift) as usize,
            token_end: (a.token_end as isize + token_shift) as usize,
        });
    }

    Ok(Example {
        id: example.id.clone(),
        context,
        question: example.question.clone(),
        passage_tokens,
        sentences,
        question_tokens: example.question_tokens.clone(),
        answers,
        train_answer_index: example.train_answer_index,
    })
}

/// Seeded sentence shuffle. Returns the shuffled example and the order used
/// (`order[new] = old`). Sentences joined by a multi-sentence answer move as
/// one block so every answer keeps its text.
pub fn shuffle_sentences_with_order(example: &Example, seed: u64) -> (Example, Vec<usize>) {
    let n = example.sentences.len();
    // glued[i]: sentence i and i + 1 must stay together
    let mut glued = vec![false; n.saturating_sub(1)];
    let sentence_of = example.sentence_of_tokens();
    for a in &example.answers {
        let first = sentence_of[a.token_start] - 1;
        let last = sentence_of[a.token_end] - 1;
        for g in &mut glued[first..last] {
            *g = true;
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if i > 0 && glued[i - 1] {
            blocks.last_mut().unwrap().push(i);
        } else {
            blocks.push(vec![i]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blocks.shuffle(&mut rng);
    let order: Vec<usize> = blocks.into_iter().flatten().collect();
    let shuffled = reorder_sentences(example, &order).expect("blocks keep answers contiguous");
    (shuffled, order)
}

pub fn shuffle_sentences(example: &Example, seed: u64) -> Example {
    shuffle_sentences_with_order(example, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{answer_sentence_index, normalize_whitespace};
    use proptest::prelude::*;

    fn four_sentences(answer: &str) -> Example {
        let ctx = "Alpha one two. Beta three four. Gamma five six. Delta seven eight.";
        let start = ctx.find(answer).unwrap();
        Example::build("e", ctx, "which?", &[(answer.to_string(), start)]).unwrap()
    }

    fn sentence_texts(ex: &Example) -> Vec<String> {
        ex.sentences
            .iter()
            .map(|s| ex.span_text(s.token_start, s.token_end - 1))
            .collect()
    }

    #[test]
    fn first_sentence_truncation() {
        let ex = four_sentences("one two");
        let t = truncate_first_sentence(&ex).unwrap();
        assert_eq!(t.sentences.len(), 1);
        assert_eq!(t.context, "Alpha one two.");
        assert_eq!(t.train_answer().text, ex.train_answer().text);
        assert_eq!(
            t.span_text(t.train_answer().token_start, t.train_answer().token_end),
            "one two"
        );
        t.validate().unwrap();

        let single = Example::build("s", "Only one.", "q", &[("one".into(), 5)]).unwrap();
        assert_eq!(truncate_first_sentence(&single).unwrap(), single);

        let later = four_sentences("five");
        assert!(matches!(truncate_first_sentence(&later), Err(Error::Rejected { .. })));
    }

    #[test]
    fn truncation_drops_outside_answers() {
        let ctx = "Alpha one two. Beta three four.";
        let ex = Example::build("e", ctx, "q", &[("one".into(), 6), ("three".into(), 20)]).unwrap();
        let t = truncate_first_sentence(&ex).unwrap();
        assert_eq!(t.answers.len(), 1);
        assert_eq!(t.train_answer_index, 0);
    }

    #[test]
    fn passage_truncation() {
        let ex = four_sentences("five");
        // sentences are 4 tokens each: boundaries at 4, 8, 12, 16
        assert_eq!(truncate_passage(&ex, 300).unwrap(), ex);
        let t = truncate_passage(&ex, 13).unwrap();
        assert_eq!(t.len(), 12);
        assert_eq!(t.sentences.len(), 3);
        assert!(truncate_passage(&ex, 9).is_none());
        assert!(truncate_passage(&ex, 3).is_none());
    }

    #[test]
    fn passage_truncation_cuts_at_sentence_end() {
        let ex = four_sentences("one");
        for max in 1..20 {
            if let Some(t) = truncate_passage(&ex, max) {
                // boundary oracle: the cut is a sentence end of the original and <= max
                let ends: Vec<usize> = ex.sentences.iter().map(|s| s.token_end).collect();
                assert!(ends.contains(&t.len()));
                assert!(t.len() <= max);
                t.validate().unwrap();
            } else {
                assert!(max < 4);
            }
        }
    }

    #[test]
    fn first_answer_selection() {
        let ctx = "a b c d e f g h i j k l m n o p q r s t u v w x y z";
        let ex = Example::build("e", ctx, "q", &[("u".into(), 40), ("g".into(), 12)]).unwrap();
        assert_eq!(select_first_answer(&ex).train_answer_index, 1);
        let one = Example::build("e", ctx, "q", &[("g".into(), 12)]).unwrap();
        assert_eq!(select_first_answer(&one).train_answer_index, 0);
        let tie = Example::build("e", ctx, "q", &[("g h".into(), 12), ("g".into(), 12)]).unwrap();
        assert_eq!(select_first_answer(&tie).train_answer_index, 0);
    }

    #[test]
    fn shuffle_is_deterministic_and_tracks_answer() {
        let ex = four_sentences("five six");
        let (a, order) = shuffle_sentences_with_order(&ex, 11);
        let (b, _) = shuffle_sentences_with_order(&ex, 11);
        assert_eq!(a, b);
        let mut texts = sentence_texts(&a);
        let mut orig = sentence_texts(&ex);
        texts.sort();
        orig.sort();
        assert_eq!(texts, orig);
        // original answer sentence is old index 2
        let new_pos = order.iter().position(|&o| o == 2).unwrap() + 1;
        assert_eq!(answer_sentence_index(&a, a.train_answer()), new_pos);
        assert_eq!(a.train_answer().text, "five six");
        a.validate().unwrap();
    }

    #[test]
    fn multi_sentence_answer_moves_as_block() {
        let ex = four_sentences("six. Delta");
        for seed in 0..20 {
            let (s, order) = shuffle_sentences_with_order(&ex, seed);
            let p = order.iter().position(|&o| o == 2).unwrap();
            assert_eq!(order[p + 1], 3);
            let a = s.train_answer();
            assert_eq!(s.span_text(a.token_start, a.token_end), "six. Delta");
        }
    }

    #[test]
    fn reorder_rejects_bad_permutation() {
        let ex = four_sentences("one");
        assert!(reorder_sentences(&ex, &[0, 0, 1, 2]).is_err());
        assert!(reorder_sentences(&ex, &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_inverse_restores_tokens(seed in any::<u64>(), pick in 0usize..4) {
            let answers = ["one", "three four", "six. Delta", "eight"];
            let ex = four_sentences(answers[pick]);
            let (s, order) = shuffle_sentences_with_order(&ex, seed);
            let mut inverse = vec![0; order.len()];
            for (new, &old) in order.iter().enumerate() { inverse[old] = new; }
            let back = reorder_sentences(&s, &inverse).unwrap();
            let t0: Vec<&str> = ex.passage_tokens.iter().map(|t| t.text.as_str()).collect();
            let t1: Vec<&str> = back.passage_tokens.iter().map(|t| t.text.as_str()).collect();
            prop_assert_eq!(t0, t1);
            prop_assert_eq!(&back.answers, &ex.answers);
            for a in &s.answers {
                prop_assert_eq!(
                    normalize_whitespace(&s.span_text(a.token_start, a.token_end)),
                    normalize_whitespace(&a.text)
                );
            }
            s.validate().unwrap();
        }
    }
}

//! Whitespace/punctuation tokenizer and the rule-based sentence splitter.
//!
//! All offsets are codepoint offsets into the source string.

use unicode_general_category::{get_general_category, GeneralCategory};

use super::{Sentence, Token};

/// Abbreviations whose trailing period never ends a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Dr.", "St.", "No.", "vs.", "etc.", "e.g.", "i.e.", "U.S.", "Jan.", "Feb.", "Mar.", "Apr.", "Jun.",
    "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
];

const TERMINATORS: &[&str] = &[".", "?", "!"];

/// Unicode general category P (any punctuation).
pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn is_quote(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}'
    )
}

/// Codepoint-indexed substring. Out-of-range bounds are clamped.
pub fn char_slice(s: &str, start: usize, end: usize) -> String {
    s.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Splits on whitespace, then peels leading and trailing punctuation
/// characters off each chunk as single-character tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let push = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        let position = tokens.len();
        tokens.push(Token {
            text: chars[start..end].iter().collect(),
            char_start: start,
            char_end: end,
            position,
        });
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk_end = i;

        let mut lead = chunk_start;
        while lead < chunk_end && is_punctuation(chars[lead]) {
            lead += 1;
        }
        if lead == chunk_end {
            // all punctuation
            for c in chunk_start..chunk_end {
                push(&mut tokens, c, c + 1);
            }
            continue;
        }
        let mut trail = chunk_end;
        while trail > lead && is_punctuation(chars[trail - 1]) {
            trail -= 1;
        }
        for c in chunk_start..lead {
            push(&mut tokens, c, c + 1);
        }
        push(&mut tokens, lead, trail);
        for c in trail..chunk_end {
            push(&mut tokens, c, c + 1);
        }
    }
    tokens
}

/// Deterministic sentence partition of `tokens` (produced by [`tokenize`] over `source`).
///
/// A sentence ends after a `.`, `?` or `!` token when the next non-space
/// character is uppercase, a digit or a quote, unless the terminator is glued
/// to a preceding token that forms an entry of [`ABBREVIATIONS`].
pub fn segment_sentences(tokens: &[Token], source: &str) -> Vec<Sentence> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = source.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if i + 1 == tokens.len() {
            break;
        }
        if !TERMINATORS.contains(&tok.text.as_str()) {
            continue;
        }
        let next = chars[tok.char_end.min(chars.len())..]
            .iter()
            .copied()
            .find(|c| !c.is_whitespace());
        let opens_sentence = match next {
            Some(c) => c.is_uppercase() || c.is_numeric() || is_quote(c),
            None => false,
        };
        if !opens_sentence {
            continue;
        }
        if i > 0 {
            let prev = &tokens[i - 1];
            if prev.char_end == tok.char_start {
                let joined = format!("{}{}", prev.text, tok.text);
                if ABBREVIATIONS.contains(&joined.as_str()) {
                    continue;
                }
            }
        }
        sentences.push(Sentence {
            index: sentences.len() + 1,
            token_start: start,
            token_end: i + 1,
        });
        start = i + 1;
    }
    sentences.push(Sentence {
        index: sentences.len() + 1,
        token_start: start,
        token_end: tokens.len(),
    });
    sentences
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{char_slice, segment_sentences, tokenize, Dataset, Example, Transform};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Reads a SQuAD v1.1 JSON file, one example per question.
///
/// Every gold answer is kept. Answers whose `answer_start` does not point at
/// their text are collected and reported together.
pub fn load_squad(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let squad: SquadFile = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::parse(path, e))?;

    let mut examples = Vec::new();
    let mut misaligned = Vec::new();
    for paragraph in squad.data.into_iter().flat_map(|a| a.paragraphs) {
        let tokens = tokenize(&paragraph.context);
        let sentences = segment_sentences(&tokens, &paragraph.context);
        for qa in paragraph.qas {
            let answers: Vec<(String, usize)> = qa.answers.into_iter().map(|a| (a.text, a.answer_start)).collect();
            match Example::from_parts(
                qa.id.clone(),
                paragraph.context.clone(),
                qa.question,
                tokens.clone(),
                sentences.clone(),
                &answers,
            ) {
                Ok(ex) => examples.push(ex),
                Err(Error::Alignment { .. }) | Err(Error::Rejected { .. }) => misaligned.push(qa.id),
                Err(e) => return Err(e),
            }
        }
    }
    if !misaligned.is_empty() {
        return Err(Error::Alignment { ids: misaligned });
    }
    let mut ds = Dataset::new(dataset_name(path), examples);
    ds.provenance.push(Transform::LoadSquad {
        source: path.display().to_string(),
    });
    ds.validate()?;
    Ok(ds)
}

#[derive(Deserialize)]
struct MrqaRecord {
    context: String,
    qas: Vec<MrqaQa>,
}

#[derive(Deserialize)]
struct MrqaQa {
    qid: String,
    question: String,
    #[serde(default)]
    detected_answers: Vec<MrqaAnswer>,
}

#[derive(Deserialize)]
struct MrqaAnswer {
    #[allow(dead_code)]
    text: String,
    char_spans: Vec<[usize; 2]>,
}

/// Reads an MRQA shared-task JSON-lines file.
///
/// The first line must be a header record (an object with a `header` key).
/// `char_spans` use inclusive end offsets; each detected answer contributes
/// its first span, with the answer text taken from the context. Questions
/// without detected answers are skipped and counted in the provenance.
pub fn load_mrqa(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(path, "empty file, missing header line")),
    };
    let header: serde_json::Value = serde_json::from_str(&header).map_err(|e| Error::parse(path, e))?;
    if header.get("header").is_none() {
        return Err(Error::format(path, "first line is not a header record"));
    }

    let mut examples = Vec::new();
    let mut skipped = 0;
    let mut misaligned = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MrqaRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("record on line {}: {e}", lineno + 2)))?;
        let tokens = tokenize(&record.context);
        let sentences = segment_sentences(&tokens, &record.context);
        for qa in record.qas {
            let answers: Vec<(String, usize)> = qa
                .detected_answers
                .iter()
                .filter_map(|a| a.char_spans.first())
                .map(|&[start, end]| (char_slice(&record.context, start, end + 1), start))
                .collect();
            if answers.is_empty() {
                skipped += 1;
                continue;
            }
            match Example::from_parts(
                qa.qid.clone(),
                record.context.clone(),
                qa.question,
                tokens.clone(),
                sentences.clone(),
                &answers,
            ) {
                Ok(ex) => examples.push(ex),
                Err(Error::Alignment { .. }) => misaligned.push(qa.qid),
                Err(e) => return Err(e),
            }
        }
    }
    if !misaligned.is_empty() {
        return Err(Error::Alignment { ids: misaligned });
    }
    let mut ds = Dataset::new(dataset_name(path), examples);
    ds.provenance.push(Transform::LoadMrqa {
        source: path.display().to_string(),
        skipped_no_answer: skipped,
    });
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const SQUAD: &str = r#"{"version":"1.1","data":[{"title":"T","paragraphs":[{
        "context":"The game was played in Denver. It was cold.",
        "qas":[
          {"id":"q1","question":"Where?","answers":[{"text":"Denver","answer_start":23},{"text":"in Denver","answer_start":20}]},
          {"id":"q2","question":"How?","answers":[{"text":"cold","answer_start":38}]}
        ]}]}]}"#;

    #[test]
    fn squad_minimal() {
        let f = write_tmp(SQUAD);
        let ds = load_squad(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        let q1 = &ds.examples[0];
        assert_eq!(q1.answers.len(), 2);
        assert_eq!(q1.answers[0].char_start, 23);
        assert_eq!(
            q1.span_text(q1.answers[0].token_start, q1.answers[0].token_end),
            "Denver"
        );
        assert_eq!(ds.examples[1].train_sentence_index(), 2);
    }

    #[test]
    fn squad_misaligned_lists_ids() {
        let bad = SQUAD.replace("\"answer_start\":38", "\"answer_start\":3");
        let f = write_tmp(&bad);
        match load_squad(f.path()) {
            Err(Error::Alignment { ids }) => assert_eq!(ids, vec!["q2".to_string()]),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn squad_malformed_names_path() {
        let f = write_tmp("{\"data\": [");
        let err = load_squad(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains(&f.path().display().to_string()));
    }

    const MRQA: &str = concat!(
        r#"{"header":{"dataset":"NewsQA","split":"dev"}}"#,
        "\n",
        r#"{"context":"Hello world. Rust is fast.","qas":[{"qid":"a","question":"What is fast?","detected_answers":[{"text":"Rust","char_spans":[[13,16]]},{"text":"world","char_spans":[[6,10]]}]}]}"#,
        "\n",
        r#"{"context":"Nothing here.","qas":[{"qid":"b","question":"x?","detected_answers":[{"text":"Nothing","char_spans":[[0,6]]}]},{"qid":"c","question":"y?","detected_answers":[]}]}"#,
        "\n"
    );

    #[test]
    fn mrqa_records() {
        let f = write_tmp(MRQA);
        let ds = load_mrqa(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples[0].answers.len(), 2);
        assert_eq!(ds.examples[0].answers[0].text, "Rust");
        assert_eq!(
            ds.provenance[0],
            Transform::LoadMrqa {
                source: f.path().display().to_string(),
                skipped_no_answer: 1
            }
        );
    }

    #[test]
    fn mrqa_span_to_tokens() {
        // inclusive span [5, 10] covers codepoints 5..=10
        let ctx = "abcd efghij klm";
        let line = format!(
            "{{\"header\":{{}}}}\n{{\"context\":\"{ctx}\",\"qas\":[{{\"qid\":\"s\",\"question\":\"q\",\"detected_answers\":[{{\"text\":\"efghij\",\"char_spans\":[[5,10]]}}]}}]}}\n"
        );
        let f = write_tmp(&line);
        let ds = load_mrqa(f.path()).unwrap();
        let toks = tokenize(ctx);
        let covering: Vec<usize> = toks
            .iter()
            .filter(|t| t.char_start <= 10 && t.char_end > 5)
            .map(|t| t.position)
            .collect();
        let a = &ds.examples[0].answers[0];
        assert_eq!(
            vec![a.token_start, a.token_end],
            vec![covering[0], *covering.last().unwrap()]
        );
        assert_eq!(a.text, "efghij");
    }

    #[test]
    fn mrqa_missing_header() {
        let body: String = MRQA.lines().skip(1).collect::<Vec<_>>().join("\n");
        let f = write_tmp(&body);
        assert!(matches!(load_mrqa(f.path()), Err(Error::Format { .. })));
        let f = write_tmp("");
        assert!(matches!(load_mrqa(f.path()), Err(Error::Format { .. })));
    }
}

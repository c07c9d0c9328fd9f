use posbias::corpus::{load_mrqa, load_squad, read_cache, write_cache};
use posbias::eval::{evaluate, GoldPredictor};
use posbias::Dataset;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn squad() -> Dataset {
    load_squad(fixture("squad_small.json")).unwrap()
}

#[test]
fn squad_fixture_loads_every_question() {
    let ds = squad();
    assert_eq!(ds.len(), 10);
    ds.validate().unwrap();
    for ex in &ds.examples {
        for t in &ex.passage_tokens {
            let chars: String = ex
                .context
                .chars()
                .skip(t.char_start)
                .take(t.char_end - t.char_start)
                .collect();
            assert_eq!(chars, t.text);
        }
        for a in &ex.answers {
            assert_eq!(ex.span_text(a.token_start, a.token_end), a.text);
        }
    }
}

#[test]
fn abbreviations_do_not_end_sentences() {
    let ds = squad();
    let normans = ds.examples.iter().find(|e| e.id == "q3").unwrap();
    assert_eq!(normans.sentences.len(), 4);
    let smith = normans.train_answer();
    assert_eq!(smith.text, "Dr. Smith");
    assert_eq!(normans.train_sentence_index(), 4);
    let physics = ds.examples.iter().find(|e| e.id == "q9").unwrap();
    assert_eq!(physics.sentences.len(), 3);
}

#[test]
fn earliest_gold_is_the_training_answer() {
    let ds = squad();
    let when = ds.examples.iter().find(|e| e.id == "q4").unwrap();
    assert_eq!(when.answers.len(), 2);
    assert_eq!(when.train_answer().text, "in 1990");
    let basin = ds.examples.iter().find(|e| e.id == "q6").unwrap();
    assert_eq!(basin.train_answer().text, "about 7 million square kilometres");
}

#[test]
fn mrqa_matches_squad_on_shared_content() {
    let (s, m) = (squad(), load_mrqa(fixture("mrqa_small.jsonl")).unwrap());
    assert_eq!(s.len(), m.len());
    for (a, b) in s.examples.iter().zip(&m.examples) {
        assert_eq!(format!("m{}", a.id), b.id);
        assert_eq!(a.passage_tokens, b.passage_tokens);
        assert_eq!(a.sentences, b.sentences);
        assert_eq!(a.answers, b.answers);
    }
}

#[test]
fn cache_round_trip_is_byte_stable() {
    let ds = squad();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    write_cache(&ds, &p1).unwrap();
    let back = read_cache(&p1).unwrap();
    assert_eq!(back, ds);
    write_cache(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn truncation_drops_unanswerable_examples() {
    let ds = squad();
    let cut = ds.truncate_passages(12);
    assert!(cut.len() < ds.len());
    for ex in &cut.examples {
        assert!(ex.len() <= 12);
        assert!(ex.train_answer().token_end < ex.len());
        let last = ex.sentences.last().unwrap();
        assert_eq!(last.token_end, ex.len());
    }
}

#[test]
fn shuffled_fixture_keeps_gold_scores() {
    let ds = squad().shuffle_sentences(5);
    ds.validate().unwrap();
    let r = evaluate(&ds, &GoldPredictor);
    assert_eq!((r.em, r.f1), (100.0, 100.0));
}

#[test]
fn malformed_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"data\": 3}").unwrap();
    assert!(load_squad(&bad).is_err());
    let shifted = std::fs::read_to_string(fixture("squad_small.json"))
        .unwrap()
        .replace("\"answer_start\": 39", "\"answer_start\": 38");
    std::fs::write(&bad, shifted).unwrap();
    let err = load_squad(&bad).unwrap_err().to_string();
    assert!(err.contains("q1"), "{err}");
    assert!(load_mrqa(dir.path().join("missing.jsonl")).is_err());
}

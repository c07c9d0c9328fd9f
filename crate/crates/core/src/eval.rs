//! EM/F1 scoring, position-bucketed reports and sentence-wise heatmaps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{answer_sentence_index, is_punctuation, Dataset, Example};
use crate::error::{Error, Result};
use crate::model::{predict, TrainedModel};

pub const BUCKET_ALL: &str = "all";
pub const BUCKET_FIRST: &str = "k=1";
pub const BUCKET_LATER: &str = "k=2,3,...";

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !is_punctuation(*c)).collect();

    let mut no_articles = String::with_capacity(no_punct.len());
    let mut word = String::new();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let flush = |word: &mut String, out: &mut String| {
        if matches!(word.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in no_punct.chars() {
        if is_word(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut no_articles);
            no_articles.push(c);
        }
    }
    flush(&mut word, &mut no_articles);

    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn f1_single(prediction: &str, gold: &str) -> (f64, f64) {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let em = if p == g { 1.0 } else { 0.0 };
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return (em, em);
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return (em, 0.0);
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    (em, 2.0 * precision * recall / (precision + recall))
}

/// `(em, f1)` maximized over `golds`. An empty gold list scores zero.
pub fn em_f1(prediction: &str, golds: &[impl AsRef<str>]) -> (f64, f64) {
    golds.iter().fold((0.0, 0.0), |(em, f1), g| {
        let (e, f) = f1_single(prediction, g.as_ref());
        (em.max(e), f1.max(f))
    })
}

/// Anything that selects an inclusive token span in a passage.
pub trait SpanPredictor {
    fn predict_span(&self, example: &Example) -> (usize, usize);
}

impl SpanPredictor for TrainedModel {
    fn predict_span(&self, example: &Example) -> (usize, usize) {
        let (s, e, _) = predict(example, self);
        (s, e)
    }
}

/// Predicts the first gold span.
pub struct GoldPredictor;

impl SpanPredictor for GoldPredictor {
    fn predict_span(&self, example: &Example) -> (usize, usize) {
        let a = &example.answers[0];
        (a.token_start, a.token_end)
    }
}

/// Predicts the same span everywhere, clipped to the passage.
pub struct FixedSpanPredictor(pub usize, pub usize);

impl SpanPredictor for FixedSpanPredictor {
    fn predict_span(&self, example: &Example) -> (usize, usize) {
        let last = example.len().saturating_sub(1);
        let s = self.0.min(last);
        (s, self.1.clamp(s, last))
    }
}

impl<P: SpanPredictor + ?Sized> SpanPredictor for &P {
    fn predict_span(&self, example: &Example) -> (usize, usize) {
        (**self).predict_span(example)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
    pub buckets: BTreeMap<String, BucketScore>,
}

impl EvalReport {
    pub fn bucket(&self, label: &str) -> Option<&BucketScore> {
        self.buckets.get(label)
    }

    /// F1 of a bucket, or 0 when the bucket is absent.
    pub fn f1_of(&self, label: &str) -> f64 {
        self.bucket(label).map_or(0.0, |b| b.f1)
    }

    /// `bucket,n,em,f1` rows in label order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,n,em,f1\n");
        for (label, b) in &self.buckets {
            let _ = writeln!(out, "\"{label}\",{},{},{}", b.n, b.em, b.f1);
        }
        out
    }
}

/// Per-example `(id, sentence index of the first gold answer, em, f1)`.
pub fn score_examples<P: SpanPredictor + ?Sized>(dataset: &Dataset, predictor: &P) -> Vec<(String, usize, f64, f64)> {
    dataset
        .examples
        .iter()
        .map(|ex| {
            let (s, e) = predictor.predict_span(ex);
            let text = ex.span_text(s, e);
            let golds: Vec<&str> = ex.answers.iter().map(|a| a.text.as_str()).collect();
            let (em, f1) = em_f1(&text, &golds);
            (ex.id.clone(), answer_sentence_index(ex, &ex.answers[0]), em, f1)
        })
        .collect()
}

fn aggregate(rows: &[&(String, usize, f64, f64)]) -> BucketScore {
    let n = rows.len();
    if n == 0 {
        return BucketScore { em: 0.0, f1: 0.0, n };
    }
    let em: f64 = rows.iter().map(|r| r.2).sum();
    let f1: f64 = rows.iter().map(|r| r.3).sum();
    BucketScore {
        em: 100.0 * em / n as f64,
        f1: 100.0 * f1 / n as f64,
        n,
    }
}

/// Scores `dataset` with buckets "all", "k=1" and "k=2,3,...". With
/// `per_sentence`, also one "k=i" bucket per observed sentence index.
pub fn evaluate_with<P: SpanPredictor + ?Sized>(dataset: &Dataset, predictor: &P, per_sentence: bool) -> EvalReport {
    let mut rows = score_examples(dataset, predictor);
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let all: Vec<_> = rows.iter().collect();
    let overall = aggregate(&all);
    let mut buckets = BTreeMap::new();
    buckets.insert(BUCKET_ALL.to_string(), overall);
    let first: Vec<_> = rows.iter().filter(|r| r.1 == 1).collect();
    let later: Vec<_> = rows.iter().filter(|r| r.1 >= 2).collect();
    buckets.insert(BUCKET_FIRST.to_string(), aggregate(&first));
    buckets.insert(BUCKET_LATER.to_string(), aggregate(&later));
    if per_sentence {
        let max_k = rows.iter().map(|r| r.1).max().unwrap_or(0);
        for k in 2..=max_k {
            let sel: Vec<_> = rows.iter().filter(|r| r.1 == k).collect();
            if !sel.is_empty() {
                buckets.insert(format!("k={k}"), aggregate(&sel));
            }
        }
    }
    EvalReport {
        em: overall.em,
        f1: overall.f1,
        n: overall.n,
        buckets,
    }
}

pub fn evaluate<P: SpanPredictor + ?Sized>(dataset: &Dataset, predictor: &P) -> EvalReport {
    evaluate_with(dataset, predictor, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    /// Training k per row.
    pub rows: Vec<usize>,
    /// Evaluation k per column.
    pub cols: Vec<usize>,
    /// F1 percentages, `cells[i][j]` for `rows[i]`, `cols[j]`.
    pub cells: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    pub fn mean_diagonal(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| self.cols.iter().position(|c| c == r).map(|j| self.cells[i][j]))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let mut vals = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for (j, c) in self.cols.iter().enumerate() {
                if r != c {
                    vals.push(self.cells[i][j]);
                }
            }
        }
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_k");
        for c in &self.cols {
            let _ = write!(out, ",k={c}");
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "k={r}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Cell `(i, j)` is the F1 of the model trained on `k = i` over the subset `k = j`.
pub fn heatmap<P: SpanPredictor>(
    models: &BTreeMap<usize, P>,
    dev_subsets: &BTreeMap<usize, Dataset>,
) -> Result<HeatmapMatrix> {
    let missing: Vec<String> = models
        .keys()
        .filter(|k| !dev_subsets.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() || models.is_empty() {
        return Err(Error::Config(format!(
            "heatmap needs a dev subset for every model k; missing k = {}",
            if missing.is_empty() {
                "(no models)".into()
            } else {
                missing.join(", ")
            }
        )));
    }
    let rows: Vec<usize> = models.keys().copied().collect();
    let cols: Vec<usize> = dev_subsets.keys().copied().collect();
    let cells = models
        .values()
        .map(|m| dev_subsets.values().map(|d| evaluate(d, m).f1).collect())
        .collect();
    Ok(HeatmapMatrix { rows, cols, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Cat!"), "cat");
        assert_eq!(normalize_answer("42"), "42");
        assert_eq!(normalize_answer("an  apple"), "apple");
        assert_eq!(normalize_answer("  A\ttheory\nof the case "), "theory of case");
        assert_eq!(normalize_answer("Théâtre, «the» end"), "théâtre end");
        assert_eq!(normalize_answer("$the"), "$");
        assert_eq!(normalize_answer("another"), "another");
    }

    #[test]
    fn scores() {
        assert_eq!(em_f1("the cat", &["The cat"]), (1.0, 1.0));
        let (em, f1) = em_f1("cat sat", &["the cat"]);
        assert_eq!(em, 0.0);
        assert_abs_diff_eq!(f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(em_f1("cat sat", &["x", "cat sat"]), (1.0, 1.0));
        assert_eq!(em_f1("the", &["a"]), (1.0, 1.0));
        assert_eq!(em_f1("dog", &["the"]), (0.0, 0.0));
        assert_eq!(em_f1("x", &[] as &[&str]), (0.0, 0.0));
    }

    fn ds() -> Dataset {
        let mk = |id: &str, ctx: &str, ans: &str, at: usize| {
            Example::build(id, ctx, "q?", &[(ans.to_string(), at)]).unwrap()
        };
        Dataset::new(
            "toy",
            vec![
                mk("a", "Red fox here. Blue owl there.", "fox", 4),
                mk("b", "Red fox here. Blue owl there.", "owl", 19),
                mk("c", "One two. Three four. Five six.", "six", 26),
            ],
        )
    }

    #[test]
    fn oracle_and_fixed() {
        let d = ds();
        let r = evaluate_with(&d, &GoldPredictor, true);
        for b in r.buckets.values() {
            assert_eq!((b.em, b.f1), (100.0, 100.0));
        }
        assert_eq!(r.bucket(BUCKET_FIRST).unwrap().n, 1);
        assert_eq!(r.bucket(BUCKET_LATER).unwrap().n, 2);
        assert_eq!(r.bucket("k=2").unwrap().n, 1);
        assert_eq!(r.bucket("k=3").unwrap().n, 1);

        let wrong = evaluate(&d, &FixedSpanPredictor(0, 0));
        assert_eq!((wrong.em, wrong.f1), (0.0, 0.0));
    }

    #[test]
    fn all_is_weighted_mean() {
        let d = ds();
        let r = evaluate(&d, &FixedSpanPredictor(1, 1));
        let a = r.bucket(BUCKET_FIRST).unwrap();
        let b = r.bucket(BUCKET_LATER).unwrap();
        let mixed = (a.f1 * a.n as f64 + b.f1 * b.n as f64) / (a.n + b.n) as f64;
        assert_abs_diff_eq!(r.f1, mixed, epsilon = 1e-12);
        assert_eq!(a.n + b.n, r.n);

        let mut rev = d.clone();
        rev.examples.reverse();
        assert_eq!(evaluate(&rev, &FixedSpanPredictor(1, 1)), r);
    }

    #[test]
    fn heatmap_shapes() {
        let d = ds();
        let mut models = BTreeMap::new();
        models.insert(1, GoldPredictor);
        let mut subs = BTreeMap::new();
        subs.insert(1, d.clone());
        let h = heatmap(&models, &subs).unwrap();
        assert_eq!(h.cells, vec![vec![evaluate(&d, &GoldPredictor).f1]]);
        assert_eq!(h.to_csv(), "train_k,k=1\nk=1,100\n");
        models.insert(2, GoldPredictor);
        assert!(matches!(heatmap(&models, &subs), Err(Error::Config(_))));
    }

    #[test]
    fn report_csv() {
        let r = evaluate(&ds(), &GoldPredictor);
        let csv = r.to_csv();
        assert!(csv.starts_with("bucket,n,em,f1\n"));
        assert!(csv.contains("\"k=2,3,...\",2,100,100"));
    }
}

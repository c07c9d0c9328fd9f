use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use posbias::analysis::{correlation_curve, cosine_info, first_sentence_contrast};
use posbias::bias_stats::{build_subset, build_subset_at_least, position_histogram, sample_matched, AnswerPrior};
use posbias::config::{Objective, PriorKind, PriorTransform, Target, TrainConfig};
use posbias::corpus::{load_mrqa, load_squad, read_cache, write_cache};
use posbias::eval::{evaluate_with, heatmap, GoldPredictor};
use posbias::model::train;
use posbias::synth::generate_suite;
use posbias::{AnswerPlacement, Dataset, SyntheticSpec, TrainedModel};

use crate::manifest::ManifestBuilder;
use crate::{AuditArgs, Cli, Command, EvaluateArgs, Format, IngestArgs, SubsetArgs, SynthArgs, TrainArgs};

/// A problem with the invocation itself, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 1 for usage and configuration errors, 2 for data errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<posbias::Error>() {
            return if e.is_data_error() { 2 } else { 1 };
        }
    }
    2
}

struct Ctx<'a> {
    out_dir: &'a Path,
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, manifest: &mut ManifestBuilder, name: impl AsRef<Path>, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
        manifest.output(p.clone());
        Ok(p)
    }

    fn write_json(
        &self,
        manifest: &mut ManifestBuilder,
        name: impl AsRef<Path>,
        value: &impl serde::Serialize,
    ) -> Result<PathBuf> {
        self.write(manifest, name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn cache(&self, manifest: &mut ManifestBuilder, name: impl AsRef<Path>, ds: &Dataset) -> Result<PathBuf> {
        let p = self.path(name);
        write_cache(ds, &p)?;
        manifest.output(p.clone());
        Ok(p)
    }

    fn finish(&self, manifest: ManifestBuilder) -> Result<()> {
        let p = manifest.finish(self.out_dir)?;
        self.say(format!("manifest: {}", p.display()));
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("cannot create output directory {}", cli.out_dir.display()))?;
    let ctx = Ctx {
        out_dir: &cli.out_dir,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Subset(a) => subset(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Audit(a) => audit(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    }
}

fn load_data(manifest: &mut ManifestBuilder, path: &Path) -> Result<Dataset> {
    manifest
        .input(path)
        .map_err(|e| posbias::Error::Input(format!("{e:#}")))?;
    Ok(read_cache(path)?)
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let mut m = ManifestBuilder::start("ingest", json!({ "format": a.format, "max_words": a.max_words }));
    m.input(&a.input).map_err(|e| posbias::Error::Input(format!("{e:#}")))?;
    let loaded = match a.format {
        Format::Squad => load_squad(&a.input)?,
        Format::Mrqa => load_mrqa(&a.input)?,
    };
    m.count("loaded", loaded.len());
    for t in &loaded.provenance {
        if let posbias::corpus::Transform::LoadMrqa { skipped_no_answer, .. } = t {
            m.count("skipped_no_answer", *skipped_no_answer);
        }
    }
    let ds = match a.max_words {
        Some(0) => return Err(usage("--max-words must be positive")),
        Some(n) => {
            let cut = loaded.truncate_passages(n);
            let kept: std::collections::BTreeSet<&str> = cut.examples.iter().map(|e| e.id.as_str()).collect();
            let dropped: Vec<&str> = loaded
                .examples
                .iter()
                .map(|e| e.id.as_str())
                .filter(|id| !kept.contains(id))
                .collect();
            m.count("dropped", dropped.len());
            m.count("dropped_ids", dropped);
            cut
        }
        None => loaded.clone(),
    };
    m.count("examples", ds.len());
    let p = ctx.cache(&mut m, &a.out, &ds)?;
    ctx.say(format!("ingested {} examples into {}", ds.len(), p.display()));
    ctx.finish(m)
}

fn subset(ctx: &Ctx, a: &SubsetArgs) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let mut m = ManifestBuilder::start(
        "subset",
        json!({ "k": a.k, "k_min": a.k_min, "sample": a.sample, "seed": seed }),
    );
    let ds = load_data(&mut m, &a.data)?;
    let sub = match (a.k, a.k_min, a.sample) {
        (Some(k), _, _) => build_subset(&ds, k)?,
        (_, Some(k), _) => build_subset_at_least(&ds, k)?,
        (_, _, Some(n)) => sample_matched(&ds, n, seed)?,
        _ => return Err(usage("one of --k, --k-min or --sample is required")),
    };
    if sub.is_empty() {
        let msg = "subset is empty".to_string();
        eprintln!("warning: {msg}");
        m.warn(msg);
    }
    m.count("input_examples", ds.len());
    m.count("examples", sub.len());
    ctx.cache(&mut m, &a.out, &sub)?;
    ctx.write(&mut m, "histogram.csv", &position_histogram(&ds).to_csv())?;
    ctx.say(format!("selected {} of {} examples", sub.len(), ds.len()));
    ctx.finish(m)
}

fn resolve_config(ctx: &Ctx, a: &TrainArgs) -> Result<(TrainConfig, Option<PriorKind>)> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(o) = &a.objective {
        cfg.objective = o.parse::<Objective>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(
        epochs,
        learning_rate,
        batch_size,
        dim,
        max_seq_len,
        t,
        lambda,
        max_answer_len
    );
    if let Some(t) = &a.prior_transform {
        cfg.prior_transform = t.parse::<PriorTransform>()?;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let prior = a.prior.as_deref().map(str::parse::<PriorKind>).transpose()?;
    match (cfg.objective.needs_prior(), prior) {
        (true, None) => Err(usage(format!(
            "objective {} needs --prior word|sentence",
            cfg.objective
        ))),
        (false, Some(_)) => Err(usage(format!(
            "objective {} does not use a prior; drop --prior",
            cfg.objective
        ))),
        _ => Ok((cfg, prior)),
    }
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let (cfg, prior_kind) = resolve_config(ctx, a)?;
    let mut m = ManifestBuilder::start(
        "train",
        json!({ "train_config": cfg, "prior": prior_kind.map(|p| p.to_string()) }),
    );
    let ds = load_data(&mut m, &a.data)?;
    let prior = prior_kind
        .map(|k| AnswerPrior::compute(&ds, k, cfg.max_seq_len))
        .transpose()?;
    if let Some(p) = &prior {
        let path = ctx.path("prior.json");
        p.save(&path)?;
        m.output(path);
    }
    ctx.say(format!(
        "training {} on {} examples for {} epochs",
        cfg.objective,
        ds.len(),
        cfg.epochs
    ));
    let model = train(&ds, &cfg, prior.as_ref())?;
    let out = ctx.path(&a.out);
    model.save(&out)?;
    m.output(out.clone());

    let mut csv = String::from("epoch,mean_loss,mean_gate_start,mean_gate_end\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for e in &model.metrics_log {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch,
            e.mean_loss,
            opt(e.mean_gate_start),
            opt(e.mean_gate_end)
        ));
        let gate = e.mean_gate_start.map_or(String::new(), |g| format!(", gate {g:.3}"));
        ctx.say(format!("  epoch {:>3}: loss {:.4}{gate}", e.epoch, e.mean_loss));
    }
    ctx.write(&mut m, "metrics.csv", &csv)?;
    m.count("examples", ds.len());
    m.count("dropped_overlong", model.dropped_overlong);
    ctx.say(format!("checkpoint: {}", out.display()));
    ctx.finish(m)
}

fn evaluate_cmd(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let mut m = ManifestBuilder::start("evaluate", json!({ "model": a.model, "buckets": a.buckets }));
    let ds = load_data(&mut m, &a.data)?;
    let report = if a.model == "oracle" {
        evaluate_with(&ds, &GoldPredictor, a.buckets)
    } else {
        let path = Path::new(&a.model);
        m.input(path).map_err(|e| posbias::Error::Input(format!("{e:#}")))?;
        let model = TrainedModel::load(path)?;
        evaluate_with(&ds, &model, a.buckets)
    };
    ctx.write_json(&mut m, format!("{}.json", a.out), &report)?;
    ctx.write(&mut m, format!("{}.csv", a.out), &report.to_csv())?;
    for (label, b) in &report.buckets {
        ctx.say(format!("{label:>12}: n {:>6}  EM {:6.2}  F1 {:6.2}", b.n, b.em, b.f1));
    }
    m.count("examples", report.n);
    ctx.finish(m)
}

fn model_stems(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map_or("model".into(), |s| s.to_string_lossy().into_owned());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

fn audit(ctx: &Ctx, a: &AuditArgs) -> Result<()> {
    if a.models.is_empty() && a.heatmap.is_empty() {
        return Err(usage("audit needs --model or --heatmap"));
    }
    let mut m = ManifestBuilder::start("audit", json!({ "layers": a.layers, "heatmap": a.heatmap }));
    let k_models: BTreeMap<usize, &PathBuf> = a.k_models.iter().map(|(k, p)| (*k, p)).collect();
    let gaps: Vec<String> = a
        .heatmap
        .iter()
        .filter(|k| !k_models.contains_key(k))
        .map(|k| format!("k={k}"))
        .collect();
    if !gaps.is_empty() {
        return Err(usage(format!("--heatmap is missing --k-model for {}", gaps.join(", "))));
    }
    let ds = load_data(&mut m, &a.data)?;
    ctx.write(&mut m, "histogram.csv", &position_histogram(&ds).to_csv())?;

    for (path, stem) in a.models.iter().zip(model_stems(&a.models)) {
        m.input(path).map_err(|e| posbias::Error::Input(format!("{e:#}")))?;
        let model = TrainedModel::load(path)?;
        let layers: Vec<usize> = if a.layers.is_empty() {
            (0..4).collect()
        } else {
            a.layers.clone()
        };
        let mut contrast = BTreeMap::new();
        for &l in &layers {
            let curve = cosine_info(&model, &ds, l)?;
            ctx.write(&mut m, format!("{stem}_info_layer{l}.csv"), &curve.to_csv())?;
            if let Ok(c) = first_sentence_contrast(&model, &ds, l) {
                contrast.insert(format!("layer{l}"), c);
            }
        }
        ctx.write_json(&mut m, format!("{stem}_sentence_contrast.json"), &contrast)?;
        for target in [Target::Start, Target::End] {
            let c = correlation_curve(&model, &ds, target)?;
            ctx.write(&mut m, format!("{stem}_correlation_{target}.csv"), &c.to_csv())?;
            if target == Target::Start {
                ctx.say(format!("{stem}: final-layer start Spearman {:?}", c.final_layer()));
            }
        }
        if let Some(c) = contrast.values().last() {
            ctx.say(format!(
                "{stem}: final-layer cosine first sentence {:.4}, later {:.4}",
                c.first, c.later
            ));
        }
    }

    if !a.heatmap.is_empty() {
        let mut models = BTreeMap::new();
        let mut subsets = BTreeMap::new();
        for &k in &a.heatmap {
            m.input(k_models[&k])
                .map_err(|e| posbias::Error::Input(format!("{e:#}")))?;
            models.insert(k, TrainedModel::load(k_models[&k])?);
            subsets.insert(k, build_subset(&ds, k)?);
        }
        let h = heatmap(&models, &subsets)?;
        ctx.write(&mut m, "heatmap.csv", &h.to_csv())?;
        ctx.say(format!(
            "heatmap: diagonal {:.2}, off-diagonal {:.2}",
            h.mean_diagonal().unwrap_or(f64::NAN),
            h.mean_off_diagonal().unwrap_or(f64::NAN)
        ));
    }
    ctx.finish(m)
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let placement: AnswerPlacement = a.placement.parse().map_err(|e: posbias::Error| usage(e.to_string()))?;
    let spec = SyntheticSpec {
        n_examples: a.n_examples,
        sentences_per_passage: a.sentences,
        tokens_per_sentence: a.tokens,
        vocab_size: a.vocab_size,
        answer_placement: placement,
        seed: ctx.seed.unwrap_or(0),
        facts_per_sentence: a.facts,
        answer_len: a.answer_len,
        marker_pool: a.marker_pool,
    };
    spec.validate()?;
    let mut m = ManifestBuilder::start(
        "synth",
        json!({
            "n_examples": spec.n_examples,
            "sentences_per_passage": spec.sentences_per_passage,
            "tokens_per_sentence": spec.tokens_per_sentence,
            "vocab_size": spec.vocab_size,
            "answer_placement": spec.answer_placement.to_string(),
            "seed": spec.seed,
            "facts_per_sentence": spec.facts_per_sentence,
            "answer_len": spec.answer_len,
            "marker_pool": spec.marker_pool,
            "ks": a.ks,
            "n_dev": a.n_dev,
        }),
    );
    let suite = generate_suite(&spec, &a.ks, a.n_dev)?;
    ctx.cache(&mut m, "full.json", &suite.full)?;
    m.count("full", suite.full.len());
    for (k, ds) in &suite.fixed {
        ctx.cache(&mut m, format!("fixed_k{k}.json"), ds)?;
        m.count(&format!("fixed_k{k}"), ds.len());
    }
    ctx.cache(&mut m, "dev.json", &suite.dev)?;
    m.count("dev", suite.dev.len());
    ctx.write(&mut m, "histogram.csv", &position_histogram(&suite.full).to_csv())?;
    ctx.say(format!(
        "wrote full ({}), {} fixed corpora and dev ({}) to {}",
        suite.full.len(),
        suite.fixed.len(),
        suite.dev.len(),
        ctx.out_dir.display()
    ));
    ctx.finish(m)
}

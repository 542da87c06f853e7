//! One function per subcommand. Each writes its outputs and the resolved
//! configuration next to them; nothing here reads the clock or the
//! environment except `HICD_OUT_DIR` for default output paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, ValueEnum};
use hicd_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hicd_core::classifier::{Encoder, Variant};
use hicd_core::data::{load_corpus, save_corpus, Report};
use hicd_core::embedding::EmbeddingTable;
use hicd_core::pipeline::{explain_html, explain_text, explanation_file_name, ClassifierModel, Prediction, TaggerModel};
use hicd_core::selftest::{run_selftest, Fault, SelftestOptions};
use hicd_core::synthetic::gen_synthetic;
use hicd_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::workflow::{
    baseline_prediction, evaluate_multiclass, evaluate_multilabel, predict_gold_focus,
    predict_reports, train_baseline_level, train_classifier_level, train_tagger_level,
    ClassifierData, Experiment, SplitName, TrainingTable,
};

pub const OUT_DIR_ENV: &str = "HICD_OUT_DIR";

/// `path`, or `name` inside `$HICD_OUT_DIR` (the working directory when
/// unset).
pub fn output_path(path: Option<PathBuf>, name: &str) -> PathBuf {
    path.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_default()
            .join(name)
    })
}

/// `<path>.<suffix>`, e.g. `model.ckpt.config.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_config(out: &Path, config: &RunConfig) -> Result<()> {
    ensure_parent(out)?;
    fs::write(sidecar(out, "config.json"), config.to_pretty_json())?;
    Ok(())
}

fn load_embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    path.map(|p| {
        EmbeddingTable::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read embeddings {}: {io}", p.display())),
            other => other,
        })
    })
    .transpose()
}

fn open_checkpoint(path: &Path) -> Result<(Checkpoint, Value)> {
    let (ckpt, manifest) = load_checkpoint(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })?;
    Ok((ckpt, manifest.run_config))
}

fn corpus(path: &Path) -> Result<hicd_core::data::Corpus> {
    load_corpus(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read corpus {}: {io}", path.display())),
        other => other,
    })
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Run configuration; its `synthetic` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus JSONL to write [default: $HICD_OUT_DIR/corpus.jsonl].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Embedding table to write [default: the corpus path with extension .vec].
    #[arg(long)]
    pub embeddings_out: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of reports.
    #[arg(long)]
    pub reports: Option<usize>,
}

pub fn gen_synthetic_cmd(args: GenSyntheticArgs) -> Result<()> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.synthetic.seed = s;
    }
    if let Some(n) = args.reports {
        config.synthetic.reports = n;
    }
    config.validate()?;
    let out = output_path(args.out, "corpus.jsonl");
    let emb_out = args.embeddings_out.unwrap_or_else(|| out.with_extension("vec"));
    let bundle = gen_synthetic(&config.synthetic)?;
    ensure_parent(&out)?;
    ensure_parent(&emb_out)?;
    save_corpus(&bundle.corpus, &out)?;
    bundle.embeddings.save(&emb_out)?;
    write_config(&out, &config)?;

    let reports = &bundle.corpus.reports;
    let mut per_code: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut focus = 0;
    for r in reports {
        for c in &r.codes {
            *per_code.entry(c).or_default() += 1;
        }
        *sizes.entry(r.codes.len()).or_default() += 1;
        focus += r.annotations.len();
    }
    println!("wrote {} reports to {}", reports.len(), out.display());
    println!("wrote {} embeddings (dim {}) to {}", bundle.embeddings.len(), bundle.embeddings.dim(), emb_out.display());
    println!("labels: {}, focus sentences: {focus}", per_code.len());
    let hist: Vec<String> = sizes.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    println!("codeset sizes: {}", hist.join(" "));
    let freq: Vec<String> = per_code.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("reports per code: {}", freq.join(" "));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Tagger,
    Classifier,
    Baseline,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub level: Level,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to write [default: $HICD_OUT_DIR/<level>.ckpt].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// word2vec text-format table; a seeded random table is used otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Seed for the split and the model.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Classifier encoder: pooling, vanilla or supervised (optionally with
    /// a +r4v suffix).
    #[arg(long)]
    pub variant: Option<String>,
    /// Train the classifier without the reason-for-visit encoder.
    #[arg(long)]
    pub no_r4v: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated λ values; trains one classifier per value and
    /// tabulates validation results.
    #[arg(long, value_delimiter = ',')]
    pub lambda_sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            config.set_seed(s);
        }
        if let Some(v) = &self.variant {
            config.classifier.variant = if v.ends_with("+r4v") {
                v.parse::<Variant>()?
            } else {
                Variant::new(v.parse::<Encoder>()?, true)
            };
        }
        if self.no_r4v {
            config.classifier.variant.use_r4v = false;
        }
        if let Some(l) = self.lambda {
            config.classifier.lambda = l;
        }
        match self.level {
            Level::Tagger => {
                if let Some(e) = self.epochs {
                    config.tagger.epochs = e;
                }
                if let Some(h) = self.hidden {
                    config.tagger.hidden = h;
                }
            }
            Level::Classifier => {
                if let Some(e) = self.epochs {
                    config.classifier.epochs = e;
                }
                if let Some(h) = self.hidden {
                    config.classifier.hidden = h;
                }
            }
            Level::Baseline => {
                if let Some(e) = self.epochs {
                    config.baseline.epochs = e;
                }
            }
        }
        let classifier_only = self.variant.is_some()
            || self.no_r4v
            || self.lambda.is_some()
            || self.lambda_sweep.is_some();
        if classifier_only && self.level != Level::Classifier {
            return Err(Error::Config(
                "--variant, --no-r4v, --lambda and --lambda-sweep apply to the classifier only".into(),
            ));
        }
        if let Some(ls) = &self.lambda_sweep {
            if ls.is_empty() || ls.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::Config("--lambda-sweep needs finite values ≥ 0".into()));
            }
        }
        config.validate()
    }
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    args.apply(&mut config)?;
    let default_name = match args.level {
        Level::Tagger => "tagger.ckpt",
        Level::Classifier => "classifier.ckpt",
        Level::Baseline => "baseline.ckpt",
    };
    let out = output_path(args.out.clone(), default_name);
    let corpus = corpus(&args.corpus)?;
    corpus.validate()?;
    let exp = Experiment::new(&corpus, &config)?;
    let external = load_embeddings(args.embeddings.as_deref())?;
    ensure_parent(&out)?;
    match args.level {
        Level::Tagger => {
            let table = TrainingTable::resolve(external, &exp.raw[0], &config)?;
            let (ckpt, metrics) = train_tagger_level(&exp, &table, &config)?;
            save_checkpoint(&Checkpoint::Tagger(ckpt), &config.to_value(), &out)?;
            finish_training(&out, &config, metrics)?;
        }
        Level::Classifier => {
            let table = TrainingTable::resolve(external, &exp.raw[0], &config)?;
            let data = ClassifierData::new(&exp)?;
            match &args.lambda_sweep {
                None => {
                    let (ckpt, _, metrics) = train_classifier_level(&exp, &data, &table, &config.classifier)?;
                    save_checkpoint(&Checkpoint::Classifier(ckpt), &config.to_value(), &out)?;
                    finish_training(&out, &config, metrics)?;
                }
                Some(lambdas) => lambda_sweep(&exp, &data, &table, &config, lambdas, &out)?,
            }
        }
        Level::Baseline => {
            let (ckpt, metrics) = train_baseline_level(&exp, &config)?;
            save_checkpoint(&Checkpoint::BinaryRelevance(ckpt), &config.to_value(), &out)?;
            finish_training(&out, &config, metrics)?;
        }
    }
    Ok(())
}

fn finish_training(out: &Path, config: &RunConfig, mut metrics: Value) -> Result<()> {
    metrics["config"] = config.to_value();
    let path = sidecar(out, "metrics.json");
    write_json(&path, &metrics)?;
    write_config(out, config)?;
    println!("wrote {}", out.display());
    for split in ["train", "validation"] {
        let m = &metrics[split];
        for key in ["macro_f1", "accuracy", "subset_accuracy"] {
            if let Some(v) = m.get(key).and_then(Value::as_f64) {
                println!("{split} {key}: {v:.4}");
            }
        }
    }
    println!("metrics in {}", path.display());
    Ok(())
}

/// Checkpoint path for one λ of a sweep: `<stem>-lambda-<λ>.<ext>`.
pub fn sweep_path(out: &Path, lambda: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-lambda-{lambda}.{}", ext.to_string_lossy()),
        None => format!("{stem}-lambda-{lambda}"),
    };
    out.with_file_name(name)
}

fn lambda_sweep(
    exp: &Experiment,
    data: &ClassifierData,
    table: &TrainingTable,
    config: &RunConfig,
    lambdas: &[f64],
    out: &Path,
) -> Result<()> {
    let mut rows = Vec::new();
    println!("{:>10}  {:>10}  {:>14}  {:>10}", "lambda", "val acc", "val att loss", "best epoch");
    for &lambda in lambdas {
        let mut run = config.clone();
        run.classifier.lambda = lambda;
        let (ckpt, summary, mut metrics) = train_classifier_level(exp, data, table, &run.classifier)?;
        let best_epoch = ckpt.best_epoch;
        let path = sweep_path(out, lambda);
        save_checkpoint(&Checkpoint::Classifier(ckpt), &run.to_value(), &path)?;
        metrics["config"] = run.to_value();
        write_json(&sidecar(&path, "metrics.json"), &metrics)?;
        let val = summary.validation.as_ref();
        let acc = val.map(|v| v.accuracy);
        let att = val.and_then(|v| v.mean_attention_loss);
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!("{lambda:>10}  {:>10}  {:>14}  {best_epoch:>10}", fmt(acc), fmt(att));
        rows.push(json!({
            "lambda": lambda,
            "checkpoint": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "validation_accuracy": acc,
            "validation_attention_loss": att,
            "best_epoch": best_epoch,
        }));
    }
    let table_path = sidecar(out, "lambda-sweep.json");
    write_json(&table_path, &json!({"variant": config.classifier.variant, "rows": rows, "config": config.to_value()}))?;
    write_config(out, config)?;
    println!("sweep table in {}", table_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub tagger: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Predict with a binary-relevance checkpoint instead.
    #[arg(long, conflicts_with_all = ["tagger", "classifier", "gold_focus"])]
    pub baseline: Option<PathBuf>,
    /// Classify the annotated focus sentences instead of running the tagger.
    #[arg(long, conflicts_with = "tagger")]
    pub gold_focus: bool,
    /// Embedding table for checkpoints that do not store theirs.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Reports to predict; splits follow the run configuration.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitName,
    /// Run configuration defining the split [default: the one recorded in
    /// the checkpoint].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prediction JSONL [default: $HICD_OUT_DIR/predictions.jsonl].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-report HTML and text explanations.
    #[arg(long)]
    pub explain: Option<PathBuf>,
}

fn recorded_config(value: Value) -> Result<RunConfig> {
    let c: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("checkpoint carries an unreadable run configuration: {e}")))?;
    c.validate()?;
    Ok(c)
}

pub fn predict_cmd(args: PredictArgs) -> Result<()> {
    let external = load_embeddings(args.embeddings.as_deref())?;
    let corpus = corpus(&args.corpus)?;
    corpus.validate()?;
    let out = output_path(args.out.clone(), "predictions.jsonl");

    let (predictions, recorded) = if let Some(path) = &args.baseline {
        let (ck, rc) = open_checkpoint(path)?;
        let model = ck.into_baseline()?.model;
        let (reports, config) = select(&corpus.reports, args.split, args.config.as_deref(), rc)?;
        (reports.iter().map(|r| baseline_prediction(r, &model)).collect::<Vec<_>>(), config)
    } else {
        let cpath = args
            .classifier
            .as_ref()
            .ok_or_else(|| Error::Config("predict needs --classifier (or --baseline)".into()))?;
        let (ck, rc) = open_checkpoint(cpath)?;
        let classifier = ClassifierModel::from_checkpoint(ck.into_classifier()?, external.as_ref())?;
        let (reports, config) = select(&corpus.reports, args.split, args.config.as_deref(), rc)?;
        let preds = if args.gold_focus {
            predict_gold_focus(&reports, &classifier)?
        } else {
            let tpath = args
                .tagger
                .as_ref()
                .ok_or_else(|| Error::Config("predict needs --tagger unless --gold-focus is given".into()))?;
            let (ck, _) = open_checkpoint(tpath)?;
            let tagger = TaggerModel::from_checkpoint(ck.into_tagger()?, external.as_ref())?;
            predict_reports(&reports, &tagger, &classifier)?
        };
        if let Some(dir) = &args.explain {
            write_explanations(dir, &preds, &reports)?;
        }
        (preds, config)
    };

    ensure_parent(&out)?;
    let mut w = BufWriter::new(File::create(&out)?);
    for p in &predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_config(&out, &recorded)?;
    let fallbacks = predictions.iter().filter(|p| p.fallback).count();
    println!("wrote {} predictions to {} ({fallbacks} used the fallback sentence)", predictions.len(), out.display());
    Ok(())
}

/// Reports of `split`, using `--config` or the configuration recorded in
/// the checkpoint.
fn select(
    reports: &[Report],
    split: SplitName,
    config: Option<&Path>,
    recorded: Value,
) -> Result<(Vec<Report>, RunConfig)> {
    let config = match config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            c.validate()?;
            c
        }
        None => recorded_config(recorded)?,
    };
    if split == SplitName::All {
        return Ok((reports.to_vec(), config));
    }
    let corpus = hicd_core::data::Corpus::new(reports.to_vec());
    let exp = Experiment::new(&corpus, &config)?;
    Ok((exp.raw(split), config))
}

fn write_explanations(dir: &Path, predictions: &[Prediction], reports: &[Report]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let by_id: BTreeMap<&str, &Report> = reports.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut used: BTreeMap<String, &str> = BTreeMap::new();
    for p in predictions {
        let name = explanation_file_name(&p.report_id);
        if let Some(other) = used.insert(name.clone(), &p.report_id) {
            return Err(Error::Data(format!(
                "reports {other:?} and {:?} map to the same explanation file {name}",
                p.report_id
            )));
        }
        let report = by_id[p.report_id.as_str()];
        let html = dir.join(&name);
        fs::write(&html, explain_html(p, report))?;
        fs::write(html.with_extension("txt"), explain_text(p, report))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Multiclass,
    Multilabel,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold corpus JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Run configuration: selects `--split` of the gold corpus and drops
    /// codes filtered during training from the gold sets.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all", requires = "config")]
    pub split: SplitName,
    /// Metrics JSON [default: $HICD_OUT_DIR/metrics.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let f = File::open(path)
        .map_err(|e| Error::Config(format!("cannot read predictions {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let predictions = read_predictions(&args.predictions)?;
    let gold_corpus = corpus(&args.gold)?;
    gold_corpus.validate()?;
    let out = output_path(args.out.clone(), "metrics.json");
    let (gold, config) = match &args.config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            c.validate()?;
            let exp = Experiment::new(&gold_corpus, &c)?;
            let gold = exp.gold(args.split);
            // reports left without codes by label filtering are not scored
            let excluded: BTreeSet<&str> = exp
                .restricted
                .iter()
                .flat_map(|r| r.excluded.iter().map(String::as_str))
                .collect();
            let predictions: Vec<Prediction> = predictions
                .into_iter()
                .filter(|p| !excluded.contains(p.report_id.as_str()))
                .collect();
            return finish_evaluation(args.mode, &predictions, &gold, Some(&c), &out);
        }
        None => (gold_corpus.reports, None),
    };
    finish_evaluation(args.mode, &predictions, &gold, config, &out)
}

fn finish_evaluation(
    mode: Mode,
    predictions: &[Prediction],
    gold: &[Report],
    config: Option<&RunConfig>,
    out: &Path,
) -> Result<()> {
    let (metrics, summary) = match mode {
        Mode::Multilabel => {
            let m = evaluate_multilabel(predictions, gold)?;
            let s = format!(
                "subset accuracy {:.4}, micro P/R/F1 {:.4}/{:.4}/{:.4}, instance P/R/F1 {:.4}/{:.4}/{:.4}",
                m.subset_accuracy, m.micro.precision, m.micro.recall, m.micro.f1,
                m.instance.precision, m.instance.recall, m.instance.f1
            );
            (serde_json::to_value(&m)?, s)
        }
        Mode::Multiclass => {
            let m = evaluate_multiclass(predictions, gold)?;
            let s = format!(
                "accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4}",
                m.accuracy, m.macro_.f1, m.weighted.f1
            );
            (serde_json::to_value(&m)?, s)
        }
    };
    let mode_name = match mode {
        Mode::Multiclass => "multiclass",
        Mode::Multilabel => "multilabel",
    };
    let report = json!({
        "mode": mode_name,
        "metrics": metrics,
        "config": config.map(RunConfig::to_value),
    });
    write_json(out, &report)?;
    if let Some(c) = config {
        write_config(out, c)?;
    }
    println!("{summary}");
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Deliberately break one component to check that the suite notices:
    /// attention-backward, tagger-backward or micro-f1.
    #[arg(long)]
    pub fault: Option<String>,
}

pub fn selftest_cmd(args: SelftestArgs) -> Result<ExitCode> {
    let fault = args.fault.as_deref().map(str::parse::<Fault>).transpose()?;
    let opts = SelftestOptions {
        seeds: args.seeds,
        fault,
        ..SelftestOptions::default()
    };
    let report = run_selftest(&opts);
    for c in &report.checks {
        println!("{c}");
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("selftest passed: {} checks in {:.1}s", report.checks.len(), report.seconds);
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = failures.iter().map(|c| c.name.as_str()).collect();
        println!("selftest FAILED: {}", names.join(", "));
        Ok(ExitCode::from(1))
    }
}

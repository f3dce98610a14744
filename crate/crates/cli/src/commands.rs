use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dravida_core::adversary::GradientMode;
use dravida_core::corpus::{dataset_stats, load_dataset, BatchPolicy, Example, MultilingualDataset, Split};
use dravida_core::eval::{metrics_markdown, render_report, ComparisonTable, Format};
use dravida_core::experiments::{alpha_sweep, prepare_lexicon, run_ablation};
use dravida_core::langspec::{
    compute_saliencies, extract_lexicon, read_saliency_dump, recognizer_accuracy, train_recognizer,
    write_saliency_dump, LanguageLexicon, LexiconScope,
};
use dravida_core::synthetic::{self, SyntheticConfig};
use dravida_core::trainer::{evaluate_split, train, write_epoch_log, Checkpoint, TrainConfig};

use crate::{Command, Common, EvalArgs, LexiconArgs, Preset, ReportArgs, StatsArgs, SweepArgs, SynthArgs, TrainArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train_cmd(a),
        Command::ExtractLexicon(a) => lexicon_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::SweepAlpha(a) => sweep_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

/// Training and recognizer configurations after applying preset, file and flags.
fn configs(c: &Common) -> Result<(TrainConfig, TrainConfig)> {
    let mut cfg = match (&c.config, c.preset) {
        (Some(path), _) => TrainConfig::from_json_file(path)?,
        (None, Preset::Synthetic) => synthetic::preset_config(),
        (None, Preset::Default) => TrainConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(b) = &c.backend {
        cfg.backend = b.parse()?;
    }
    if let Some(a) = c.alpha {
        cfg.perturbation.alpha_specific = a;
    }
    if let Some(e) = c.epsilon {
        cfg.perturbation.epsilon = e;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = c.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(bs) = c.batch_size {
        cfg.batch_size = bs;
    }
    if c.monolingual_batches {
        cfg.batch_policy = BatchPolicy::Monolingual;
    }
    if c.freeze_encoder {
        cfg.freeze_encoder = true;
    }
    if c.adversarial_only_grad {
        cfg.gradient_mode = GradientMode::AdversarialOnly;
    }
    if c.per_sentence_lexicon {
        cfg.lexicon_scope = LexiconScope::PerSentence;
    }
    cfg.validate()?;

    let mut rec = cfg.clone();
    rec.freeze_encoder = false;
    if c.preset == Preset::Synthetic && c.config.is_none() {
        rec.epochs = synthetic::preset_recognizer_config().epochs;
    }
    if let Some(e) = c.recognizer_epochs {
        rec.epochs = e;
    }
    Ok((cfg, rec))
}

fn load(path: &Path) -> Result<MultilingualDataset> {
    Ok(load_dataset(path)?)
}

/// Reads a lexicon TSV or a saliency JSONL dump.
fn read_lexicon(path: &Path, ds: &MultilingualDataset, cfg: &TrainConfig) -> Result<LanguageLexicon> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(extract_lexicon(&read_saliency_dump(path)?));
    }
    if cfg.lexicon_scope == LexiconScope::PerSentence {
        bail!("--per-sentence-lexicon needs a saliency .jsonl dump, not a per-language TSV");
    }
    Ok(LanguageLexicon::read_tsv(path, &ds.languages)?)
}

fn lexicon_for(
    path: Option<&Path>,
    ds: &MultilingualDataset,
    cfg: &TrainConfig,
    rec_cfg: &TrainConfig,
    out: &Path,
) -> Result<Option<LanguageLexicon>> {
    if let Some(p) = path {
        return Ok(Some(read_lexicon(p, ds, cfg)?));
    }
    if !cfg.needs_lexicon() {
        return Ok(None);
    }
    log::info!("no lexicon given; training the language recognizer");
    let prepared = prepare_lexicon(ds, rec_cfg)?;
    prepared.lexicon.write_tsv(&out.join("lexicon.tsv"), &ds.languages)?;
    Ok(Some(prepared.lexicon))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (cfg, rec_cfg) = configs(&a.common)?;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    let ds = load(&a.data)?;
    let lexicon = lexicon_for(a.lexicon.as_deref(), &ds, &cfg, &rec_cfg, out)?;
    let outcome = train(&ds, &cfg, lexicon.as_ref())?;
    outcome.best.save(&out.join("best"))?;
    outcome.last.save(&out.join("last"))?;
    let log_path = out.join("epochs.jsonl");
    if log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    write_epoch_log(&log_path, &outcome.reports)?;

    let split = if ds.has_split(cfg.eval_split) { cfg.eval_split } else { Split::Train };
    let best = evaluate_split(&outcome.best, &ds, split)?;
    let last = evaluate_split(&outcome.last, &ds, split)?;
    write_json(&out.join("report.json"), &serde_json::json!({ "best": best, "best_epoch": outcome.best.epoch, "last": last }))?;
    let mut md = format!("## Best epoch ({})\n\n", outcome.best.epoch);
    md.push_str(&metrics_markdown(&best));
    md.push_str("\n## Last epoch\n\n");
    md.push_str(&metrics_markdown(&last));
    fs::write(out.join("report.md"), md)?;
    if a.charts {
        let table = ComparisonTable::from_reports(
            "Training",
            "Checkpoint",
            &[("best".to_string(), &best), ("last".to_string(), &last)],
        )?;
        render_report(&table, out, "report", &[], true)?;
    }
    println!("best {} average weighted-F1 {:.4} (epoch {})", split, best.average, outcome.best.epoch);
    Ok(())
}

fn lexicon_cmd(a: LexiconArgs) -> Result<()> {
    let (_, rec_cfg) = configs(&a.common)?;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    let ds = load(&a.data)?;
    let (rec, history) = train_recognizer(&ds, &rec_cfg)?;
    let saliencies = compute_saliencies(&rec, &ds, Split::Train)?;
    let lexicon = extract_lexicon(&saliencies);
    lexicon.write_tsv(&out.join("lexicon.tsv"), &ds.languages)?;
    write_saliency_dump(&out.join("saliency.jsonl"), &saliencies)?;
    let accuracy = if ds.has_split(rec_cfg.eval_split) {
        Some(recognizer_accuracy(&rec, &ds, rec_cfg.eval_split)?)
    } else {
        None
    };
    write_json(
        &out.join("recognizer.json"),
        &serde_json::json!({
            "saliency_split": "train",
            "eval_split": rec_cfg.eval_split.as_str(),
            "accuracy": accuracy,
            "history": history,
        }),
    )?;
    for l in &ds.languages {
        println!("{}: {} language-specific words", l.code, lexicon.language_words(l.index).len());
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(s.parse()?)
}

fn evaluate_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = load(&a.data)?;
    let report = evaluate_split(&ckpt, &ds, parse_split(&a.split)?)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    fs::write(a.out.join("report.md"), metrics_markdown(&report))?;
    println!("{} average weighted-F1 {:.4}", report.split, report.average);
    Ok(())
}

fn predict_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = load(&a.data)?;
    let split = parse_split(&a.split)?;
    let examples: Vec<&Example> = ds.split(split).collect();
    if examples.is_empty() {
        return Err(dravida_core::Error::EmptySplit(split.to_string()).into());
    }
    let predictions = ckpt.predict(&ds, &examples)?;
    let mut tsv = String::new();
    for p in &predictions {
        let labels = &ckpt.schemas[p.language].labels;
        tsv.push_str(&format!("{}\t{}\t{}\n", ckpt.languages[p.language].code, labels[p.gold], labels[p.pred]));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, tsv)?;
    println!("{} predictions written to {}", predictions.len(), a.out.display());
    Ok(())
}

fn write_table(table: &ComparisonTable, out: &Path, stem: &str, charts: bool) -> Result<()> {
    render_report(table, out, stem, &[Format::Markdown, Format::Json], charts)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn ablate_cmd(a: TrainArgs) -> Result<()> {
    let (cfg, rec_cfg) = configs(&a.common)?;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    let ds = load(&a.data)?;
    let mut weighted = cfg.clone();
    weighted.adversarial = true;
    let lexicon = lexicon_for(a.lexicon.as_deref(), &ds, &weighted, &rec_cfg, out)?;
    let result = run_ablation(&ds, &cfg, lexicon.as_ref())?;
    write_json(&out.join("ablation_full.json"), &result)?;
    write_table(&result.to_table(true)?, out, "ablation_last", false)?;
    write_table(&result.to_table(false)?, out, "ablation", a.charts)?;
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let (cfg, rec_cfg) = configs(&a.common)?;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    let ds = load(&a.data)?;
    let mut weighted = cfg.clone();
    weighted.adversarial = true;
    if weighted.perturbation.alpha_specific == weighted.perturbation.alpha_other {
        weighted.perturbation.alpha_specific += 0.5;
    }
    let lexicon = lexicon_for(a.lexicon.as_deref(), &ds, &weighted, &rec_cfg, out)?;
    let result = alpha_sweep(&ds, &cfg, &a.alphas, lexicon.as_ref())?;
    write_json(&out.join("sweep_full.json"), &result)?;
    write_table(&result.to_table(true)?, out, "sweep_last", false)?;
    write_table(&result.to_table(false)?, out, "sweep", a.charts)?;
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let raw = fs::read_to_string(&a.input).map_err(|source| dravida_core::Error::Load {
        path: a.input.clone(),
        source,
    })?;
    let table: ComparisonTable = serde_json::from_str(&raw)?;
    let formats = a
        .format
        .iter()
        .map(|f| f.parse::<Format>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let written = render_report(&table, &a.out, stem, &formats, a.charts)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let report = dataset_stats(&ds);
    match &a.out {
        Some(out) => {
            fs::create_dir_all(out)?;
            fs::write(out.join("stats.json"), report.to_json()?)?;
            fs::write(out.join("stats.md"), report.to_markdown())?;
        }
        None => print!("{}", report.to_markdown()),
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let corpus = synthetic::generate(&SyntheticConfig {
        seed: a.seed,
        train_per_language: a.train_per_language,
        dev_per_language: a.dev_per_language,
        test_per_language: a.test_per_language,
        ..Default::default()
    })?;
    let manifest = corpus.dataset.write_manifest(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

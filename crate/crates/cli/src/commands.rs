//! One function per subcommand. Each resolves its output directory, does
//! the work through the core library and finishes by writing a run
//! manifest.

use crate::args::*;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use glyphgen::analysis::{
    bicluster_reorder_with, impression_interpolation_grid, noise_interpolation_grid, posterior_correlation, ImageGrid,
};
use glyphgen::checkpoint::{load_checkpoint, save_checkpoint};
use glyphgen::corpus::{
    corpus_stats, filter_vocabulary, load_corpus, load_corpus_lenient, save_corpus, split, synthesize_corpus,
    SynthSpec,
};
use glyphgen::evaluation::{
    fid, fit_impression_classifier, intra_fid, map_test_with, map_train, missing_ratio_sweep, ClassifierConfig,
    CnnExtractor, EvalReport, GenerationProtocol,
};
use glyphgen::glyph::{char_at, parse_chars, save_gray_png};
use glyphgen::labelspace::build_cooccurrence_allowing_unseen;
use glyphgen::semantics::{EmbeddingProvider, FileProvider, HashProvider};
use glyphgen::training::{train, Model, TrainConfig, TrainOptions};
use glyphgen::Corpus;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Paper-scale and desk-scale defaults of the evaluation commands.
pub struct EvalDefaults {
    pub fid_per_char: usize,
    pub min_class_size: usize,
    pub per_class: usize,
}

impl EvalDefaults {
    pub fn for_profile(desk: bool) -> Self {
        if desk {
            Self {
                fid_per_char: 50,
                min_class_size: 20,
                per_class: 50,
            }
        } else {
            Self {
                fid_per_char: 5000,
                min_class_size: 200,
                per_class: 5000,
            }
        }
    }
}

/// Parses and runs one argument vector (program name excluded).
pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    match cli.command {
        Command::Corpus(CorpusCommand::Synth(a)) => corpus_synth(&a, args),
        Command::Corpus(CorpusCommand::Load(a)) => corpus_load(&a, args, "corpus-load"),
        Command::Corpus(CorpusCommand::Stats(a)) => corpus_load(&a, args, "corpus-stats"),
        Command::Train(a) => train_command(&a, args),
        Command::Eval(e) => eval_command(e, args),
        Command::Generate(a) => generate(&a, args),
        Command::Interpolate(InterpolateCommand::Impression(a)) => interpolate_impression(&a, args),
        Command::Interpolate(InterpolateCommand::Noise(a)) => interpolate_noise(&a, args),
        Command::Analyze(AnalyzeCommand::Correlation(a)) => analyze_correlation(&a, args),
        Command::Serve(a) => serve(&a, args),
        Command::Replay(a) => replay(&a),
    }
}

fn out_dir(out: &OutArgs, command: &str) -> Result<PathBuf> {
    let dir = match &out.out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_text(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    manifest.output(name);
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T, manifest: &mut RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(glyphgen::Error::from)?;
    write_text(dir, name, &text, manifest)
}

pub fn load_source(source: &CorpusSource) -> Result<(Corpus, Vec<String>)> {
    let manifest = source.manifest.clone().unwrap_or_else(|| source.corpus.join("manifest.json"));
    if source.lenient {
        let (corpus, report) = load_corpus_lenient(&source.corpus, &manifest)?;
        Ok((corpus, report.skipped.iter().map(ToString::to_string).collect()))
    } else {
        Ok((load_corpus(&source.corpus, &manifest)?, Vec::new()))
    }
}

/// Restricts `corpus` to the model's vocabulary, failing when it cannot
/// reproduce it exactly.
fn align_to_model(corpus: Corpus, model: &Model) -> Result<Corpus> {
    let wanted = model.vocabulary.labels();
    let corpus = if corpus.vocabulary().labels() == wanted {
        corpus
    } else {
        let provider = HashProvider::with_vocabulary(1, 0, wanted.iter().cloned());
        filter_vocabulary(&corpus, &provider)?.0
    };
    if corpus.vocabulary().labels() != wanted {
        return Err(CliError::Config(
            "corpus vocabulary does not match the checkpoint; pass the corpus it was trained on".into(),
        ));
    }
    Ok(corpus)
}

fn impressions(list: &[Impression]) -> Vec<(String, f64)> {
    list.iter().map(|i| (i.label.clone(), i.weight)).collect()
}

fn corpus_synth(a: &SynthArgs, args: &[String]) -> Result<()> {
    let dir = out_dir(&a.out, "corpus")?;
    let spec = SynthSpec {
        n_fonts: a.fonts,
        n_labels: a.labels,
        noise_rate: a.noise_rate,
        seed: a.seed,
        resolution: a.resolution.unwrap_or(if a.desk { 16 } else { 64 }),
        ..SynthSpec::default()
    };
    let synth = synthesize_corpus(&spec)?;
    save_corpus(&synth.corpus, &dir)?;
    let mut m = RunManifest::new("corpus synth", args, &dir);
    m.seed("synth", a.seed).output("manifest.json");
    write_json(&dir, "truth.json", &synth.truth, &mut m)?;
    write_json(&dir, "stats.json", &corpus_stats(&synth.corpus), &mut m)?;
    m.details = json!({
        "fonts": synth.corpus.len(),
        "labels": synth.corpus.k(),
        "resolution": spec.resolution,
        "withheld": synth.truth.withheld_count(),
        "true_labels": synth.truth.true_count(),
    });
    m.write()?;
    println!("{}", serde_json::to_string(&m.details).map_err(glyphgen::Error::from)?);
    Ok(())
}

fn corpus_load(a: &LoadArgs, args: &[String], command: &str) -> Result<()> {
    let (corpus, skipped) = load_source(&a.source)?;
    let dir = out_dir(&a.out, command)?;
    let stats = corpus_stats(&corpus);
    let mut m = RunManifest::new(&command.replace('-', " "), args, &dir);
    write_json(&dir, "stats.json", &stats, &mut m)?;
    if command == "corpus-load" {
        write_json(&dir, "skipped.json", &skipped, &mut m)?;
    }
    m.details = json!({ "fonts": stats.fonts, "labels": stats.labels, "skipped": skipped.len() });
    m.write()?;
    println!("{}", serde_json::to_string_pretty(&stats).map_err(glyphgen::Error::from)?);
    Ok(())
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// The base profile, overlaid with the config file and then the flags.
pub fn resolve_train_config(a: &TrainArgs, num_labels: usize, embed_dim: Option<usize>) -> Result<TrainConfig> {
    let base = if a.desk {
        TrainConfig::desk(num_labels)
    } else {
        TrainConfig::paper(num_labels)
    };
    let mut value = serde_json::to_value(&base).map_err(glyphgen::Error::from)?;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let over: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        merge(&mut value, over);
    }
    let mut cfg: TrainConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("training config: {e}")))?;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.stage_len {
        cfg.stage_len = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.no_cmle {
        cfg.use_cmle = false;
    }
    if let Some(d) = embed_dim {
        cfg.model.embed_dim = d;
    }
    cfg.model.num_labels = num_labels;
    cfg.validate()?;
    Ok(cfg)
}

fn train_command(a: &TrainArgs, args: &[String]) -> Result<()> {
    let (corpus, skipped) = load_source(&a.source)?;
    let file_provider = a.embeddings.as_deref().map(FileProvider::open).transpose()?;
    let (corpus, filter) = match &file_provider {
        Some(p) => filter_vocabulary(&corpus, p)?,
        None => (corpus, Default::default()),
    };
    let cfg = resolve_train_config(a, corpus.k(), file_provider.as_ref().map(|p| p.dimension()))?;
    let hash_provider = HashProvider::new(cfg.model.embed_dim, 0);
    let provider: &dyn EmbeddingProvider = match &file_provider {
        Some(p) => p,
        None => &hash_provider,
    };
    let (train_split, test_split) = split(&corpus, a.split.test_fraction, a.split.split_seed)?;
    let dir = out_dir(&a.out, "train")?;
    let t = build_cooccurrence_allowing_unseen(&train_split.label_matrix());
    let outcome = train(
        &cfg,
        &train_split,
        &t,
        provider,
        &TrainOptions {
            out_dir: Some(dir.clone()),
        },
    )?;
    let mut m = RunManifest::new("train", args, &dir);
    m.config_hash = Some(cfg.hash());
    m.seed("train", cfg.seed).seed("split", a.split.split_seed);
    save_checkpoint(&outcome.model, &dir.join("model.ckpt"))?;
    m.output("model.ckpt").output("telemetry.jsonl");
    for c in &outcome.checkpoints {
        if let Some(name) = c.file_name() {
            m.output(name.to_string_lossy());
        }
    }
    write_json(&dir, "config.json", &cfg, &mut m)?;
    let split_ids = json!({
        "test_fraction": a.split.test_fraction,
        "split_seed": a.split.split_seed,
        "train": train_split.records().iter().map(|r| &r.font_id).collect::<Vec<_>>(),
        "test": test_split.records().iter().map(|r| &r.font_id).collect::<Vec<_>>(),
    });
    write_json(&dir, "split.json", &split_ids, &mut m)?;
    let last = outcome.telemetry.last();
    m.details = json!({
        "embeddings": provider.describe(),
        "dropped_labels": filter.dropped_labels,
        "dropped_fonts": filter.dropped_fonts,
        "skipped_fonts": skipped,
        "iterations": outcome.model.iteration,
        "resolution": outcome.model.resolution(),
        "final_generator_loss": last.map(|r| r.generator_total),
        "final_critic_loss": last.map(|r| r.critic_total),
    });
    m.write()?;
    println!("{}", dir.join("model.ckpt").display());
    Ok(())
}

struct EvalContext {
    model: Model,
    corpus: Corpus,
    train: Corpus,
    test: Corpus,
    dir: PathBuf,
    manifest: RunManifest,
    protocol: GenerationProtocol,
}

fn eval_context(e: &EvalArgs, args: &[String], command: &str) -> Result<EvalContext> {
    let model = load_checkpoint(&e.checkpoint)?;
    let corpus = align_to_model(load_source(&e.source)?.0, &model)?;
    let (train, test) = split(&corpus, e.split.test_fraction, e.split.split_seed)?;
    let dir = out_dir(&e.out, command)?;
    let mut manifest = RunManifest::new(&command.replace("eval-", "eval "), args, &dir);
    manifest.config_hash = Some(model.config_hash.clone());
    manifest.seed("eval", e.seed).seed("split", e.split.split_seed);
    let protocol = GenerationProtocol {
        chars: parse_chars(&e.chars)?,
        seed: e.seed,
    };
    Ok(EvalContext {
        model,
        corpus,
        train,
        test,
        dir,
        manifest,
        protocol,
    })
}

fn report(ctx: &EvalContext, metric: &str, value: f64, extractor: Option<String>, details: serde_json::Value) -> EvalReport {
    let details = match details {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    EvalReport {
        metric: metric.into(),
        value,
        config_hash: ctx.model.config_hash.clone(),
        iteration: ctx.model.iteration,
        seed: ctx.protocol.seed,
        extractor,
        details,
    }
}

fn finish_eval(mut ctx: EvalContext, r: EvalReport) -> Result<()> {
    write_json(&ctx.dir, "report.json", &r, &mut ctx.manifest)?;
    ctx.manifest.details = json!({ "metric": r.metric, "value": r.value });
    ctx.manifest.write()?;
    println!("{}", serde_json::to_string_pretty(&r).map_err(glyphgen::Error::from)?);
    Ok(())
}

fn extractor_for(ctx: &EvalContext) -> Result<CnnExtractor> {
    let side = ctx.model.resolution();
    let images = ctx
        .train
        .records()
        .iter()
        .flat_map(|r| r.glyphs.iter().map(move |g| g.resize(side)))
        .collect::<glyphgen::Result<Vec<_>>>()?;
    Ok(CnnExtractor::train(&images, side, &ClassifierConfig::default())?)
}

fn eval_command(cmd: EvalCommand, args: &[String]) -> Result<()> {
    match cmd {
        EvalCommand::Fid(a) => {
            let per_char = a.per_char.unwrap_or(EvalDefaults::for_profile(a.eval.desk).fid_per_char);
            let ctx = eval_context(&a.eval, args, "eval-fid")?;
            let ext = extractor_for(&ctx)?;
            let r = fid(&ctx.model, &ctx.corpus, &ext, per_char, ctx.protocol.seed)?;
            let rep = report(
                &ctx,
                "fid",
                r.fid,
                Some(r.extractor.clone()),
                json!({ "generated": r.generated, "real": r.real, "per_char": per_char }),
            );
            finish_eval(ctx, rep)
        }
        EvalCommand::IntraFid(a) => {
            let d = EvalDefaults::for_profile(a.eval.desk);
            let min = a.min_class_size.unwrap_or(d.min_class_size);
            let per_class = a.per_class.unwrap_or(d.per_class);
            let ctx = eval_context(&a.eval, args, "eval-intra-fid")?;
            let ext = extractor_for(&ctx)?;
            let r = intra_fid(&ctx.model, &ctx.corpus, &ext, min, per_class, ctx.protocol.seed)?;
            let classes: BTreeMap<_, _> = r.classes.iter().cloned().collect();
            let rep = report(
                &ctx,
                "intra_fid",
                r.mean,
                Some(r.extractor.clone()),
                json!({ "classes": classes, "min_class_size": min, "per_class": per_class }),
            );
            finish_eval(ctx, rep)
        }
        EvalCommand::MapTest(a) => {
            let ctx = eval_context(&a, args, "eval-map-test")?;
            let clf = fit_impression_classifier(&ctx.train, ctx.model.resolution(), &ClassifierConfig::default())?;
            let r = map_test_with(&ctx.model, &ctx.test, &clf, &ctx.protocol)?;
            let rep = report(
                &ctx,
                "map_test",
                r.map,
                None,
                json!({ "skipped_labels": r.skipped, "classifier": clf.fingerprint() }),
            );
            finish_eval(ctx, rep)
        }
        EvalCommand::MapTrain(a) => {
            let ctx = eval_context(&a, args, "eval-map-train")?;
            let r = map_train(&ctx.model, &ctx.train, &ctx.test, &ClassifierConfig::default(), &ctx.protocol)?;
            let rep = report(&ctx, "map_train", r.map, None, json!({ "skipped_labels": r.skipped }));
            finish_eval(ctx, rep)
        }
        EvalCommand::Sweep(a) => {
            let mut ctx = eval_context(&a.eval, args, "eval-sweep")?;
            let clf = fit_impression_classifier(&ctx.train, ctx.model.resolution(), &ClassifierConfig::default())?;
            let curve = missing_ratio_sweep(&ctx.model, &ctx.test, &clf, &a.ratios, &ctx.protocol, ctx.protocol.seed)?;
            write_text(&ctx.dir, "sweep.csv", &curve.to_csv(), &mut ctx.manifest)?;
            let first = curve.points.first().map(|p| p.map_test).unwrap_or(f64::NAN);
            let rep = report(&ctx, "sweep", first, None, json!({ "points": curve.points }));
            finish_eval(ctx, rep)
        }
    }
}

fn generate(a: &GenerateArgs, args: &[String]) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let imps = impressions(&a.impressions);
    let classes = parse_chars(&a.chars)?;
    let cond = model.condition(&model.impression_vector(&imps)?)?;
    let images = model.render(&cond, &model.noise(a.seed), &classes)?;
    let dir = out_dir(&a.out, "generate")?;
    let mut m = RunManifest::new("generate", args, &dir);
    m.config_hash = Some(model.config_hash.clone());
    m.seed("noise", a.seed);
    for (i, (g, &c)) in images.iter().zip(&classes).enumerate() {
        let name = format!("{i:02}-{}.png", char_at(c));
        g.save_png(&dir.join(&name))?;
        m.output(name);
    }
    m.details = json!({ "effective_condition": model.effective_condition(&cond.completed, 20) });
    m.write()?;
    println!("{}", dir.display());
    Ok(())
}

fn write_grid(grid: &ImageGrid, dir: &Path, m: &mut RunManifest) -> Result<()> {
    grid.save_png(&dir.join("grid.png"))?;
    m.output("grid.png");
    m.details = json!({ "lambdas": grid.lambdas, "rows": grid.rows.len() });
    m.write()?;
    println!("{}", dir.join("grid.png").display());
    Ok(())
}

fn interpolate_impression(a: &ImpressionInterpArgs, args: &[String]) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let grid = impression_interpolation_grid(
        &model,
        &impressions(&a.from),
        &impressions(&a.to),
        &a.lambdas,
        &a.chars,
        a.seed,
    )?;
    let dir = out_dir(&a.out, "interpolate-impression")?;
    let mut m = RunManifest::new("interpolate impression", args, &dir);
    m.config_hash = Some(model.config_hash.clone());
    m.seed("noise", a.seed);
    write_grid(&grid, &dir, &mut m)
}

fn interpolate_noise(a: &NoiseInterpArgs, args: &[String]) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let grid = noise_interpolation_grid(&model, &impressions(&a.impressions), a.seed, a.seed_2, &a.lambdas, &a.chars)?;
    let dir = out_dir(&a.out, "interpolate-noise")?;
    let mut m = RunManifest::new("interpolate noise", args, &dir);
    m.config_hash = Some(model.config_hash.clone());
    m.seed("noise", a.seed).seed("noise_2", a.seed_2);
    write_grid(&grid, &dir, &mut m)
}

fn analyze_correlation(a: &CorrelationArgs, args: &[String]) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let corpus = align_to_model(load_source(&a.source)?.0, &model)?;
    let top_m = a.top_m.min(model.k());
    let c = posterior_correlation(&model, &corpus, top_m)?;
    let perm = bicluster_reorder_with(&c, a.clusters, a.seed)?;
    let r = c.reordered(&perm)?;
    let dir = out_dir(&a.out, "analyze-correlation")?;
    let mut m = RunManifest::new("analyze correlation", args, &dir);
    m.config_hash = Some(model.config_hash.clone());
    m.seed("bicluster", a.seed);
    write_text(&dir, "correlation.csv", &c.to_csv(), &mut m)?;
    write_text(&dir, "correlation-reordered.csv", &r.to_csv(), &mut m)?;
    for (name, mat) in [("heatmap.png", &c), ("heatmap-reordered.png", &r)] {
        let (w, h, px) = mat.heatmap(a.cell);
        save_gray_png(&dir.join(name), w, h, &px)?;
        m.output(name);
    }
    m.details = json!({
        "top_m": top_m,
        "order": perm.iter().map(|&i| c.labels[i].clone()).collect::<Vec<_>>(),
        "constant_labels": c.labels.iter().zip(&c.constant).filter(|(_, &k)| k).map(|(l, _)| l).collect::<Vec<_>>(),
    });
    m.write()?;
    println!("{}", dir.display());
    Ok(())
}

fn serve(a: &ServeArgs, args: &[String]) -> Result<()> {
    let dir = out_dir(&a.out, "serve")?;
    let mut m = RunManifest::new("serve", args, &dir);
    let model = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    m.config_hash = model.as_ref().map(|mo| mo.config_hash.clone());
    m.details = json!({ "host": a.host, "port": a.port, "checkpoint": a.checkpoint });
    m.write()?;
    let state = crate::service::AppState::new(model, a.checkpoint.clone(), crate::service::admin_token_from_env());
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
    rt.block_on(crate::service::serve(state, &addr))
}

fn replay(a: &ReplayArgs) -> Result<()> {
    use clap::Parser;
    let m = RunManifest::read(&a.manifest)?;
    let args = m.replay_args(a.out.as_deref());
    let cli = Cli::try_parse_from(std::iter::once("glyphgen".to_string()).chain(args.iter().cloned()))
        .map_err(|e| CliError::Config(format!("manifest {} does not parse: {e}", a.manifest.display())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Config("a replay manifest cannot replay itself".into()));
    }
    run(cli, &args)
}

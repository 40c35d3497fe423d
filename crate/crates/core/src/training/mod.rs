//! Progressive adversarial training with co-occurrence completed targets,
//! the label-space compressor, the perturbed semantic condition and the
//! style-consistency critic.

mod losses;
mod model;
mod pairs;

pub use losses::{bce_loss, char_kl_loss, gradient_penalty, style_hinge, BCE_EPS};
pub use model::{Condition, Model, RenderItem, RENDER_CHUNK};
pub use pairs::{make_style_pairs, StylePair, StylePairBatch};

use crate::autodiff::{grad, no_grad, Tensor};
use crate::checkpoint::save_checkpoint;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::glyph::NUM_CHARS;
use crate::labelspace::{complete_all, CooccurrenceMatrix};
use crate::nets::{
    growth_schedule, one_hot_chars, ConditionBundle, GrowthConfig, ModelConfig, Networks, ParamSet,
    ProgressiveStage,
};
use crate::nn::{Adam, AdamConfig, Bound};
use crate::semantics::{perturbation_noise, semantic_condition, EmbeddingProvider, EmbeddingTable};
use crate::util::{normal_vec, rng_for, sha256_hex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

const TAG_INIT: u64 = 0x1417;
const TAG_BATCH: u64 = 0xba7c;
const TAG_GP: u64 = 0x6e9;
const TAG_PAIRS: u64 = 0x9a1;
const TAG_GEN: u64 = 0x6e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub stage_len: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Generator updates per critic update.
    pub generator_steps: usize,
    pub critic_steps: usize,
    pub gp_weight: f64,
    /// Keeps critic scores from drifting away from zero.
    pub drift_weight: f64,
    pub bce_weight: f64,
    pub char_kl_weight: f64,
    pub style_weight: f64,
    pub char_kl_real: bool,
    pub char_kl_fake: bool,
    /// Off trains the ablation that sees raw labels instead of completed ones.
    pub use_cmle: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Full-scale settings.
    pub fn paper(num_labels: usize) -> Self {
        Self {
            iterations: 90_000,
            stage_len: 15_000,
            batch_size: 512,
            adam: AdamConfig::default(),
            generator_steps: 1,
            critic_steps: 1,
            gp_weight: 10.0,
            drift_weight: 0.001,
            bce_weight: 1.0,
            char_kl_weight: 1.0,
            style_weight: 1.0,
            char_kl_real: true,
            char_kl_fake: true,
            use_cmle: true,
            seed: 0,
            checkpoint_every: 1_000,
            model: ModelConfig::full(num_labels),
        }
    }

    /// Laptop-scale settings: 16x16 cap, narrow networks, short stages.
    pub fn desk(num_labels: usize) -> Self {
        Self {
            iterations: 900,
            stage_len: 300,
            batch_size: 32,
            // A hundred times fewer iterations than full scale.
            adam: AdamConfig {
                lr: 0.002,
                ..AdamConfig::default()
            },
            checkpoint_every: 50,
            model: ModelConfig {
                num_labels,
                z_dim: 32,
                embed_dim: 32,
                ilsc_dim: (num_labels * 2 / 5).clamp(1, num_labels.saturating_sub(1).max(1)),
                channels: vec![32, 32, 16],
                max_stage: 2,
                style_refs: 4,
                style_resolution: 16,
                style_channels: 8,
                style_features: 16,
                impression_input: true,
            },
            ..Self::paper(num_labels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.iterations < self.stage_len || self.stage_len == 0 {
            return Err(Error::Config(format!(
                "iterations {} must be at least stage_len {} > 0",
                self.iterations, self.stage_len
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.generator_steps == 0 || self.critic_steps == 0 {
            return Err(Error::Config("update ratio terms must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig {
            stage_len: self.stage_len,
            max_stage: self.model.max_stage,
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Loss terms of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub stage: usize,
    pub alpha: f64,
    /// `mean critic(fake) - mean critic(real)`
    pub critic_adversarial: f64,
    pub gradient_penalty: f64,
    pub drift: f64,
    pub bce: f64,
    pub char_kl_real: f64,
    pub style_critic: f64,
    pub critic_total: f64,
    /// `-mean critic(fake)`
    pub generator_adversarial: f64,
    pub char_kl_fake: f64,
    /// BCE between the generator's impression condition and the compressed
    /// posterior of its own output.
    pub bce_fake: f64,
    pub style_generator: f64,
    pub generator_total: f64,
}

impl LossReport {
    fn values(&self) -> [(&'static str, f64); 12] {
        [
            ("critic_adversarial", self.critic_adversarial),
            ("gradient_penalty", self.gradient_penalty),
            ("drift", self.drift),
            ("bce", self.bce),
            ("char_kl_real", self.char_kl_real),
            ("style_critic", self.style_critic),
            ("critic_total", self.critic_total),
            ("generator_adversarial", self.generator_adversarial),
            ("char_kl_fake", self.char_kl_fake),
            ("bce_fake", self.bce_fake),
            ("style_generator", self.style_generator),
            ("generator_total", self.generator_total),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|(_, v)| v.is_finite())
    }

    fn non_finite(&self) -> Vec<&'static str> {
        self.values()
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Where the loop writes telemetry and checkpoints; `None` keeps everything
/// in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub telemetry: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Glyphs of every font at one side, `N x 26 x side^2`.
struct GlyphCache {
    side: usize,
    data: Vec<f64>,
}

impl GlyphCache {
    fn new(corpus: &Corpus, side: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(corpus.len() * NUM_CHARS * side * side);
        for r in corpus.records() {
            for g in &r.glyphs {
                data.extend(g.resize(side)?.to_f64());
            }
        }
        Ok(Self { side, data })
    }

    fn batch(&self, items: impl Iterator<Item = (usize, usize)>) -> Tensor {
        let px = self.side * self.side;
        let mut out = Vec::new();
        for (font, ch) in items {
            let start = (font * NUM_CHARS + ch) * px;
            out.extend_from_slice(&self.data[start..start + px]);
        }
        let n = out.len() / px;
        Tensor::new(out, &[n, self.side, self.side, 1])
    }
}

/// Blends in the lower-resolution version of real images while a new block
/// fades in, so reals and fakes share the same blur.
fn fade_reals(x: Tensor, stage: ProgressiveStage) -> Tensor {
    if stage.stage == 0 || stage.alpha >= 1.0 {
        return x;
    }
    let low = x.avg_pool2().upsample2();
    low.scale(1.0 - stage.alpha).add(&x.scale(stage.alpha))
}

fn grads_for(loss: &Tensor, bounds: &[&Bound]) -> Vec<Vec<Tensor>> {
    let leaves: Vec<&Tensor> = bounds.iter().flat_map(|b| b.leaves()).collect();
    let mut all = grad(loss, &leaves, false).into_iter();
    bounds
        .iter()
        .map(|b| all.by_ref().take(b.leaves().len()).collect())
        .collect()
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    corpus: &'a Corpus,
    nets: Networks,
    params: ParamSet,
    opt_g: Adam,
    opt_d: Adam,
    opt_i: Adam,
    opt_s: Adam,
    targets: Vec<Vec<f64>>,
    semantics: Vec<Vec<f64>>,
    caches: Vec<Option<GlyphCache>>,
}

impl Trainer<'_> {
    fn cache(&mut self, stage: usize) -> Result<&GlyphCache> {
        if self.caches[stage].is_none() {
            self.caches[stage] = Some(GlyphCache::new(self.corpus, ProgressiveStage::steady(stage).resolution())?);
        }
        Ok(self.caches[stage].as_ref().expect("filled above"))
    }

    fn rows(&self, source: &[Vec<f64>], fonts: &[usize]) -> Tensor {
        let w = source[0].len();
        let data: Vec<f64> = fonts.iter().flat_map(|&f| source[f].iter().copied()).collect();
        Tensor::new(data, &[fonts.len(), w])
    }

    fn step(&mut self, it: usize, stage: ProgressiveStage) -> Result<LossReport> {
        let cfg = self.cfg;
        let b = cfg.batch_size;
        let mcfg = &cfg.model;
        let n_fonts = self.corpus.len();
        let mut rng = rng_for(cfg.seed, &[TAG_BATCH, it as u64]);
        let fonts: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_fonts)).collect();
        let chars: Vec<usize> = (0..b).map(|_| rng.random_range(0..NUM_CHARS)).collect();
        let onehot = one_hot_chars(&chars);
        let targets = self.rows(&self.targets, &fonts);
        let sem = self.rows(&self.semantics, &fonts);
        let pairs = make_style_pairs(&fonts, n_fonts, mcfg.style_refs, cfg.seed ^ (it as u64).wrapping_mul(TAG_PAIRS))?;
        let cache = self.cache(stage.stage)?;
        let real = fade_reals(cache.batch(fonts.iter().copied().zip(chars.iter().copied())), stage);
        let refs = |pick: &dyn Fn(&StylePair) -> (usize, &[usize])| -> Vec<Tensor> {
            (0..mcfg.style_refs)
                .map(|j| fade_reals(cache.batch(pairs.pairs.iter().map(|p| (pick(p).0, pick(p).1[j]))), stage))
                .collect()
        };
        let refs_same = refs(&|p| (p.font, &p.consistent_chars));
        let refs_other = refs(&|p| (p.other_font, &p.inconsistent_chars));
        let z_d = Tensor::new(normal_vec(&mut rng, b * mcfg.z_dim), &[b, mcfg.z_dim]);
        let z_g = Tensor::new(normal_vec(&mut rng, b * mcfg.z_dim), &[b, mcfg.z_dim]);
        let eps_seed: u64 = rng.random();
        let eps_d = perturbation_noise(eps_seed, b, mcfg.embed_dim);
        let eps_g = perturbation_noise(eps_seed ^ TAG_GEN, b, mcfg.embed_dim);
        let nets = &self.nets;

        // Critic side: discriminator trunk and heads, compressor, style critic.
        let mut report_d = None;
        let mut condition = None;
        for _ in 0..cfg.critic_steps {
            let pd = self.params.discriminator.bind(true);
            let pi = self.params.ilsc.bind(true);
            let ps = self.params.style.bind(true);
            let out_r = nets.discriminator.forward(&pd, &real, stage)?;
            let y_ilsc = nets.ilsc.forward(&pi, &out_r.aux).reconstructed;
            let bce = bce_loss(&targets, &y_ilsc);
            let kl_real = if cfg.char_kl_real {
                char_kl_loss(&out_r.char_logits, &onehot)
            } else {
                Tensor::scalar(0.0)
            };
            let cond = y_ilsc.detach();
            let fake = {
                let _g = no_grad();
                let pg = self.params.generator.bind(false);
                let s_prime = nets.generator.perturb.forward(&pg, &sem, Some(&eps_d));
                let bundle = ConditionBundle {
                    z: z_d.clone(),
                    chars: onehot.clone(),
                    impression: cond.clone(),
                    semantic: s_prime,
                };
                nets.generator.forward(&pg, &bundle, stage)?
            };
            let critic_f = nets.discriminator.critic(&pd, &fake, stage)?;
            let adv = critic_f.mean().sub(&out_r.critic.mean());
            let mut gp_rng = rng_for(cfg.seed, &[TAG_GP, it as u64]);
            let critic_fn = |x: &Tensor| nets.discriminator.critic(&pd, x, stage);
            let gp = gradient_penalty(&critic_fn, &real, &fake, cfg.gp_weight, &mut gp_rng)?;
            let drift = out_r.critic.square().mean().scale(cfg.drift_weight);
            let style = if cfg.style_weight > 0.0 {
                let same = nets.style.forward(&ps, &fake, &refs_same)?;
                let other = nets.style.forward(&ps, &fake, &refs_other)?;
                style_hinge(&same, &other)
            } else {
                Tensor::scalar(0.0)
            };
            let total = adv
                .add(&gp)
                .add(&drift)
                .add(&bce.scale(cfg.bce_weight))
                .add(&kl_real.scale(cfg.char_kl_weight))
                .add(&style.scale(cfg.style_weight));
            let report = (
                adv.item(),
                gp.item(),
                drift.item(),
                bce.item(),
                kl_real.item(),
                style.item(),
                total.item(),
            );
            if total.item().is_finite() {
                let g = grads_for(&total, &[&pd, &pi, &ps]);
                self.opt_d.step(&mut self.params.discriminator, &g[0]);
                self.opt_i.step(&mut self.params.ilsc, &g[1]);
                self.opt_s.step(&mut self.params.style, &g[2]);
            }
            report_d = Some(report);
            condition = Some(cond);
        }
        let (adv, gp, drift, bce, kl_real, style_d, total_d) = report_d.expect("at least one critic step");
        let cond = condition.expect("at least one critic step");

        // Generator side, including the perturbation head.
        let mut report_g = (0.0, 0.0, 0.0, 0.0, 0.0);
        if total_d.is_finite() {
            for _ in 0..cfg.generator_steps {
                let pg = self.params.generator.bind(true);
                let pd = self.params.discriminator.bind(false);
                let pi = self.params.ilsc.bind(false);
                let ps = self.params.style.bind(false);
                let s_prime = nets.generator.perturb.forward(&pg, &sem, Some(&eps_g));
                let bundle = ConditionBundle {
                    z: z_g.clone(),
                    chars: onehot.clone(),
                    impression: cond.clone(),
                    semantic: s_prime,
                };
                let fake = nets.generator.forward(&pg, &bundle, stage)?;
                let out_f = nets.discriminator.forward(&pd, &fake, stage)?;
                let g_adv = out_f.critic.mean().neg();
                let kl_fake = if cfg.char_kl_fake {
                    char_kl_loss(&out_f.char_logits, &onehot)
                } else {
                    Tensor::scalar(0.0)
                };
                let bce_fake = bce_loss(&cond, &nets.ilsc.forward(&pi, &out_f.aux).reconstructed);
                let style_g = if cfg.style_weight > 0.0 {
                    let code = {
                        let _g = no_grad();
                        nets.style.encode_references(&ps, &refs_same)?
                    };
                    nets.style.score_encoded(&ps, &fake, &code)?.mean().neg()
                } else {
                    Tensor::scalar(0.0)
                };
                let total = g_adv
                    .add(&kl_fake.scale(cfg.char_kl_weight))
                    .add(&bce_fake.scale(cfg.bce_weight))
                    .add(&style_g.scale(cfg.style_weight));
                report_g = (g_adv.item(), kl_fake.item(), bce_fake.item(), style_g.item(), total.item());
                if !total.item().is_finite() {
                    break;
                }
                let g = grads_for(&total, &[&pg]);
                self.opt_g.step(&mut self.params.generator, &g[0]);
            }
        } else {
            report_g = (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        }
        Ok(LossReport {
            iteration: it,
            stage: stage.stage,
            alpha: stage.alpha,
            critic_adversarial: adv,
            gradient_penalty: gp,
            drift,
            bce,
            char_kl_real: kl_real,
            style_critic: style_d,
            critic_total: total_d,
            generator_adversarial: report_g.0,
            char_kl_fake: report_g.1,
            bce_fake: report_g.2,
            style_generator: report_g.3,
            generator_total: report_g.4,
        })
    }
}

/// Trains on `corpus` (the training split). `cooccurrence` must have been
/// computed on the same split; the ablation replaces it with the identity.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    cooccurrence: &CooccurrenceMatrix,
    provider: &dyn EmbeddingProvider,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = corpus.k();
    if config.model.num_labels != k || cooccurrence.k() != k {
        return Err(Error::Config(format!(
            "label counts disagree: corpus {k}, model {}, T {}",
            config.model.num_labels,
            cooccurrence.k()
        )));
    }
    if provider.dimension() != config.model.embed_dim {
        return Err(Error::Config(format!(
            "embedding provider has dimension {}, model expects {}",
            provider.dimension(),
            config.model.embed_dim
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid("training needs at least two fonts"));
    }
    let t = if config.use_cmle {
        cooccurrence.clone()
    } else {
        CooccurrenceMatrix::identity(k)
    };
    let embeddings = EmbeddingTable::from_provider(corpus.vocabulary().labels(), provider)?;
    let targets: Vec<Vec<f64>> = complete_all(&corpus.label_matrix(), &t)?
        .into_iter()
        .map(|c| c.values)
        .collect();
    let semantics = targets
        .iter()
        .map(|w| semantic_condition(w, &embeddings).map(|s| s.s))
        .collect::<Result<Vec<_>>>()?;

    let (nets, params) = Networks::build(&config.model, &mut rng_for(config.seed, &[TAG_INIT]))?;
    let mut trainer = Trainer {
        cfg: config,
        corpus,
        opt_g: Adam::new(config.adam.clone(), &params.generator),
        opt_d: Adam::new(config.adam.clone(), &params.discriminator),
        opt_i: Adam::new(config.adam.clone(), &params.ilsc),
        opt_s: Adam::new(config.adam.clone(), &params.style),
        nets,
        params,
        targets,
        semantics,
        caches: (0..=config.model.max_stage).map(|_| None).collect(),
    };

    let mut telemetry_file = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("telemetry.jsonl");
            Some((
                std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
                path,
            ))
        }
        None => None,
    };
    let growth = config.growth();
    let config_hash = config.hash();
    let mut telemetry = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();
    let snapshot = |trainer: &Trainer, it: usize, stage: ProgressiveStage| Model {
        config: config.clone(),
        config_hash: config_hash.clone(),
        nets: trainer.nets.clone(),
        params: trainer.params.clone(),
        stage,
        iteration: it,
        vocabulary: corpus.vocabulary().as_ref().clone(),
        cooccurrence: t.clone(),
        embeddings: embeddings.clone(),
    };
    let mut stage = growth_schedule(0, &growth);
    for it in 0..config.iterations {
        stage = growth_schedule(it, &growth);
        let report = trainer.step(it, stage)?;
        if let Some((f, path)) = telemetry_file.as_mut() {
            let line = serde_json::to_string(&report)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if !report.all_finite() {
            let detail = format!("non-finite {:?}; report {}", report.non_finite(), serde_json::to_string(&report)?);
            if let Some(dir) = &options.out_dir {
                let path = dir.join("diverged.ckpt");
                save_checkpoint(&snapshot(&trainer, it, stage), &path)?;
            }
            return Err(Error::NonFinite { iteration: it, detail });
        }
        telemetry.push(report);
        let done = it + 1;
        let boundary = done % config.stage_len == 0;
        if let Some(dir) = &options.out_dir {
            if boundary || done % config.checkpoint_every == 0 || done == config.iterations {
                let path = dir.join(format!("checkpoint-{done:06}.ckpt"));
                save_checkpoint(&snapshot(&trainer, done, stage), &path)?;
                checkpoints.push(path);
            }
        }
        if done % 100 == 0 {
            log::info!("iteration {done}/{} stage {} alpha {:.2}", config.iterations, stage.stage, stage.alpha);
        }
    }
    let model = snapshot(&trainer, config.iterations, stage);
    Ok(TrainOutcome {
        model,
        telemetry,
        checkpoints,
    })
}

/// Reads a JSON-lines telemetry file back.
pub fn read_telemetry(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec};
    use crate::labelspace::build_cooccurrence_allowing_unseen;
    use crate::semantics::HashProvider;

    fn tiny_run(iterations: usize) -> (TrainConfig, Corpus) {
        let spec = SynthSpec {
            n_fonts: 12,
            n_labels: 20,
            resolution: 16,
            seed: 4,
            ..SynthSpec::default()
        };
        let corpus = synthesize_corpus(&spec).unwrap().corpus;
        let mut cfg = TrainConfig::desk(corpus.k());
        cfg.iterations = iterations;
        cfg.stage_len = 4;
        cfg.batch_size = 3;
        cfg.checkpoint_every = 5;
        cfg.model.z_dim = 4;
        cfg.model.embed_dim = 6;
        cfg.model.ilsc_dim = 3;
        cfg.model.channels = vec![4, 4, 3];
        cfg.model.style_channels = 2;
        cfg.model.style_features = 3;
        cfg.model.style_resolution = 8;
        (cfg, corpus)
    }

    fn run(cfg: &TrainConfig, corpus: &Corpus, out: Option<PathBuf>) -> TrainOutcome {
        let t = build_cooccurrence_allowing_unseen(&corpus.label_matrix());
        let provider = HashProvider::new(cfg.model.embed_dim, 1);
        train(cfg, corpus, &t, &provider, &TrainOptions { out_dir: out }).unwrap()
    }

    #[test]
    fn finite_and_replayable() {
        let (cfg, corpus) = tiny_run(10);
        let a = run(&cfg, &corpus, None);
        assert_eq!(a.telemetry.len(), 10);
        assert!(a.telemetry.iter().all(|r| r.all_finite() && r.gradient_penalty >= 0.0));
        assert_eq!(a.model.stage.stage, 2);
        let b = run(&cfg, &corpus, None);
        assert_eq!(a.telemetry, b.telemetry);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn checkpoints_at_boundaries_and_cadence() {
        let (cfg, corpus) = tiny_run(10);
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, &corpus, Some(dir.path().to_path_buf()));
        let names: Vec<String> = out
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            ["checkpoint-000004.ckpt", "checkpoint-000005.ckpt", "checkpoint-000008.ckpt", "checkpoint-000010.ckpt"]
        );
        let log = read_telemetry(&dir.path().join("telemetry.jsonl")).unwrap();
        assert_eq!(log, out.telemetry);
        let restored = crate::checkpoint::load_checkpoint(out.checkpoints.last().unwrap()).unwrap();
        assert_eq!(restored.params, out.model.params);
        assert_eq!(restored.cooccurrence, out.model.cooccurrence);
        let label = vec![(corpus.vocabulary().name(0).to_string(), 1.0)];
        let a = out.model.generate(&label, "AB", 3).unwrap();
        let b = restored.generate(&label, "AB", 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_rules() {
        let mut cfg = TrainConfig::paper(1430);
        assert_eq!(cfg.iterations, 90_000);
        assert_eq!(cfg.growth().stage_len, 15_000);
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::paper(1430);
        cfg.iterations = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_provider_is_rejected() {
        let (cfg, corpus) = tiny_run(4);
        let t = build_cooccurrence_allowing_unseen(&corpus.label_matrix());
        let provider = HashProvider::new(cfg.model.embed_dim + 1, 1);
        assert!(train(&cfg, &corpus, &t, &provider, &TrainOptions::default()).is_err());
    }

    #[test]
    fn ablation_stores_identity() {
        let (mut cfg, corpus) = tiny_run(4);
        cfg.use_cmle = false;
        let out = run(&cfg, &corpus, None);
        assert_eq!(out.model.cooccurrence, CooccurrenceMatrix::identity(corpus.k()));
    }
}

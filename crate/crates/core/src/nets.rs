//! Generator, critic with char/impression heads, the label-space
//! compressor and the style-consistency discriminator.
//!
//! All image tensors are NHWC with one channel and ink = 1.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::glyph::NUM_CHARS;
use crate::nn::{Bound, Conv2d, Linear, ParamStore, LRELU_SLOPE};
use crate::semantics::PerturbationHead;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAX_STAGE: usize = 4;

pub fn stage_resolution(stage: usize) -> usize {
    4 << stage
}

/// Position on the resolution ladder; `alpha` blends in the newest block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveStage {
    pub stage: usize,
    pub alpha: f64,
}

impl ProgressiveStage {
    pub fn steady(stage: usize) -> Self {
        Self { stage, alpha: 1.0 }
    }

    pub fn resolution(&self) -> usize {
        stage_resolution(self.stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub stage_len: usize,
    pub max_stage: usize,
}

/// Stage `min(max_stage, iteration / stage_len)`; after stage 0 the new
/// block fades in linearly over the first half of its stage.
pub fn growth_schedule(iteration: usize, config: &GrowthConfig) -> ProgressiveStage {
    let len = config.stage_len.max(1);
    let stage = (iteration / len).min(config.max_stage);
    if stage == 0 {
        return ProgressiveStage::steady(0);
    }
    let into = iteration - stage * len;
    let half = (len / 2).max(1);
    ProgressiveStage {
        stage,
        alpha: (into as f64 / half as f64).min(1.0),
    }
}

/// Widths and sizes of every network. `channels[s]` is the feature width
/// at resolution `4 * 2^s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_labels: usize,
    pub z_dim: usize,
    pub embed_dim: usize,
    pub ilsc_dim: usize,
    pub channels: Vec<usize>,
    pub max_stage: usize,
    pub style_refs: usize,
    pub style_resolution: usize,
    pub style_channels: usize,
    pub style_features: usize,
    /// Feed the impression vector to the generator at all. Off gives the
    /// literal three-input inference reading (noise, char, semantic).
    pub impression_input: bool,
}

impl ModelConfig {
    /// Widths for full 64x64 training.
    pub fn full(num_labels: usize) -> Self {
        Self {
            num_labels,
            z_dim: 128,
            embed_dim: 300,
            ilsc_dim: 300,
            channels: vec![256, 256, 128, 64, 32],
            max_stage: 4,
            style_refs: 4,
            style_resolution: 16,
            style_channels: 32,
            style_features: 64,
            impression_input: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_labels == 0 {
            return bad("num_labels must be positive".into());
        }
        if self.ilsc_dim == 0 || self.ilsc_dim >= self.num_labels {
            return bad(format!(
                "compressed width {} must be in 1..{} (below the label count)",
                self.ilsc_dim, self.num_labels
            ));
        }
        if self.max_stage > MAX_STAGE || self.channels.len() <= self.max_stage {
            return bad(format!(
                "max_stage {} needs {} channel widths, got {}",
                self.max_stage,
                self.max_stage + 1,
                self.channels.len()
            ));
        }
        if self.channels.iter().any(|&c| c == 0) || self.z_dim == 0 || self.embed_dim == 0 {
            return bad("widths must be positive".into());
        }
        if self.style_refs == 0 {
            return bad("style_refs must be positive".into());
        }
        if !crate::glyph::RESOLUTIONS.contains(&self.style_resolution) {
            return bad(format!("style resolution {} not on the ladder", self.style_resolution));
        }
        Ok(())
    }
}

/// Batched generator conditions; row `b` of each tensor belongs together.
#[derive(Clone, Debug)]
pub struct ConditionBundle {
    /// `[B, z_dim]`
    pub z: Tensor,
    /// `[B, 26]` one-hot
    pub chars: Tensor,
    /// `[B, K]` in `[0, 1]`
    pub impression: Tensor,
    /// `[B, embed_dim]`, already perturbed
    pub semantic: Tensor,
}

impl ConditionBundle {
    pub fn batch(&self) -> usize {
        self.z.shape()[0]
    }
}

pub fn one_hot_chars(chars: &[usize]) -> Tensor {
    let mut data = vec![0.0; chars.len() * NUM_CHARS];
    for (r, &c) in chars.iter().enumerate() {
        data[r * NUM_CHARS + c] = 1.0;
    }
    Tensor::new(data, &[chars.len(), NUM_CHARS])
}

fn lrelu(x: &Tensor) -> Tensor {
    x.leaky_relu(LRELU_SLOPE)
}

fn check_stage(stage: &ProgressiveStage, max_stage: usize) -> Result<()> {
    if stage.stage > max_stage || !(0.0..=1.0).contains(&stage.alpha) {
        return Err(Error::Config(format!(
            "stage {} / alpha {} outside 0..={max_stage} / [0, 1]",
            stage.stage, stage.alpha
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GenBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

/// Upsampling conv generator with one image head per stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Generator {
    pub config: ModelConfig,
    stem: Linear,
    stem_conv: Conv2d,
    blocks: Vec<GenBlock>,
    to_image: Vec<Conv2d>,
    pub perturb: PerturbationHead,
}

/// Both branches of a fading generator pass, for inspection.
pub struct FadeBranches {
    pub previous_upsampled: Tensor,
    pub new: Tensor,
    pub output: Tensor,
}

impl Generator {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let input = config.z_dim + NUM_CHARS + config.embed_dim + if config.impression_input { config.num_labels } else { 0 };
        let stem = Linear::with_gain(store, "g.stem", input, 16 * c[0], 2f64.sqrt() / 4.0, rng);
        let stem_conv = Conv2d::new(store, "g.stem_conv", c[0], c[0], 3, rng);
        let blocks = (1..=config.max_stage)
            .map(|s| GenBlock {
                conv1: Conv2d::new(store, &format!("g.block{s}.conv1"), c[s - 1], c[s], 3, rng),
                conv2: Conv2d::new(store, &format!("g.block{s}.conv2"), c[s], c[s], 3, rng),
            })
            .collect();
        let to_image = (0..=config.max_stage)
            .map(|s| Conv2d::with_gain(store, &format!("g.to_image{s}"), c[s], 1, 1, 1.0, rng))
            .collect();
        let perturb = PerturbationHead::new(store, "g.perturb", config.embed_dim, rng);
        Ok(Self {
            config: config.clone(),
            stem,
            stem_conv,
            blocks,
            to_image,
            perturb,
        })
    }

    fn check_bundle(&self, b: &ConditionBundle) -> Result<()> {
        let n = b.batch();
        let cfg = &self.config;
        let expect = [
            ("z", &b.z, cfg.z_dim),
            ("chars", &b.chars, NUM_CHARS),
            ("impression", &b.impression, cfg.num_labels),
            ("semantic", &b.semantic, cfg.embed_dim),
        ];
        for (name, t, width) in expect {
            if t.shape() != [n, width] {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected [{n}, {width}]",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn trunk(&self, p: &Bound, b: &ConditionBundle, upto: usize) -> Vec<Tensor> {
        let n = b.batch();
        let c0 = self.config.channels[0];
        let mut parts = vec![b.z.clone(), b.chars.clone()];
        if self.config.impression_input {
            parts.push(b.impression.clone());
        }
        parts.push(b.semantic.clone());
        let x = Tensor::concat(&parts);
        let h = lrelu(&self.stem.forward(p, &x)).reshape(&[n, 4, 4, c0]);
        let mut h = lrelu(&self.stem_conv.forward(p, &h));
        let mut feats = vec![h.clone()];
        for block in &self.blocks[..upto] {
            h = h.upsample2();
            h = lrelu(&block.conv1.forward(p, &h));
            h = lrelu(&block.conv2.forward(p, &h));
            feats.push(h.clone());
        }
        feats
    }

    fn image(&self, p: &Bound, s: usize, h: &Tensor) -> Tensor {
        self.to_image[s].forward(p, h).sigmoid()
    }

    /// Fading pass that also returns the two blended branches.
    pub fn forward_branches(&self, p: &Bound, b: &ConditionBundle, stage: ProgressiveStage) -> Result<FadeBranches> {
        self.check_bundle(b)?;
        check_stage(&stage, self.config.max_stage)?;
        let s = stage.stage;
        let feats = self.trunk(p, b, s);
        let new = self.image(p, s, &feats[s]);
        if s == 0 || stage.alpha >= 1.0 {
            return Ok(FadeBranches {
                previous_upsampled: new.clone(),
                new: new.clone(),
                output: new,
            });
        }
        let prev = self.image(p, s - 1, &feats[s - 1]).upsample2();
        let output = prev.scale(1.0 - stage.alpha).add(&new.scale(stage.alpha));
        Ok(FadeBranches {
            previous_upsampled: prev,
            new,
            output,
        })
    }

    /// `[B, R, R, 1]` images in `[0, 1]` at the stage resolution.
    pub fn forward(&self, p: &Bound, b: &ConditionBundle, stage: ProgressiveStage) -> Result<Tensor> {
        Ok(self.forward_branches(p, b, stage)?.output)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DiscBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

/// Critic with a shared trunk and three heads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: ModelConfig,
    from_image: Vec<Conv2d>,
    blocks: Vec<DiscBlock>,
    final_conv: Conv2d,
    trunk: Linear,
    critic: Linear,
    char_head: Linear,
    aux_head: Linear,
}

/// `critic [B, 1]`, `char_logits [B, 26]`, `aux [B, K]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    pub critic: Tensor,
    pub char_logits: Tensor,
    pub aux: Tensor,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let from_image = (0..=config.max_stage)
            .map(|s| Conv2d::new(store, &format!("d.from_image{s}"), 1, c[s], 1, rng))
            .collect();
        let blocks = (1..=config.max_stage)
            .map(|s| DiscBlock {
                conv1: Conv2d::new(store, &format!("d.block{s}.conv1"), c[s], c[s], 3, rng),
                conv2: Conv2d::new(store, &format!("d.block{s}.conv2"), c[s], c[s - 1], 3, rng),
            })
            .collect();
        let final_conv = Conv2d::new(store, "d.final_conv", c[0], c[0], 3, rng);
        let trunk = Linear::new(store, "d.trunk", 16 * c[0], c[0], rng);
        let critic = Linear::with_gain(store, "d.critic", c[0], 1, 1.0, rng);
        let char_head = Linear::with_gain(store, "d.char", c[0], NUM_CHARS, 1.0, rng);
        let aux_head = Linear::with_gain(store, "d.aux", c[0], config.num_labels, 1.0, rng);
        Ok(Self {
            config: config.clone(),
            from_image,
            blocks,
            final_conv,
            trunk,
            critic,
            char_head,
            aux_head,
        })
    }

    fn block(&self, p: &Bound, s: usize, h: &Tensor) -> Tensor {
        let b = &self.blocks[s - 1];
        let h = lrelu(&b.conv1.forward(p, h));
        lrelu(&b.conv2.forward(p, &h)).avg_pool2()
    }

    /// Shared trunk features `[B, C0]`.
    pub fn features(&self, p: &Bound, x: &Tensor, stage: ProgressiveStage) -> Result<Tensor> {
        check_stage(&stage, self.config.max_stage)?;
        let r = stage.resolution();
        let sh = x.shape();
        if sh.len() != 4 || sh[1] != r || sh[2] != r || sh[3] != 1 {
            return Err(Error::Config(format!(
                "critic at stage {} expects [B, {r}, {r}, 1], got {sh:?}",
                stage.stage
            )));
        }
        let s = stage.stage;
        let mut h = lrelu(&self.from_image[s].forward(p, x));
        if s > 0 {
            h = self.block(p, s, &h);
            if stage.alpha < 1.0 {
                let skip = lrelu(&self.from_image[s - 1].forward(p, &x.avg_pool2()));
                h = skip.scale(1.0 - stage.alpha).add(&h.scale(stage.alpha));
            }
            for t in (1..s).rev() {
                h = self.block(p, t, &h);
            }
        }
        let h = lrelu(&self.final_conv.forward(p, &h));
        let n = sh[0];
        let flat = h.reshape(&[n, 16 * self.config.channels[0]]);
        Ok(lrelu(&self.trunk.forward(p, &flat)))
    }

    pub fn forward(&self, p: &Bound, x: &Tensor, stage: ProgressiveStage) -> Result<DiscriminatorOutput> {
        let f = self.features(p, x, stage)?;
        Ok(DiscriminatorOutput {
            critic: self.critic.forward(p, &f),
            char_logits: self.char_head.forward(p, &f),
            aux: self.aux_head.forward(p, &f).sigmoid(),
        })
    }

    /// Critic score alone, `[B, 1]`.
    pub fn critic(&self, p: &Bound, x: &Tensor, stage: ProgressiveStage) -> Result<Tensor> {
        let f = self.features(p, x, stage)?;
        Ok(self.critic.forward(p, &f))
    }
}

/// Two-layer encoder-decoder over the label posterior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ilsc {
    pub k: usize,
    pub d: usize,
    encoder: Linear,
    decoder: Linear,
}

/// `bottleneck [B, d]`, `reconstructed [B, K]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct IlscOutput {
    pub bottleneck: Tensor,
    pub reconstructed: Tensor,
}

impl Ilsc {
    /// `d` may equal `k` here; model configs require `d < k`.
    pub fn new(store: &mut ParamStore, k: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d == 0 || d > k {
            return Err(Error::Config(format!("compressed width {d} not in 1..={k}")));
        }
        Ok(Self {
            k,
            d,
            encoder: Linear::new(store, "ilsc.encoder", k, d, rng),
            decoder: Linear::with_gain(store, "ilsc.decoder", d, k, 1.0, rng),
        })
    }

    pub fn forward(&self, p: &Bound, y: &Tensor) -> IlscOutput {
        let bottleneck = lrelu(&self.encoder.forward(p, y));
        let reconstructed = self.decoder.forward(p, &bottleneck).sigmoid();
        IlscOutput {
            bottleneck,
            reconstructed,
        }
    }
}

/// Scores whether a candidate glyph shares the style of a reference set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleDiscriminator {
    pub refs: usize,
    pub resolution: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    embed: Linear,
    hidden: Linear,
    out: Linear,
}

/// Nearest-up or mean-down resize along the power-of-two ladder.
pub fn resize_images(x: &Tensor, side: usize) -> Tensor {
    let mut x = x.clone();
    while x.shape()[1] < side {
        x = x.upsample2();
    }
    while x.shape()[1] > side {
        x = x.avg_pool2();
    }
    x
}

impl StyleDiscriminator {
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.style_channels;
        let f = config.style_features;
        let r = config.style_resolution;
        let side = if r >= 8 { r / 4 } else { r };
        let flat = side * side * c;
        Ok(Self {
            refs: config.style_refs,
            resolution: r,
            conv1: Conv2d::new(store, "style.conv1", 1, c, 3, rng),
            conv2: Conv2d::new(store, "style.conv2", c, c, 3, rng),
            embed: Linear::new(store, "style.embed", flat, f, rng),
            hidden: Linear::new(store, "style.hidden", 4 * f, f, rng),
            out: Linear::with_gain(store, "style.out", f, 1, 1.0, rng),
        })
    }

    fn encode(&self, p: &Bound, x: &Tensor) -> Tensor {
        let x = resize_images(x, self.resolution);
        let mut h = lrelu(&self.conv1.forward(p, &x));
        if self.resolution >= 8 {
            h = h.avg_pool2();
        }
        h = lrelu(&self.conv2.forward(p, &h));
        if self.resolution >= 8 {
            h = h.avg_pool2();
        }
        let n = h.shape()[0];
        let flat: usize = h.shape()[1..].iter().product();
        lrelu(&self.embed.forward(p, &h.reshape(&[n, flat])))
    }

    /// Encoding of a reference set, mean-pooled over its members.
    pub fn encode_references(&self, p: &Bound, references: &[Tensor]) -> Result<Tensor> {
        if references.len() != self.refs {
            return Err(Error::Config(format!(
                "style discriminator takes {} references, got {}",
                self.refs,
                references.len()
            )));
        }
        let mut acc = self.encode(p, &references[0]);
        for r in &references[1..] {
            acc = acc.add(&self.encode(p, r));
        }
        Ok(acc.scale(1.0 / self.refs as f64))
    }

    /// `candidate [B, R, R, 1]`; each reference tensor is one member of the
    /// set for every row. Returns `[B, 1]`, higher = more consistent.
    pub fn forward(&self, p: &Bound, candidate: &Tensor, references: &[Tensor]) -> Result<Tensor> {
        let r = self.encode_references(p, references)?;
        self.score_encoded(p, candidate, &r)
    }

    pub fn score_encoded(&self, p: &Bound, candidate: &Tensor, reference_code: &Tensor) -> Result<Tensor> {
        let e = self.encode(p, candidate);
        if e.shape() != reference_code.shape() {
            return Err(Error::Config(format!(
                "candidate batch {:?} does not match reference batch {:?}",
                e.shape(),
                reference_code.shape()
            )));
        }
        let diff = e.sub(reference_code);
        let x = Tensor::concat(&[e.clone(), reference_code.clone(), diff.square(), e.mul(reference_code)]);
        Ok(self.out.forward(p, &lrelu(&self.hidden.forward(p, &x))))
    }
}

/// Every trainable network of one model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Networks {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub ilsc: Ilsc,
    pub style: StyleDiscriminator,
}

/// Parameter values of [`Networks`], one store per optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub ilsc: ParamStore,
    pub style: ParamStore,
}

impl Networks {
    pub fn build(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<(Networks, ParamSet)> {
        config.validate()?;
        let mut g = ParamStore::new();
        let mut d = ParamStore::new();
        let mut i = ParamStore::new();
        let mut s = ParamStore::new();
        let nets = Networks {
            generator: Generator::new(config, &mut g, rng)?,
            discriminator: Discriminator::new(config, &mut d, rng)?,
            ilsc: Ilsc::new(&mut i, config.num_labels, config.ilsc_dim, rng)?,
            style: StyleDiscriminator::new(config, &mut s, rng)?,
        };
        Ok((
            nets,
            ParamSet {
                generator: g,
                discriminator: d,
                ilsc: i,
                style: s,
            },
        ))
    }
}

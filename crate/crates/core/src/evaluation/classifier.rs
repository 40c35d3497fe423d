//! Small residual CNN used both as the multi-label impression classifier
//! and, trained on character classes, as the feature extractor for FID.

use crate::autodiff::{grad, no_grad, Tensor};
use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::nn::{Adam, AdamConfig, Bound, Conv2d, Linear, ParamStore, LRELU_SLOPE};
use crate::training::{bce_loss, char_kl_loss};
use crate::util::{rng_for, sha256_hex};
use rand::Rng;
use serde::{Deserialize, Serialize};

const TAG_INIT: u64 = 0xc1a5;
const TAG_BATCH: u64 = 0xc1b7;
const PREDICT_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub channels: usize,
    pub features: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            features: 64,
            iterations: 400,
            batch_size: 64,
            lr: 0.002,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Independent sigmoid per label.
    MultiLabel(usize),
    /// Softmax over the 26 char classes.
    Chars,
}

impl Task {
    fn outputs(self) -> usize {
        match self {
            Task::MultiLabel(k) => k,
            Task::Chars => crate::glyph::NUM_CHARS,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        let h = self.a.forward(p, x).leaky_relu(LRELU_SLOPE);
        let h = self.b.forward(p, &h);
        x.add(&h).leaky_relu(LRELU_SLOPE)
    }
}

/// Glyph classifier: stem conv, residual blocks with 2x pooling down to at
/// most 4x4, a feature layer and the output head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlyphCnn {
    pub task: Task,
    pub side: usize,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    feature: Linear,
    head: Linear,
    params: ParamStore,
    pub config: ClassifierConfig,
}

/// Training telemetry of [`GlyphCnn::fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub losses: Vec<f64>,
}

impl GlyphCnn {
    pub fn new(task: Task, side: usize, config: &ClassifierConfig) -> Result<Self> {
        if side < 4 || !side.is_power_of_two() {
            return Err(Error::invalid(format!("classifier side {side} must be a power of two >= 4")));
        }
        if config.channels == 0 || config.features == 0 || config.batch_size == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        let mut rng = rng_for(config.seed, &[TAG_INIT]);
        let mut params = ParamStore::new();
        let c = config.channels;
        let stem = Conv2d::new(&mut params, "stem", 1, c, 3, &mut rng);
        let mut blocks = Vec::new();
        let mut s = side;
        loop {
            let i = blocks.len();
            blocks.push(ResBlock {
                a: Conv2d::new(&mut params, &format!("block{i}.a"), c, c, 3, &mut rng),
                b: Conv2d::with_gain(&mut params, &format!("block{i}.b"), c, c, 3, 1.0, &mut rng),
            });
            if s <= 4 {
                break;
            }
            s /= 2;
        }
        let feature = Linear::new(&mut params, "feature", s * s * c, config.features, &mut rng);
        let head = Linear::with_gain(&mut params, "head", config.features, task.outputs(), 1.0, &mut rng);
        Ok(Self {
            task,
            side,
            stem,
            blocks,
            feature,
            head,
            params,
            config: config.clone(),
        })
    }

    fn forward(&self, p: &Bound, x: &Tensor) -> (Tensor, Tensor) {
        let mut h = self.stem.forward(p, x).leaky_relu(LRELU_SLOPE);
        let last = self.blocks.len() - 1;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(p, &h);
            if i < last {
                h = h.avg_pool2();
            }
        }
        let n = h.shape()[0];
        let flat = h.reshape(&[n, h.numel() / n]);
        let feats = self.feature.forward(p, &flat).leaky_relu(LRELU_SLOPE);
        let logits = self.head.forward(p, &feats);
        (feats, logits)
    }

    fn stack(&self, images: &[&GlyphImage]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(images.len() * self.side * self.side);
        for img in images {
            if img.side() == self.side {
                data.extend(img.to_f64());
            } else {
                data.extend(img.resize(self.side)?.to_f64());
            }
        }
        Ok(Tensor::new(data, &[images.len(), self.side, self.side, 1]))
    }

    /// Fits on `(image, target)` pairs; targets are label vectors for
    /// [`Task::MultiLabel`] and one-hot char rows for [`Task::Chars`].
    pub fn fit(&mut self, images: &[GlyphImage], targets: &[Vec<f64>]) -> Result<FitReport> {
        if images.len() != targets.len() || images.is_empty() {
            return Err(Error::invalid("classifier needs matching, non-empty images and targets"));
        }
        let out = self.task.outputs();
        if targets.iter().any(|t| t.len() != out) {
            return Err(Error::Shape(format!("targets must have {out} entries")));
        }
        let cfg = self.config.clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                beta1: 0.5,
                ..AdamConfig::default()
            },
            &self.params,
        );
        let mut losses = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let mut rng = rng_for(cfg.seed, &[TAG_BATCH, it as u64]);
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..images.len())).collect();
            let x = self.stack(&idx.iter().map(|&i| &images[i]).collect::<Vec<_>>())?;
            let t = Tensor::new(idx.iter().flat_map(|&i| targets[i].iter().copied()).collect(), &[idx.len(), out]);
            let p = self.params.bind(true);
            let (_, logits) = self.forward(&p, &x);
            let loss = match self.task {
                Task::MultiLabel(k) => bce_loss(&t, &logits.sigmoid()).scale(1.0 / k as f64),
                Task::Chars => char_kl_loss(&logits, &t),
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    iteration: it,
                    detail: format!("classifier loss {value}; recent {:?}", &losses[losses.len().saturating_sub(5)..]),
                });
            }
            let g = grad(&loss, &p.leaves(), false);
            opt.step(&mut self.params, &g);
            losses.push(value);
        }
        Ok(FitReport { losses })
    }

    /// `(features, probabilities)` per image.
    pub fn predict(&self, images: &[GlyphImage]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let _g = no_grad();
        let p = self.params.bind(false);
        let mut feats = Vec::with_capacity(images.len());
        let mut probs = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_CHUNK) {
            let x = self.stack(&chunk.iter().collect::<Vec<_>>())?;
            let (f, logits) = self.forward(&p, &x);
            let pr = match self.task {
                Task::MultiLabel(_) => logits.sigmoid(),
                Task::Chars => logits.log_softmax().exp(),
            };
            feats.extend(f.data().chunks(self.config.features).map(<[f64]>::to_vec));
            probs.extend(pr.data().chunks(self.task.outputs()).map(<[f64]>::to_vec));
        }
        Ok((feats, probs))
    }

    pub fn probabilities(&self, images: &[GlyphImage]) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict(images)?.1)
    }

    /// Hash of the parameters, used to name the extractor in reports.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for p in self.params.params() {
            for v in &p.value {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        sha256_hex(&bytes)[..16].to_string()
    }
}

/// A fixed image-to-feature map.
pub trait FeatureExtractor: Send + Sync {
    fn dimension(&self) -> usize;
    fn extract(&self, images: &[GlyphImage]) -> Result<Vec<Vec<f64>>>;
    /// Short identity recorded next to every FID value.
    fn identity(&self) -> String;
}

/// Penultimate features of a char-classification [`GlyphCnn`].
#[derive(Clone, Debug)]
pub struct CnnExtractor {
    pub cnn: GlyphCnn,
}

impl CnnExtractor {
    /// Trains a char classifier on `images` (26 per font, in char order).
    pub fn train(images: &[GlyphImage], side: usize, config: &ClassifierConfig) -> Result<Self> {
        let targets: Vec<Vec<f64>> = (0..images.len())
            .map(|i| {
                let mut t = vec![0.0; crate::glyph::NUM_CHARS];
                t[i % crate::glyph::NUM_CHARS] = 1.0;
                t
            })
            .collect();
        let mut cnn = GlyphCnn::new(Task::Chars, side, config)?;
        cnn.fit(images, &targets)?;
        Ok(Self { cnn })
    }
}

impl FeatureExtractor for CnnExtractor {
    fn dimension(&self) -> usize {
        self.cnn.config.features
    }

    fn extract(&self, images: &[GlyphImage]) -> Result<Vec<Vec<f64>>> {
        Ok(self.cnn.predict(images)?.0)
    }

    fn identity(&self) -> String {
        format!("char-cnn-{}px-{}", self.cnn.side, self.cnn.fingerprint())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(side: usize, vertical: bool) -> GlyphImage {
        let px = (0..side * side)
            .map(|i| {
                let (x, y) = (i % side, i / side);
                if (if vertical { x } else { y }) % 4 < 2 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        GlyphImage::new(side, px).unwrap()
    }

    #[test]
    fn learns_a_separable_task() {
        let images: Vec<GlyphImage> = (0..8).map(|i| stripes(8, i % 2 == 0)).collect();
        let targets: Vec<Vec<f64>> = (0..8).map(|i| vec![(i % 2) as f64, 1.0 - (i % 2) as f64]).collect();
        let cfg = ClassifierConfig {
            channels: 4,
            features: 8,
            iterations: 120,
            batch_size: 8,
            ..ClassifierConfig::default()
        };
        let mut cnn = GlyphCnn::new(Task::MultiLabel(2), 8, &cfg).unwrap();
        let rep = cnn.fit(&images, &targets).unwrap();
        assert!(rep.losses.last().unwrap() < &(rep.losses[0] * 0.5));
        let (f, p) = cnn.predict(&images).unwrap();
        assert_eq!(f[0].len(), 8);
        assert!(p[1][0] > p[0][0]);
    }

    #[test]
    fn rejects_bad_side() {
        assert!(GlyphCnn::new(Task::Chars, 6, &ClassifierConfig::default()).is_err());
    }
}

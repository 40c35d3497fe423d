//! A trained model snapshot and the inference pipeline: complete the
//! impression vector by co-occurrence, average label embeddings into the
//! semantic condition, take the perturbation mean, and render glyphs.

use super::TrainConfig;
use crate::autodiff::{no_grad, Tensor};
use crate::corpus::LabelVocabulary;
use crate::error::{Error, Result};
use crate::glyph::{char_at, parse_chars, GlyphImage, NUM_CHARS};
use crate::labelspace::{complete_weighted, CooccurrenceMatrix};
use crate::nets::{one_hot_chars, ConditionBundle, Networks, ParamSet, ProgressiveStage};
use crate::semantics::{semantic_condition, EmbeddingTable};
use crate::util::{normal_vec, rng_for};

/// Rows rendered per generator pass.
pub const RENDER_CHUNK: usize = 64;

const TAG_Z: u64 = 0x2a;

/// Everything needed to generate: networks, parameters, vocabulary, `T`
/// and the label embeddings.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub config_hash: String,
    pub nets: Networks,
    pub params: ParamSet,
    pub stage: ProgressiveStage,
    pub iteration: usize,
    pub vocabulary: LabelVocabulary,
    pub cooccurrence: CooccurrenceMatrix,
    pub embeddings: EmbeddingTable,
}

/// Conditions of one rendered glyph.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderItem {
    /// Completed impression vector, length K.
    pub impression: Vec<f64>,
    /// Semantic condition fed to the generator (already perturbed or mean).
    pub semantic: Vec<f64>,
    pub z: Vec<f64>,
    pub char_class: usize,
}

/// A completed condition ready for rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub completed: Vec<f64>,
    pub semantic: Vec<f64>,
}

impl Model {
    pub fn k(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn resolution(&self) -> usize {
        self.stage.resolution()
    }

    /// Soft label vector from `(label, weight)` pairs, weights in `(0, 1]`.
    /// Repeated labels keep their largest weight.
    pub fn impression_vector(&self, impressions: &[(String, f64)]) -> Result<Vec<f64>> {
        if impressions.is_empty() {
            return Err(Error::NoPositiveLabels);
        }
        let mut y = vec![0.0f64; self.k()];
        for (label, w) in impressions {
            let i = self
                .vocabulary
                .index_of(label)
                .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(Error::invalid(format!("weight {w} for {label:?} not in (0, 1]")));
            }
            y[i] = y[i].max(*w);
        }
        Ok(y)
    }

    /// Completes `y` with the stored `T` and forms the unperturbed semantic
    /// condition `mu(s)`.
    pub fn condition(&self, y: &[f64]) -> Result<Condition> {
        let completed = complete_weighted(y, &self.cooccurrence)?.values;
        let s = semantic_condition(&completed, &self.embeddings)?;
        let _g = no_grad();
        let p = self.params.generator.bind(false);
        let mu = self
            .nets
            .generator
            .perturb
            .mean(&p, &Tensor::new(s.s, &[1, self.embeddings.dim]));
        Ok(Condition {
            completed,
            semantic: mu.to_vec(),
        })
    }

    pub fn noise(&self, seed: u64) -> Vec<f64> {
        normal_vec(&mut rng_for(seed, &[TAG_Z]), self.config.model.z_dim)
    }

    /// Renders items in chunks of [`RENDER_CHUNK`] at the model's stage.
    pub fn render_many(&self, items: &[RenderItem]) -> Result<Vec<GlyphImage>> {
        let _g = no_grad();
        let p = self.params.generator.bind(false);
        let side = self.resolution();
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(RENDER_CHUNK) {
            let n = chunk.len();
            let flat = |f: &dyn Fn(&RenderItem) -> &[f64], w: usize| -> Result<Tensor> {
                let mut v = Vec::with_capacity(n * w);
                for it in chunk {
                    let row = f(it);
                    if row.len() != w {
                        return Err(Error::Shape(format!("condition row of length {}, expected {w}", row.len())));
                    }
                    v.extend_from_slice(row);
                }
                Ok(Tensor::new(v, &[n, w]))
            };
            let bundle = ConditionBundle {
                z: flat(&|i| &i.z, self.config.model.z_dim)?,
                chars: one_hot_chars(&chunk.iter().map(|i| i.char_class).collect::<Vec<_>>()),
                impression: flat(&|i| &i.impression, self.k())?,
                semantic: flat(&|i| &i.semantic, self.embeddings.dim)?,
            };
            let img = self.nets.generator.forward(&p, &bundle, self.stage)?;
            for px in img.data().chunks(side * side) {
                out.push(GlyphImage::from_f64(side, px)?);
            }
        }
        Ok(out)
    }

    /// One glyph per char class, all sharing the condition and `z`.
    pub fn render(&self, cond: &Condition, z: &[f64], chars: &[usize]) -> Result<Vec<GlyphImage>> {
        if let Some(&c) = chars.iter().find(|&&c| c >= NUM_CHARS) {
            return Err(Error::invalid(format!("char class {c} out of range")));
        }
        let items: Vec<RenderItem> = chars
            .iter()
            .map(|&c| RenderItem {
                impression: cond.completed.clone(),
                semantic: cond.semantic.clone(),
                z: z.to_vec(),
                char_class: c,
            })
            .collect();
        self.render_many(&items)
    }

    /// Generation from labels and weights, one image per char of `chars`.
    pub fn generate(&self, impressions: &[(String, f64)], chars: &str, noise_seed: u64) -> Result<Vec<GlyphImage>> {
        let classes = parse_chars(chars)?;
        let y = self.impression_vector(impressions)?;
        let cond = self.condition(&y)?;
        self.render(&cond, &self.noise(noise_seed), &classes)
    }

    /// The `top` largest completed weights, by descending weight then name.
    pub fn effective_condition(&self, completed: &[f64], top: usize) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..completed.len()).filter(|&i| completed[i] > 0.0).collect();
        idx.sort_by(|&a, &b| {
            completed[b]
                .total_cmp(&completed[a])
                .then_with(|| self.vocabulary.name(a).cmp(self.vocabulary.name(b)))
        });
        idx.truncate(top);
        idx.into_iter()
            .map(|i| (self.vocabulary.name(i).to_string(), completed[i]))
            .collect()
    }

    pub fn chars_string(classes: &[usize]) -> String {
        classes.iter().map(|&c| char_at(c)).collect()
    }
}

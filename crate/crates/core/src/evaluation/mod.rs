//! Generation-quality metrics: FID and Intra-FID in a learned feature
//! space, mAP of generated glyphs under a real-image classifier (and the
//! reverse), and mAP-test as labels go missing.

mod classifier;
mod metrics;

pub use classifier::{ClassifierConfig, CnnExtractor, FeatureExtractor, FitReport, GlyphCnn, Task};
pub use metrics::{
    average_precision, frechet_distance, frechet_from_moments, mean_average_precision, moments, ranking_for,
    MapReport, Moments, RankingInstance, FID_JITTER,
};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, NUM_CHARS};
use crate::labelspace::{remove_labels, LabelMatrix};
use crate::nets::Networks;
use crate::training::{Model, RenderItem};
use crate::util::{derive_seed, rng_for};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const TAG_FONT_NOISE: u64 = 0xf0;
const TAG_FID: u64 = 0xf1d;
const TAG_REMOVE: u64 = 0x4e0;

/// Which glyphs are generated per conditioned font and how noise is drawn:
/// font `n` always uses `z = noise(derive_seed(seed, n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationProtocol {
    pub chars: Vec<usize>,
    pub seed: u64,
}

impl Default for GenerationProtocol {
    fn default() -> Self {
        Self {
            chars: (0..NUM_CHARS).collect(),
            seed: 0,
        }
    }
}

/// Generated glyph sets, one per row of `labels`; `keys[i]` fixes the noise.
pub fn generate_for_labels(
    model: &Model,
    labels: &[Vec<f64>],
    keys: &[usize],
    protocol: &GenerationProtocol,
) -> Result<Vec<Vec<GlyphImage>>> {
    if labels.len() != keys.len() {
        return Err(Error::Shape("one noise key per label row".into()));
    }
    if protocol.chars.is_empty() {
        return Err(Error::invalid("protocol needs at least one char"));
    }
    let mut items = Vec::with_capacity(labels.len() * protocol.chars.len());
    for (y, &key) in labels.iter().zip(keys) {
        let cond = model.condition(y)?;
        let z = model.noise(derive_seed(protocol.seed, &[TAG_FONT_NOISE, key as u64]));
        for &c in &protocol.chars {
            items.push(RenderItem {
                impression: cond.completed.clone(),
                semantic: cond.semantic.clone(),
                z: z.clone(),
                char_class: c,
            });
        }
    }
    let flat = model.render_many(&items)?;
    Ok(flat.chunks(protocol.chars.len()).map(<[GlyphImage]>::to_vec).collect())
}

/// Real glyphs of every font at `side`, restricted to `chars`.
pub fn real_glyphs(corpus: &Corpus, side: usize, chars: &[usize]) -> Result<Vec<Vec<GlyphImage>>> {
    corpus
        .records()
        .iter()
        .map(|r| chars.iter().map(|&c| r.glyphs[c].resize(side)).collect())
        .collect()
}

/// Fits the multi-label classifier on every real glyph, each labelled with
/// its font's label vector.
pub fn fit_impression_classifier(real: &Corpus, side: usize, config: &ClassifierConfig) -> Result<GlyphCnn> {
    let sets = real_glyphs(real, side, &(0..NUM_CHARS).collect::<Vec<_>>())?;
    let labels = real.label_matrix().as_f64_rows();
    fit_on_sets(&sets, &labels, side, config)
}

fn fit_on_sets(sets: &[Vec<GlyphImage>], labels: &[Vec<f64>], side: usize, config: &ClassifierConfig) -> Result<GlyphCnn> {
    let k = labels.first().map(Vec::len).ok_or(Error::EmptyCorpus { stage: "classifier".into() })?;
    let mut images = Vec::new();
    let mut targets = Vec::new();
    for (set, y) in sets.iter().zip(labels) {
        for g in set {
            images.push(g.clone());
            targets.push(y.clone());
        }
    }
    let mut cnn = GlyphCnn::new(Task::MultiLabel(k), side, config)?;
    cnn.fit(&images, &targets)?;
    Ok(cnn)
}

/// Per-font scores: classifier probabilities averaged over the font's glyphs.
pub fn font_scores(classifier: &GlyphCnn, sets: &[Vec<GlyphImage>]) -> Result<Vec<Vec<f64>>> {
    let flat: Vec<GlyphImage> = sets.iter().flatten().cloned().collect();
    let probs = classifier.probabilities(&flat)?;
    let mut out = Vec::with_capacity(sets.len());
    let mut at = 0;
    for set in sets {
        let rows = &probs[at..at + set.len()];
        at += set.len();
        let k = rows.first().map(Vec::len).unwrap_or(0);
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / set.len() as f64;
            }
        }
        out.push(mean);
    }
    Ok(out)
}

/// mAP of `sets` scored by `classifier` against `truth`.
pub fn map_of_sets(classifier: &GlyphCnn, sets: &[Vec<GlyphImage>], truth: &LabelMatrix) -> Result<MapReport> {
    mean_average_precision(&font_scores(classifier, sets)?, truth, None)
}

/// Fakes conditioned on each test font's labels, scored by a classifier
/// trained on real glyphs, ground truth the same labels.
pub fn map_test_with(
    model: &Model,
    test: &Corpus,
    classifier: &GlyphCnn,
    protocol: &GenerationProtocol,
) -> Result<MapReport> {
    let labels = test.label_matrix();
    let keys: Vec<usize> = (0..labels.rows()).collect();
    let sets = generate_for_labels(model, &labels.as_f64_rows(), &keys, protocol)?;
    map_of_sets(classifier, &sets, &labels)
}

pub fn map_test(
    model: &Model,
    train: &Corpus,
    test: &Corpus,
    config: &ClassifierConfig,
    protocol: &GenerationProtocol,
) -> Result<MapReport> {
    let classifier = fit_impression_classifier(train, model.resolution(), config)?;
    map_test_with(model, test, &classifier, protocol)
}

/// The reverse direction: a classifier trained on fakes conditioned on the
/// training fonts' labels, evaluated on real test glyphs.
pub fn map_train(
    model: &Model,
    train: &Corpus,
    test: &Corpus,
    config: &ClassifierConfig,
    protocol: &GenerationProtocol,
) -> Result<MapReport> {
    let labels = train.label_matrix().as_f64_rows();
    let keys: Vec<usize> = (0..labels.len()).collect();
    let fakes = generate_for_labels(model, &labels, &keys, protocol)?;
    let classifier = fit_on_sets(&fakes, &labels, model.resolution(), config)?;
    let real = real_glyphs(test, model.resolution(), &protocol.chars)?;
    map_of_sets(&classifier, &real, &test.label_matrix())
}

/// [`map_train`] with any glyph source in place of the generator.
pub fn map_train_from_sets(
    sets: &[Vec<GlyphImage>],
    labels: &[Vec<f64>],
    test: &Corpus,
    side: usize,
    config: &ClassifierConfig,
    chars: &[usize],
) -> Result<MapReport> {
    let classifier = fit_on_sets(sets, labels, side, config)?;
    let real = real_glyphs(test, side, chars)?;
    map_of_sets(&classifier, &real, &test.label_matrix())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub map_test: f64,
    /// Fonts left with no conditioning label, dropped from this point.
    pub dropped_fonts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ratio,map_test\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.ratio, p.map_test));
        }
        s
    }

    pub fn at(&self, ratio: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.ratio - ratio).abs() < 1e-12).map(|p| p.map_test)
    }
}

/// Removes `ratio` of the test fonts' positive labels before conditioning,
/// scoring against the original labels. Fonts left without any label are
/// dropped; noise stays tied to the font index so ratio 0 equals
/// [`map_test_with`].
pub fn missing_ratio_sweep(
    model: &Model,
    test: &Corpus,
    classifier: &GlyphCnn,
    ratios: &[f64],
    protocol: &GenerationProtocol,
    seed: u64,
) -> Result<SweepCurve> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("ratios must be strictly increasing within [0, 1]"));
    }
    let truth = test.label_matrix();
    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let removed = remove_labels(&truth, ratio, derive_seed(seed, &[TAG_REMOVE]))?;
        let keep = removed.nonzero_rows();
        if keep.is_empty() {
            return Err(Error::invalid(format!("ratio {ratio} leaves no font with a label")));
        }
        let cond: Vec<Vec<f64>> = removed.select_rows(&keep).as_f64_rows();
        let sets = generate_for_labels(model, &cond, &keep, protocol)?;
        let report = map_of_sets(classifier, &sets, &truth.select_rows(&keep))?;
        points.push(SweepPoint {
            ratio,
            map_test: report.map,
            dropped_fonts: truth.rows() - keep.len(),
        });
    }
    Ok(SweepCurve { points })
}

/// The same model with freshly initialized networks: the random-generator
/// baseline.
pub fn random_generator(model: &Model, seed: u64) -> Result<Model> {
    let (nets, params): (Networks, _) = Networks::build(&model.config.model, &mut rng_for(seed, &[0x7a4d]))?;
    Ok(Model {
        nets,
        params,
        ..model.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub extractor: String,
    pub generated: usize,
    pub real: usize,
}

/// FID between `per_char` fakes per char class, each conditioned on a
/// uniformly drawn real label vector, and every real glyph of `corpus`.
pub fn fid(
    model: &Model,
    corpus: &Corpus,
    extractor: &dyn FeatureExtractor,
    per_char: usize,
    seed: u64,
) -> Result<FidReport> {
    let labels = corpus.label_matrix().as_f64_rows();
    let mut rng = rng_for(seed, &[TAG_FID]);
    let mut items = Vec::with_capacity(per_char * NUM_CHARS);
    for c in 0..NUM_CHARS {
        for _ in 0..per_char {
            let y = &labels[rng.random_range(0..labels.len())];
            let cond = model.condition(y)?;
            items.push(RenderItem {
                impression: cond.completed,
                semantic: cond.semantic,
                z: model.noise(rng.random()),
                char_class: c,
            });
        }
    }
    let fakes = model.render_many(&items)?;
    let real: Vec<GlyphImage> = real_glyphs(corpus, model.resolution(), &(0..NUM_CHARS).collect::<Vec<_>>())?
        .into_iter()
        .flatten()
        .collect();
    Ok(FidReport {
        fid: frechet_distance(&extractor.extract(&fakes)?, &extractor.extract(&real)?)?,
        extractor: extractor.identity(),
        generated: fakes.len(),
        real: real.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraFidReport {
    pub classes: Vec<(String, f64)>,
    pub mean: f64,
    pub extractor: String,
}

/// FID per label attached to at least `min_class_size` fonts, conditioning
/// on that label alone and comparing with the glyphs of its fonts.
pub fn intra_fid(
    model: &Model,
    corpus: &Corpus,
    extractor: &dyn FeatureExtractor,
    min_class_size: usize,
    per_class: usize,
    seed: u64,
) -> Result<IntraFidReport> {
    let labels = corpus.label_matrix();
    let support = labels.column_support();
    let qualifying: Vec<usize> = (0..labels.k()).filter(|&i| support[i] >= min_class_size).collect();
    if qualifying.is_empty() {
        let max = support.iter().copied().max().unwrap_or(0);
        return Err(Error::invalid(format!(
            "no label is attached to {min_class_size} fonts (largest class has {max}); lower the threshold"
        )));
    }
    let side = model.resolution();
    let mut classes = Vec::with_capacity(qualifying.len());
    for &i in &qualifying {
        let mut y = vec![0.0; labels.k()];
        y[i] = 1.0;
        let cond = model.condition(&y)?;
        let mut rng = rng_for(seed, &[TAG_FID, i as u64]);
        let items: Vec<RenderItem> = (0..per_class.max(2))
            .map(|j| RenderItem {
                impression: cond.completed.clone(),
                semantic: cond.semantic.clone(),
                z: model.noise(rng.random()),
                char_class: j % NUM_CHARS,
            })
            .collect();
        let fakes = model.render_many(&items)?;
        let mut real = Vec::new();
        for (n, r) in corpus.records().iter().enumerate() {
            if labels.get(n, i) == 1 {
                for g in &r.glyphs {
                    real.push(g.resize(side)?);
                }
            }
        }
        let value = frechet_distance(&extractor.extract(&fakes)?, &extractor.extract(&real)?)?;
        classes.push((model.vocabulary.name(i).to_string(), value));
    }
    let mean = classes.iter().map(|(_, v)| v).sum::<f64>() / classes.len() as f64;
    Ok(IntraFidReport {
        classes,
        mean,
        extractor: extractor.identity(),
    })
}

/// One evaluation result, as written by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
    pub iteration: usize,
    pub seed: u64,
    pub extractor: Option<String>,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

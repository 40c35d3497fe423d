//! Font corpora: records, vocabulary, statistics, filtering and splitting.

mod letterforms;
mod store;
mod synth;

pub use letterforms::{render, Style};
pub use store::{load_corpus, load_corpus_lenient, save_corpus, LoadReport};
pub use synth::{
    default_attribute_rules, synthesize_corpus, Attribute, AttributeRule, FontTruth, GroundTruthLog, SynthSpec,
    Synthesized,
};

use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, NUM_CHARS};
use crate::labelspace::LabelMatrix;
use crate::semantics::EmbeddingProvider;
use crate::util::rng_for;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// One font: 26 glyphs in class order and its binary label vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FontRecord {
    pub font_id: String,
    pub glyphs: Vec<GlyphImage>,
    pub labels: Vec<u8>,
}

impl FontRecord {
    pub fn new(font_id: impl Into<String>, glyphs: Vec<GlyphImage>, labels: Vec<u8>) -> Result<Self> {
        let font_id = font_id.into();
        if glyphs.len() != NUM_CHARS {
            return Err(Error::Shape(format!(
                "font {font_id} has {} glyphs, expected {NUM_CHARS}",
                glyphs.len()
            )));
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!("font {font_id}: label entries must be 0 or 1")));
        }
        if !labels.contains(&1) {
            return Err(Error::invalid(format!("font {font_id} has no positive labels")));
        }
        Ok(Self {
            font_id,
            glyphs,
            labels,
        })
    }

    pub fn label_count(&self) -> usize {
        self.labels.iter().map(|&v| v as usize).sum()
    }
}

/// Ordered label names with their corpus frequencies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct LabelVocabulary {
    labels: Vec<String>,
    frequency: Vec<usize>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    labels: Vec<String>,
    frequency: Vec<usize>,
}

impl TryFrom<VocabularyRepr> for LabelVocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        LabelVocabulary::new(r.labels, r.frequency)
    }
}

impl From<LabelVocabulary> for VocabularyRepr {
    fn from(v: LabelVocabulary) -> Self {
        VocabularyRepr {
            labels: v.labels,
            frequency: v.frequency,
        }
    }
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, frequency: Vec<usize>) -> Result<Self> {
        if labels.len() != frequency.len() {
            return Err(Error::Shape("vocabulary labels and frequencies differ in length".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate label {l:?}")));
            }
        }
        if let Some(i) = frequency.iter().position(|&f| f == 0) {
            return Err(Error::ZeroSupport(labels[i].clone()));
        }
        Ok(Self {
            labels,
            frequency,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn frequency(&self) -> &[usize] {
        &self.frequency
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Label indices sorted by descending frequency, ties by name.
    pub fn by_frequency(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.frequency[b]
                .cmp(&self.frequency[a])
                .then_with(|| self.labels[a].cmp(&self.labels[b]))
        });
        idx
    }

    /// The `m` most frequent labels.
    pub fn top(&self, m: usize) -> Vec<usize> {
        let mut idx = self.by_frequency();
        idx.truncate(m);
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub seed: Option<u64>,
}

/// Fonts sharing one vocabulary. Glyphs are all the same side.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    records: Vec<FontRecord>,
    vocabulary: Arc<LabelVocabulary>,
    provenance: Provenance,
}

impl Corpus {
    pub fn new(records: Vec<FontRecord>, vocabulary: Arc<LabelVocabulary>, provenance: Provenance) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus {
                stage: "construction".into(),
            });
        }
        let side = records[0].glyphs[0].side();
        for r in &records {
            if r.labels.len() != vocabulary.len() {
                return Err(Error::Shape(format!(
                    "font {} has {} labels, vocabulary has {}",
                    r.font_id,
                    r.labels.len(),
                    vocabulary.len()
                )));
            }
            if r.glyphs.iter().any(|g| g.side() != side) {
                return Err(Error::Shape(format!("font {} mixes glyph sizes", r.font_id)));
            }
        }
        Ok(Self {
            records,
            vocabulary,
            provenance,
        })
    }

    pub fn records(&self) -> &[FontRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocabulary(&self) -> &Arc<LabelVocabulary> {
        &self.vocabulary
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn k(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn resolution(&self) -> usize {
        self.records[0].glyphs[0].side()
    }

    pub fn label_matrix(&self) -> LabelMatrix {
        let data = self.records.iter().flat_map(|r| r.labels.iter().copied()).collect();
        LabelMatrix::new(self.records.len(), self.k(), data).expect("records validated against vocabulary")
    }

    /// Same fonts with every glyph resized to `side`.
    pub fn resized(&self, side: usize) -> Result<Corpus> {
        if side == self.resolution() {
            return Ok(self.clone());
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(FontRecord {
                    font_id: r.font_id.clone(),
                    glyphs: r.glyphs.iter().map(|g| g.resize(side)).collect::<Result<_>>()?,
                    labels: r.labels.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(records, Arc::clone(&self.vocabulary), self.provenance.clone())
    }

    /// Subset by record index, sharing the vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Corpus::new(records, Arc::clone(&self.vocabulary), self.provenance.clone())
    }
}

/// Per-font label count summary and per-label frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub fonts: usize,
    pub labels: usize,
    pub max_labels: usize,
    pub min_labels: usize,
    pub mean_labels: f64,
    pub total_positives: usize,
    /// `(label, count)` in vocabulary order.
    pub label_frequency: Vec<(String, usize)>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let counts: Vec<usize> = corpus.records.iter().map(FontRecord::label_count).collect();
    let total: usize = counts.iter().sum();
    let support = corpus.label_matrix().column_support();
    CorpusStats {
        fonts: corpus.len(),
        labels: corpus.k(),
        max_labels: counts.iter().copied().max().unwrap_or(0),
        min_labels: counts.iter().copied().min().unwrap_or(0),
        mean_labels: total as f64 / counts.len() as f64,
        total_positives: total,
        label_frequency: corpus.vocabulary.labels().iter().cloned().zip(support).collect(),
    }
}

/// Shuffled partition into `(train, test)`; the test side gets
/// `round(N * test_fraction)` fonts. Both keep the original record order.
pub fn split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = corpus.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::EmptyCorpus {
            stage: format!("split of {n} fonts at fraction {test_fraction}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[0x5f11]));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((corpus.subset(&train)?, corpus.subset(&test)?))
}

/// What vocabulary filtering removed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dropped_labels: Vec<String>,
    pub dropped_fonts: Vec<String>,
}

/// Keeps labels the provider can embed and that have support, then drops
/// fonts left without labels.
pub fn filter_vocabulary(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<(Corpus, FilterReport)> {
    let vocab = &corpus.vocabulary;
    let support = corpus.label_matrix().column_support();
    let keep: Vec<usize> = (0..vocab.len())
        .filter(|&i| support[i] > 0 && provider.contains(vocab.name(i)))
        .collect();
    let mut report = FilterReport {
        dropped_labels: (0..vocab.len())
            .filter(|i| !keep.contains(i))
            .map(|i| vocab.name(i).to_string())
            .collect(),
        dropped_fonts: Vec::new(),
    };
    let mut records = Vec::new();
    for r in &corpus.records {
        let labels: Vec<u8> = keep.iter().map(|&i| r.labels[i]).collect();
        if labels.contains(&1) {
            records.push(FontRecord {
                font_id: r.font_id.clone(),
                glyphs: r.glyphs.clone(),
                labels,
            });
        } else {
            report.dropped_fonts.push(r.font_id.clone());
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus {
            stage: "vocabulary filtering".into(),
        });
    }
    let vocabulary = if report.dropped_labels.is_empty() {
        Arc::clone(vocab)
    } else {
        Arc::new(LabelVocabulary::new(
            keep.iter().map(|&i| vocab.name(i).to_string()).collect(),
            keep.iter().map(|&i| support[i]).collect(),
        )?)
    };
    Ok((Corpus::new(records, vocabulary, corpus.provenance.clone())?, report))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::semantics::HashProvider;

    pub(crate) fn toy_corpus(label_sets: &[&[usize]], k: usize) -> Corpus {
        let names: Vec<String> = (0..k).map(|i| format!("label{i}")).collect();
        let records: Vec<FontRecord> = label_sets
            .iter()
            .enumerate()
            .map(|(n, set)| {
                let mut labels = vec![0u8; k];
                for &i in *set {
                    labels[i] = 1;
                }
                let glyphs = (0..NUM_CHARS)
                    .map(|c| GlyphImage::from_f64(4, &[(n + c) as f64 / 64.0; 16]).unwrap())
                    .collect();
                FontRecord::new(format!("font{n:03}"), glyphs, labels).unwrap()
            })
            .collect();
        let mut freq = vec![0usize; k];
        for r in &records {
            for (f, &v) in freq.iter_mut().zip(&r.labels) {
                *f += v as usize;
            }
        }
        let vocab = LabelVocabulary::new(names, freq).unwrap();
        Corpus::new(
            records,
            Arc::new(vocab),
            Provenance {
                source: Source::Synthetic,
                seed: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn stats_single_font() {
        let c = toy_corpus(&[&[0, 1, 2]], 3);
        let s = corpus_stats(&c);
        assert_eq!((s.max_labels, s.min_labels), (3, 3));
        assert_eq!(s.mean_labels, 3.0);
    }

    #[test]
    fn stats_counts_one_two_three() {
        let c = toy_corpus(&[&[0], &[0, 1], &[0, 1, 2]], 3);
        let s = corpus_stats(&c);
        assert_eq!((s.max_labels, s.min_labels), (3, 1));
        assert_eq!(s.mean_labels, 2.0);
        assert_eq!(s.label_frequency[0], ("label0".to_string(), 3));
    }

    #[test]
    fn split_sizes_determinism_and_union() {
        let sets: Vec<Vec<usize>> = (0..10).map(|i| vec![i % 2]).collect();
        let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        let c = toy_corpus(&refs, 2);
        let (a, b) = split(&c, 0.2, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&c, 0.2, 1).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(Arc::ptr_eq(a.vocabulary(), b.vocabulary()));
        let mut ids: Vec<String> = a.records().iter().chain(b.records()).map(|r| r.font_id.clone()).collect();
        ids.sort();
        let mut orig: Vec<String> = c.records().iter().map(|r| r.font_id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn split_rejects_empty_side() {
        let c = toy_corpus(&[&[0], &[0]], 1);
        assert!(split(&c, 0.1, 0).is_err());
        assert!(split(&c, 0.0, 0).is_err());
    }

    #[test]
    fn filter_identity_and_degenerate() {
        let c = toy_corpus(&[&[0], &[1, 2]], 3);
        let all = HashProvider::new(8, 0);
        let (f, report) = filter_vocabulary(&c, &all).unwrap();
        assert_eq!(f, c);
        assert!(report.dropped_labels.is_empty());
        let none = HashProvider::with_vocabulary(8, 0, Vec::<String>::new());
        assert!(matches!(
            filter_vocabulary(&c, &none),
            Err(Error::EmptyCorpus { .. })
        ));
    }

    #[test]
    fn filter_drops_fonts_and_is_idempotent() {
        let c = toy_corpus(&[&[0], &[1, 2], &[2]], 3);
        let p = HashProvider::with_vocabulary(8, 0, ["label1".to_string(), "label2".to_string()]);
        let (once, report) = filter_vocabulary(&c, &p).unwrap();
        assert_eq!(report.dropped_labels, vec!["label0"]);
        assert_eq!(report.dropped_fonts, vec!["font000"]);
        assert_eq!(once.k(), 2);
        let (twice, again) = filter_vocabulary(&once, &p).unwrap();
        assert_eq!(twice, once);
        assert!(again.dropped_fonts.is_empty() && again.dropped_labels.is_empty());
    }
}

//! Procedural desk-scale corpus with planted shape–impression correlations.
//!
//! Each font draws a latent style (weight class, slant, serifs, aspect). The
//! style fixes the "true" label set through the attribute rules, and the
//! emitted label vector then drops each true label independently with
//! probability `noise_rate`.

use super::letterforms::{render, Style};
use super::{Corpus, FontRecord, LabelVocabulary, Provenance, Source};
use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, NUM_CHARS, RESOLUTIONS};
use crate::util::rng_for;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribute {
    Thin,
    Regular,
    Bold,
    Slanted,
    Serif,
    SansSerif,
    Narrow,
    Wide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub attribute: Attribute,
    pub labels: Vec<String>,
}

fn rule(attribute: Attribute, labels: &[&str]) -> AttributeRule {
    AttributeRule {
        attribute,
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

/// Twenty attribute-derived labels.
pub fn default_attribute_rules() -> Vec<AttributeRule> {
    vec![
        rule(Attribute::Thin, &["thin", "light", "delicate"]),
        rule(Attribute::Regular, &["regular", "plain"]),
        rule(Attribute::Bold, &["bold", "thick", "heavy"]),
        rule(Attribute::Slanted, &["italic", "oblique", "script"]),
        rule(Attribute::Serif, &["serif", "ancient", "elegant"]),
        rule(Attribute::SansSerif, &["sans-serif", "modern"]),
        rule(Attribute::Narrow, &["narrow", "condensed"]),
        rule(Attribute::Wide, &["wide", "extended"]),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_fonts: usize,
    pub n_labels: usize,
    pub attribute_rules: Vec<AttributeRule>,
    pub noise_rate: f64,
    pub seed: u64,
    pub resolution: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_fonts: 1000,
            n_labels: 20,
            attribute_rules: default_attribute_rules(),
            noise_rate: 0.3,
            seed: 0,
            resolution: 64,
        }
    }
}

impl SynthSpec {
    fn rule_labels(&self) -> Vec<String> {
        self.attribute_rules.iter().flat_map(|r| r.labels.iter().cloned()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fonts == 0 {
            return Err(Error::EmptyCorpus {
                stage: "synthesis (n_fonts = 0)".into(),
            });
        }
        let derived = self.rule_labels();
        let mut unique = derived.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != derived.len() {
            return Err(Error::Config("attribute rules repeat a label".into()));
        }
        if self.n_labels < derived.len() {
            return Err(Error::Config(format!(
                "n_labels {} is below the {} attribute-derived labels",
                self.n_labels,
                derived.len()
            )));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate {} not in [0, 1)", self.noise_rate)));
        }
        if !RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::Config(format!("resolution {} not in {RESOLUTIONS:?}", self.resolution)));
        }
        Ok(())
    }
}

/// Latent style and label bookkeeping of one synthesized font.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FontTruth {
    pub font_id: String,
    pub attributes: Vec<Attribute>,
    pub true_labels: Vec<String>,
    pub withheld: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub fonts: Vec<FontTruth>,
}

impl GroundTruthLog {
    pub fn true_count(&self) -> usize {
        self.fonts.iter().map(|f| f.true_labels.len()).sum()
    }

    pub fn withheld_count(&self) -> usize {
        self.fonts.iter().map(|f| f.withheld.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesized {
    pub corpus: Corpus,
    pub truth: GroundTruthLog,
}

fn sample_style(rng: &mut impl Rng) -> (Style, Vec<Attribute>) {
    let mut attrs = Vec::new();
    let stroke = match rng.random_range(0..3) {
        0 => {
            attrs.push(Attribute::Thin);
            rng.random_range(0.035..0.055)
        }
        1 => {
            attrs.push(Attribute::Regular);
            rng.random_range(0.08..0.10)
        }
        _ => {
            attrs.push(Attribute::Bold);
            rng.random_range(0.15..0.19)
        }
    };
    let slant = if rng.random_bool(0.4) {
        attrs.push(Attribute::Slanted);
        rng.random_range(0.28..0.40)
    } else {
        rng.random_range(-0.02..0.02)
    };
    let serif = rng.random_bool(0.4);
    attrs.push(if serif { Attribute::Serif } else { Attribute::SansSerif });
    let u: f64 = rng.random();
    let width = if u < 0.3 {
        attrs.push(Attribute::Narrow);
        rng.random_range(0.34..0.42)
    } else if u < 0.7 {
        rng.random_range(0.55..0.65)
    } else {
        attrs.push(Attribute::Wide);
        rng.random_range(0.80..0.88)
    };
    (
        Style {
            stroke,
            width,
            slant,
            serif,
        },
        attrs,
    )
}

/// Renders and labels `spec.n_fonts` fonts. Deterministic in `spec.seed`;
/// labels without any emitted support are left out of the vocabulary.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Synthesized> {
    spec.validate()?;
    let mut names = spec.rule_labels();
    let n_derived = names.len();
    names.extend((n_derived..spec.n_labels).map(|i| format!("impression-{:02}", i - n_derived)));

    let mut emitted: Vec<Vec<u8>> = Vec::with_capacity(spec.n_fonts);
    let mut truth = Vec::with_capacity(spec.n_fonts);
    let mut glyph_sets = Vec::with_capacity(spec.n_fonts);
    for n in 0..spec.n_fonts {
        let mut rng = rng_for(spec.seed, &[0x5e17, n as u64]);
        let font_id = format!("synth-{n:05}");
        let (style, attrs) = sample_style(&mut rng);
        let mut true_idx: Vec<usize> = Vec::new();
        let mut offset = 0;
        for r in &spec.attribute_rules {
            if attrs.contains(&r.attribute) {
                true_idx.extend(offset..offset + r.labels.len());
            }
            offset += r.labels.len();
        }
        for i in n_derived..spec.n_labels {
            if rng.random_bool(0.15) {
                true_idx.push(i);
            }
        }
        let mut keep: Vec<bool> = true_idx.iter().map(|_| !rng.random_bool(spec.noise_rate)).collect();
        if !true_idx.is_empty() && !keep.contains(&true) {
            let pick = rng.random_range(0..true_idx.len());
            keep[pick] = true;
        }
        let mut y = vec![0u8; spec.n_labels];
        let mut withheld = Vec::new();
        for (&i, &k) in true_idx.iter().zip(&keep) {
            if k {
                y[i] = 1;
            } else {
                withheld.push(names[i].clone());
            }
        }
        let glyphs = (0..NUM_CHARS)
            .map(|c| GlyphImage::new(spec.resolution, render(c, &style, spec.resolution)))
            .collect::<Result<Vec<_>>>()?;
        emitted.push(y);
        glyph_sets.push(glyphs);
        truth.push(FontTruth {
            font_id,
            attributes: attrs,
            true_labels: true_idx.iter().map(|&i| names[i].clone()).collect(),
            withheld,
        });
    }

    let mut freq = vec![0usize; spec.n_labels];
    for y in &emitted {
        for (f, &v) in freq.iter_mut().zip(y) {
            *f += v as usize;
        }
    }
    let kept: Vec<usize> = (0..spec.n_labels).filter(|&i| freq[i] > 0).collect();
    let vocab = LabelVocabulary::new(
        kept.iter().map(|&i| names[i].clone()).collect(),
        kept.iter().map(|&i| freq[i]).collect(),
    )?;
    let records = emitted
        .into_iter()
        .zip(glyph_sets)
        .zip(&truth)
        .map(|((y, glyphs), t)| FontRecord::new(t.font_id.clone(), glyphs, kept.iter().map(|&i| y[i]).collect()))
        .collect::<Result<Vec<_>>>()?;
    let corpus = Corpus::new(
        records,
        Arc::new(vocab),
        Provenance {
            source: Source::Synthetic,
            seed: Some(spec.seed),
        },
    )?;
    Ok(Synthesized {
        corpus,
        truth: GroundTruthLog { fonts: truth },
    })
}

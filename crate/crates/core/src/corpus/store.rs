//! On-disk corpus layout: `<root>/<font_id>/<A..Z>.png` plus a JSON manifest
//! object mapping each font id to its label list.

use super::{Corpus, FontRecord, LabelVocabulary, Provenance, Source};
use crate::error::{Error, Result};
use crate::glyph::{char_at, GlyphImage, NUM_CHARS};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

/// Fonts skipped by [`load_corpus_lenient`].
#[derive(Debug, Default)]
pub struct LoadReport {
    pub skipped: Vec<Error>,
}

fn read_manifest(manifest: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    if map.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(map)
}

fn read_font(root: &Path, font_id: &str) -> Result<Vec<GlyphImage>> {
    let dir = root.join(font_id);
    let missing: Vec<String> = (0..NUM_CHARS)
        .map(char_at)
        .filter(|c| !dir.join(format!("{c}.png")).is_file())
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGlyph {
            font_id: font_id.to_string(),
            missing: missing.join(","),
        });
    }
    let glyphs = (0..NUM_CHARS)
        .map(|c| GlyphImage::load_png(&dir.join(format!("{}.png", char_at(c)))))
        .collect::<Result<Vec<_>>>()?;
    if glyphs.iter().any(|g| g.side() != glyphs[0].side()) {
        return Err(Error::Image {
            path: dir,
            message: "glyphs of one font differ in size".into(),
        });
    }
    Ok(glyphs)
}

fn load(root: &Path, manifest: &Path, strict: bool) -> Result<(Corpus, LoadReport)> {
    let entries = read_manifest(manifest)?;
    let mut report = LoadReport::default();
    let mut fonts: Vec<(String, Vec<GlyphImage>, BTreeSet<String>)> = Vec::new();
    for (font_id, labels) in entries {
        let labels: BTreeSet<String> = labels.into_iter().collect();
        if labels.is_empty() {
            report.skipped.push(Error::invalid(format!("font {font_id} has no labels")));
            continue;
        }
        match read_font(root, &font_id) {
            Ok(glyphs) => fonts.push((font_id, glyphs, labels)),
            Err(e) if strict => return Err(e),
            Err(e) => report.skipped.push(e),
        }
    }
    if strict {
        if let Some(e) = report.skipped.pop() {
            return Err(e);
        }
    }
    if fonts.is_empty() {
        return Err(Error::EmptyCorpus { stage: "loading".into() });
    }
    if let Some(side) = fonts.first().map(|f| f.1[0].side()) {
        if let Some(bad) = fonts.iter().find(|f| f.1[0].side() != side) {
            return Err(Error::Shape(format!(
                "font {} has side {}, corpus uses {side}",
                bad.0,
                bad.1[0].side()
            )));
        }
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, _, labels) in &fonts {
        for l in labels {
            *freq.entry(l.as_str()).or_default() += 1;
        }
    }
    let mut names: Vec<(&str, usize)> = freq.into_iter().collect();
    names.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let vocab = LabelVocabulary::new(
        names.iter().map(|(n, _)| n.to_string()).collect(),
        names.iter().map(|(_, f)| *f).collect(),
    )?;
    let records = fonts
        .into_iter()
        .map(|(font_id, glyphs, labels)| {
            let mut y = vec![0u8; vocab.len()];
            for l in &labels {
                y[vocab.index_of(l).expect("label counted above")] = 1;
            }
            FontRecord::new(font_id, glyphs, y)
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = Corpus::new(
        records,
        Arc::new(vocab),
        Provenance {
            source: Source::Real,
            seed: None,
        },
    )?;
    Ok((corpus, report))
}

/// Loads every font in the manifest; any incomplete font is an error.
pub fn load_corpus(root: &Path, manifest: &Path) -> Result<Corpus> {
    load(root, manifest, true).map(|(c, _)| c)
}

/// Loads the fonts that are complete and reports the others.
pub fn load_corpus_lenient(root: &Path, manifest: &Path) -> Result<(Corpus, LoadReport)> {
    load(root, manifest, false)
}

/// Writes the corpus in the layout read by [`load_corpus`], with the
/// manifest at `<root>/manifest.json`.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    let mut manifest: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in corpus.records() {
        let dir = root.join(&r.font_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (c, g) in r.glyphs.iter().enumerate() {
            g.save_png(&dir.join(format!("{}.png", char_at(c))))?;
        }
        let labels = r
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| corpus.vocabulary().name(i))
            .collect();
        manifest.insert(&r.font_id, labels);
    }
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_font(root: &Path, id: &str, skip: Option<usize>) {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).unwrap();
        for c in 0..NUM_CHARS {
            if Some(c) == skip {
                continue;
            }
            let g = GlyphImage::from_f64(8, &[c as f64 / 26.0; 64]).unwrap();
            g.save_png(&dir.join(format!("{}.png", char_at(c)))).unwrap();
        }
    }

    #[test]
    fn loads_two_fonts() {
        let dir = tempfile::tempdir().unwrap();
        write_font(dir.path(), "a", None);
        write_font(dir.path(), "b", None);
        let m = dir.path().join("labels.json");
        std::fs::write(&m, r#"{"a": ["bold"], "b": ["thin"]}"#).unwrap();
        let c = load_corpus(dir.path(), &m).unwrap();
        assert_eq!((c.len(), c.k()), (2, 2));
        assert_eq!(c.provenance().source, Source::Real);
    }

    #[test]
    fn missing_glyph_names_the_class() {
        let dir = tempfile::tempdir().unwrap();
        write_font(dir.path(), "a", Some(16));
        let m = dir.path().join("labels.json");
        std::fs::write(&m, r#"{"a": ["bold"]}"#).unwrap();
        match load_corpus(dir.path(), &m) {
            Err(Error::MissingGlyph { font_id, missing }) => {
                assert_eq!(font_id, "a");
                assert_eq!(missing, "Q");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lenient_load_skips_incomplete_fonts() {
        let dir = tempfile::tempdir().unwrap();
        write_font(dir.path(), "a", Some(0));
        write_font(dir.path(), "b", None);
        let m = dir.path().join("labels.json");
        std::fs::write(&m, r#"{"a": ["bold"], "b": ["thin", "bold"]}"#).unwrap();
        let (c, report) = load_corpus_lenient(dir.path(), &m).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(c.vocabulary().frequency(), &[1, 1]);
    }

    #[test]
    fn empty_manifest_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("labels.json");
        std::fs::write(&m, "{}").unwrap();
        assert!(matches!(load_corpus(dir.path(), &m), Err(Error::EmptyManifest)));
    }
}

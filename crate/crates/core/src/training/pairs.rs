//! Consistent and inconsistent reference sets for the style discriminator.

use crate::error::{Error, Result};
use crate::glyph::NUM_CHARS;
use crate::util::rng_for;
use rand::seq::index::sample;
use rand::Rng;

/// References for one fake glyph of font `font`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StylePair {
    pub font: usize,
    /// `m` distinct chars of `font`.
    pub consistent_chars: Vec<usize>,
    /// A font other than `font`.
    pub other_font: usize,
    /// `m` distinct chars of `other_font`.
    pub inconsistent_chars: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StylePairBatch {
    pub m: usize,
    pub pairs: Vec<StylePair>,
}

/// One consistent and one inconsistent reference set per fake, the other
/// font drawn uniformly from the remaining `n_fonts - 1`.
pub fn make_style_pairs(fake_fonts: &[usize], n_fonts: usize, m: usize, seed: u64) -> Result<StylePairBatch> {
    if n_fonts < 2 {
        return Err(Error::invalid("style pairs need at least two fonts"));
    }
    if m == 0 || m > NUM_CHARS {
        return Err(Error::invalid(format!("reference set size {m} not in 1..={NUM_CHARS}")));
    }
    let mut rng = rng_for(seed, &[0x57e1]);
    let pairs = fake_fonts
        .iter()
        .map(|&font| {
            if font >= n_fonts {
                return Err(Error::invalid(format!("font index {font} out of {n_fonts}")));
            }
            let consistent_chars = sample(&mut rng, NUM_CHARS, m).into_vec();
            let mut other = rng.random_range(0..n_fonts - 1);
            if other >= font {
                other += 1;
            }
            let inconsistent_chars = sample(&mut rng, NUM_CHARS, m).into_vec();
            Ok(StylePair {
                font,
                consistent_chars,
                other_font: other,
                inconsistent_chars,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StylePairBatch { m, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_fonts_force_the_other() {
        let b = make_style_pairs(&[0, 1, 1, 0], 2, 4, 3).unwrap();
        for p in &b.pairs {
            assert_eq!(p.other_font, 1 - p.font);
            assert_eq!(p.consistent_chars.len(), 4);
        }
    }

    #[test]
    fn single_font_is_rejected() {
        assert!(make_style_pairs(&[0], 1, 4, 0).is_err());
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            make_style_pairs(&[3, 1, 4], 9, 4, 5).unwrap(),
            make_style_pairs(&[3, 1, 4], 9, 4, 5).unwrap()
        );
    }
}

//! What the compressed label posterior learned, and how generation moves
//! between impressions and between noise vectors.

use crate::autodiff::{no_grad, Tensor};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::glyph::{encode_gray_png, parse_chars, save_gray_png, GlyphImage, NUM_CHARS};
use crate::training::Model;
use crate::util::rng_for;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pearson correlations between label components of the posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// `M x M`, row-major.
    pub values: Vec<f64>,
    /// Components that never varied; their off-diagonal entries are 0.
    pub constant: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn new(labels: Vec<String>, values: Vec<f64>, constant: Vec<bool>) -> Result<Self> {
        let m = labels.len();
        if values.len() != m * m || constant.len() != m {
            return Err(Error::Shape(format!("correlation matrix of {m} labels needs {} values", m * m)));
        }
        Ok(Self {
            labels,
            values,
            constant,
        })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    /// Pearson correlation of the columns of `samples` (`N x M`).
    pub fn from_samples(labels: Vec<String>, samples: &[Vec<f64>]) -> Result<Self> {
        let m = labels.len();
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("correlation needs at least two samples"));
        }
        if samples.iter().any(|s| s.len() != m) {
            return Err(Error::Shape(format!("samples must have {m} components")));
        }
        let mean: Vec<f64> = (0..m).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
        let centered: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| s.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
            .collect();
        let ss: Vec<f64> = (0..m).map(|j| centered.iter().map(|c| c[j] * c[j]).sum()).collect();
        let scale = ss.iter().fold(0.0f64, |a, &b| a.max(b)).max(1.0);
        let constant: Vec<bool> = ss.iter().map(|&v| v <= 1e-24 * scale).collect();
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            values[i * m + i] = 1.0;
            for j in i + 1..m {
                let c = if constant[i] || constant[j] {
                    0.0
                } else {
                    let cov: f64 = centered.iter().map(|c| c[i] * c[j]).sum();
                    (cov / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0)
                };
                values[i * m + j] = c;
                values[j * m + i] = c;
            }
        }
        Self::new(labels, values, constant)
    }

    /// `C[perm, perm]`.
    pub fn reordered(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.size())?;
        let m = self.size();
        let values = (0..m * m).map(|x| self.get(perm[x / m], perm[x % m])).collect();
        Self::new(
            perm.iter().map(|&i| self.labels[i].clone()).collect(),
            values,
            perm.iter().map(|&i| self.constant[i]).collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for j in 0..self.size() {
                s.push_str(&format!(",{}", self.get(i, j)));
            }
            s.push('\n');
        }
        s
    }

    /// Grayscale heatmap, `cell` pixels per entry; -1 black, 0 mid gray,
    /// 1 white.
    pub fn heatmap(&self, cell: usize) -> (u32, u32, Vec<u8>) {
        let m = self.size();
        let side = m * cell;
        let mut px = vec![0u8; side * side];
        for y in 0..side {
            for x in 0..side {
                let v = self.get(y / cell, x / cell);
                px[y * side + x] = (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        (side as u32, side as u32, px)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::invalid(format!("permutation of length {} for {n} items", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Mean compressed posterior `y^ILSC` over the 26 real glyphs of each font.
pub fn font_posteriors(model: &Model, corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    if corpus.vocabulary().labels() != model.vocabulary.labels() {
        return Err(Error::invalid("corpus and model vocabularies differ"));
    }
    let _g = no_grad();
    let pd = model.params.discriminator.bind(false);
    let pi = model.params.ilsc.bind(false);
    let side = model.resolution();
    let k = model.k();
    let mut out = Vec::with_capacity(corpus.len());
    for r in corpus.records() {
        let mut data = Vec::with_capacity(NUM_CHARS * side * side);
        for g in &r.glyphs {
            data.extend(g.resize(side)?.to_f64());
        }
        let x = Tensor::new(data, &[NUM_CHARS, side, side, 1]);
        let aux = model.nets.discriminator.forward(&pd, &x, model.stage)?.aux;
        let y = model.nets.ilsc.forward(&pi, &aux).reconstructed;
        let mut mean = vec![0.0; k];
        for row in y.data().chunks(k) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / NUM_CHARS as f64;
            }
        }
        out.push(mean);
    }
    Ok(out)
}

/// Correlation of the `top_m` most frequent label components of the
/// per-font posterior.
pub fn posterior_correlation(model: &Model, corpus: &Corpus, top_m: usize) -> Result<CorrelationMatrix> {
    if top_m == 0 || top_m > model.k() {
        return Err(Error::invalid(format!("top_m {top_m} not in 1..={}", model.k())));
    }
    let top = model.vocabulary.top(top_m);
    let post = font_posteriors(model, corpus)?;
    let samples: Vec<Vec<f64>> = post.iter().map(|p| top.iter().map(|&i| p[i]).collect()).collect();
    CorrelationMatrix::from_samples(
        top.iter().map(|&i| model.vocabulary.name(i).to_string()).collect(),
        &samples,
    )
}

/// Cluster count from the largest gap among the leading singular values.
fn eigengap(sv: &[f64]) -> usize {
    let limit = (sv.len() / 2).max(2).min(sv.len());
    let mut best = (1, f64::NEG_INFINITY);
    for i in 0..limit.saturating_sub(1) {
        let gap = sv[i] - sv[i + 1];
        if gap > best.1 + 1e-12 {
            best = (i + 1, gap);
        }
    }
    best.0.max(1)
}

fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = rng_for(seed, &[0xb1c]);
    // k-means++ seeding
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &di) in d.iter().enumerate() {
            if u < di {
                pick = i;
                break;
            }
            u -= di;
        }
        centers.push(points[pick].clone());
    }
    let mut assign = vec![0; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| dist(p, &centers[a]).total_cmp(&dist(p, &centers[b])))
                .unwrap_or(0);
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                for (j, v) in center.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Spectral co-clustering of `|C|` followed by ordering clusters, and
/// items inside a cluster, by the second singular vector. `n_clusters`
/// defaults to the largest singular-value gap.
pub fn bicluster_reorder_with(c: &CorrelationMatrix, n_clusters: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let m = c.size();
    if m <= 1 {
        return Ok((0..m).collect());
    }
    let a = DMatrix::from_fn(m, m, |i, j| c.get(i, j).abs());
    let row: Vec<f64> = (0..m).map(|i| a.row(i).sum().max(1e-12)).collect();
    let col: Vec<f64> = (0..m).map(|j| a.column(j).sum().max(1e-12)).collect();
    let an = DMatrix::from_fn(m, m, |i, j| a[(i, j)] / (row[i] * col[j]).sqrt());
    let svd = an.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::invalid("SVD did not converge"))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]).then(x.cmp(&y)));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let k = n_clusters.unwrap_or_else(|| eigengap(&sv)).clamp(1, m);
    let dims = ((k as f64).log2().ceil() as usize).max(1).min(m - 1);
    let embed: Vec<Vec<f64>> = (0..m)
        .map(|i| (1..=dims).map(|d| u[(i, order[d])] / row[i].sqrt()).collect())
        .collect();
    let fiedler: Vec<f64> = embed.iter().map(|e| e[0]).collect();
    let assign = if k > 1 { kmeans(&embed, k, seed) } else { vec![0; m] };
    let cluster_pos = |cl: usize| {
        let members: Vec<f64> = (0..m).filter(|&i| assign[i] == cl).map(|i| fiedler[i]).collect();
        members.iter().sum::<f64>() / members.len().max(1) as f64
    };
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&x, &y| {
        cluster_pos(assign[x])
            .total_cmp(&cluster_pos(assign[y]))
            .then(assign[x].cmp(&assign[y]))
            .then(fiedler[x].total_cmp(&fiedler[y]))
            .then(x.cmp(&y))
    });
    Ok(perm)
}

pub fn bicluster_reorder(c: &CorrelationMatrix) -> Result<Vec<usize>> {
    bicluster_reorder_with(c, None, 0)
}

/// Rows of generated glyphs, one row per lambda.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub lambdas: Vec<f64>,
    pub rows: Vec<Vec<GlyphImage>>,
}

impl ImageGrid {
    /// Row-major raster with 1-px mid-gray separators; ink dark on white.
    pub fn raster(&self) -> Result<(u32, u32, Vec<u8>)> {
        let cols = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let side = self
            .rows
            .iter()
            .flatten()
            .map(GlyphImage::side)
            .next()
            .ok_or_else(|| Error::invalid("empty grid"))?;
        let w = cols * side + cols.saturating_sub(1);
        let h = self.rows.len() * side + self.rows.len().saturating_sub(1);
        let mut px = vec![128u8; w * h];
        for (r, row) in self.rows.iter().enumerate() {
            for (c, g) in row.iter().enumerate() {
                if g.side() != side {
                    return Err(Error::Shape("grid images differ in size".into()));
                }
                let ink = g.to_gray8();
                for y in 0..side {
                    for x in 0..side {
                        px[(r * (side + 1) + y) * w + c * (side + 1) + x] = 255 - ink[y * side + x];
                    }
                }
            }
        }
        Ok((w as u32, h as u32, px))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h, px) = self.raster()?;
        save_gray_png(path, w, h, &px)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let (w, h, px) = self.raster()?;
        encode_gray_png(w, h, &px)
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty()
        || lambdas.iter().any(|l| !(0.0..=1.0).contains(l))
        || lambdas.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::invalid("lambdas must be sorted within [0, 1]"));
    }
    Ok(())
}

/// Conditions on `(1 - l) y_a + l y_b` before completion, noise fixed by
/// `seed`. Each row renders exactly like [`Model::generate`].
pub fn impression_interpolation_grid(
    model: &Model,
    a: &[(String, f64)],
    b: &[(String, f64)],
    lambdas: &[f64],
    chars: &str,
    seed: u64,
) -> Result<ImageGrid> {
    check_lambdas(lambdas)?;
    let classes = parse_chars(chars)?;
    let ya = model.impression_vector(a)?;
    let yb = model.impression_vector(b)?;
    let z = model.noise(seed);
    let rows = lambdas
        .iter()
        .map(|&l| {
            let y: Vec<f64> = ya.iter().zip(&yb).map(|(p, q)| (1.0 - l) * p + l * q).collect();
            model.render(&model.condition(&y)?, &z, &classes)
        })
        .collect::<Result<_>>()?;
    Ok(ImageGrid {
        lambdas: lambdas.to_vec(),
        rows,
    })
}

/// Fixed condition, `z = (1 - l) z_1 + l z_2`.
pub fn noise_interpolation_grid(
    model: &Model,
    impressions: &[(String, f64)],
    seed_1: u64,
    seed_2: u64,
    lambdas: &[f64],
    chars: &str,
) -> Result<ImageGrid> {
    check_lambdas(lambdas)?;
    let classes = parse_chars(chars)?;
    let cond = model.condition(&model.impression_vector(impressions)?)?;
    let (z1, z2) = (model.noise(seed_1), model.noise(seed_2));
    let rows = lambdas
        .iter()
        .map(|&l| {
            let z: Vec<f64> = z1.iter().zip(&z2).map(|(p, q)| (1.0 - l) * p + l * q).collect();
            model.render(&cond, &z, &classes)
        })
        .collect::<Result<_>>()?;
    Ok(ImageGrid {
        lambdas: lambdas.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(m: usize, split: usize, within: f64) -> CorrelationMatrix {
        let v = (0..m * m)
            .map(|x| {
                let (i, j) = (x / m, x % m);
                if i == j {
                    1.0
                } else if (i < split) == (j < split) {
                    within
                } else {
                    0.0
                }
            })
            .collect();
        CorrelationMatrix::new((0..m).map(|i| format!("l{i}")).collect(), v, vec![false; m]).unwrap()
    }

    #[test]
    fn planted_blocks_become_contiguous() {
        let c = blocks(6, 3, 0.9);
        // interleave the two groups
        let shuffle = [0, 3, 1, 4, 2, 5];
        let mixed = c.reordered(&shuffle).unwrap();
        let perm = bicluster_reorder(&mixed).unwrap();
        let groups: Vec<bool> = perm.iter().map(|&p| shuffle[p] < 3).collect();
        let switches = groups.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1, "{groups:?}");
    }

    #[test]
    fn pearson_of_planted_samples() {
        let samples: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, 5.0]).collect();
        let c = CorrelationMatrix::from_samples(vec!["a".into(), "b".into(), "c".into()], &samples).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(c.get(0, 2), 0.0);
        assert_eq!(c.constant, vec![false, false, true]);
        assert_eq!(c.get(2, 2), 1.0);
    }

    #[test]
    fn identity_gives_a_permutation() {
        let c = blocks(5, 0, 0.0);
        let perm = bicluster_reorder(&c).unwrap();
        check_permutation(&perm, 5).unwrap();
    }

    #[test]
    fn raster_has_separators() {
        let g = GlyphImage::new(4, vec![1.0; 16]).unwrap();
        let grid = ImageGrid {
            lambdas: vec![0.0, 1.0],
            rows: vec![vec![g.clone(), g.clone()], vec![g.clone(), g]],
        };
        let (w, h, px) = grid.raster().unwrap();
        assert_eq!((w, h), (9, 9));
        assert_eq!(px[4], 128);
        assert_eq!(px[0], 0);
    }
}

//! Label embeddings, the semantic condition and its Gaussian perturbation.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamStore};
use crate::util::{derive_seed, normal_vec, rng_for, sha256_hex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Maps label strings to fixed-width vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn contains(&self, label: &str) -> bool;
    /// `None` when the label is not covered.
    fn lookup(&self, label: &str) -> Option<Vec<f64>>;
    /// Short description recorded in run manifests.
    fn describe(&self) -> String;
}

pub fn embed_label(label: &str, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
    provider
        .lookup(label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

/// Unit-norm Gaussian vectors derived from a hash of the label and a seed.
#[derive(Clone, Debug)]
pub struct HashProvider {
    dim: usize,
    seed: u64,
    vocabulary: Option<HashSet<String>>,
}

impl HashProvider {
    /// Covers every label.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            vocabulary: None,
        }
    }

    /// Covers only the listed labels.
    pub fn with_vocabulary(dim: usize, seed: u64, labels: impl IntoIterator<Item = String>) -> Self {
        Self {
            dim,
            seed,
            vocabulary: Some(labels.into_iter().collect()),
        }
    }
}

impl EmbeddingProvider for HashProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn contains(&self, label: &str) -> bool {
        self.vocabulary.as_ref().map_or(true, |v| v.contains(label))
    }

    fn lookup(&self, label: &str) -> Option<Vec<f64>> {
        if !self.contains(label) {
            return None;
        }
        let digest = sha256_hex(label.as_bytes());
        let salt = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[salt]));
        let mut v = normal_vec(&mut rng, self.dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        Some(v)
    }

    fn describe(&self) -> String {
        format!("hash(dim={}, seed={})", self.dim, self.seed)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"GGEM";
const CACHE_VERSION: u32 = 1;

/// Embedding table read from a text file with one `label v1 .. vD` row per
/// line. A leading `count dim` header line, as written by common tools, is
/// skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct FileProvider {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
    source: String,
}

impl FileProvider {
    pub fn load_text(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = HashMap::new();
        let mut dim = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(label) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if lineno == 0 && values.len() == 1 && label.parse::<usize>().is_ok() {
                continue;
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Shape(format!(
                        "{}:{}: expected {d} values, found {}",
                        path.display(),
                        lineno + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            rows.insert(label.to_string(), values);
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| Error::invalid("embedding file has no rows"))?;
        Ok(Self {
            dim,
            rows,
            source: path.display().to_string(),
        })
    }

    /// Binary cache: magic, version, dim, count, then per row a
    /// length-prefixed UTF-8 label and `dim` little-endian `f64`s.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut labels: Vec<&String> = self.rows.keys().collect();
        labels.sort();
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(labels.len() as u32).to_le_bytes());
        for l in labels {
            buf.extend_from_slice(&(l.len() as u32).to_le_bytes());
            buf.extend_from_slice(l.as_bytes());
            for v in &self.rows[l] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::invalid(format!("embedding cache {}: {m}", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        if u32_at(take(4)?) != CACHE_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let dim = u32_at(take(4)?);
        let count = u32_at(take(4)?);
        let mut rows = HashMap::with_capacity(count);
        for _ in 0..count {
            let len = u32_at(take(4)?);
            let label = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("label is not UTF-8"))?;
            let values = take(8 * dim)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rows.insert(label, values);
        }
        Ok(Self {
            dim,
            rows,
            source: path.display().to_string(),
        })
    }

    /// Uses the cache next to `path` (`<path>.bin`) when present, writing it
    /// after the first text parse.
    pub fn open(path: &Path) -> Result<Self> {
        let cache = path.with_extension(match path.extension() {
            Some(e) => format!("{}.bin", e.to_string_lossy()),
            None => "bin".into(),
        });
        if cache.is_file() {
            return Self::load_cache(&cache);
        }
        let p = Self::load_text(path)?;
        if let Err(e) = p.save_cache(&cache) {
            log::warn!("could not write embedding cache: {e}");
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn contains(&self, label: &str) -> bool {
        self.rows.contains_key(label)
    }

    fn lookup(&self, label: &str) -> Option<Vec<f64>> {
        self.rows.get(label).cloned()
    }

    fn describe(&self) -> String {
        format!("file({}, dim={})", self.source, self.dim)
    }
}

/// Embeddings of a vocabulary, `K x E` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub k: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_provider(labels: &[String], provider: &dyn EmbeddingProvider) -> Result<Self> {
        let dim = provider.dimension();
        let mut values = Vec::with_capacity(labels.len() * dim);
        for l in labels {
            values.extend(embed_label(l, provider)?);
        }
        Ok(Self {
            k: labels.len(),
            dim,
            values,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(self.values.clone(), &[self.k, self.dim])
    }
}

/// Weighted mean of label embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCondition {
    pub s: Vec<f64>,
}

/// `s = sum_i w_i e_i / sum_i w_i`.
pub fn semantic_condition(weights: &[f64], table: &EmbeddingTable) -> Result<SemanticCondition> {
    if weights.len() != table.k {
        return Err(Error::Shape(format!(
            "weight vector has length {}, vocabulary has {}",
            weights.len(),
            table.k
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("semantic condition needs a positive weight"));
    }
    let mut s = vec![0.0; table.dim];
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for (acc, &e) in s.iter_mut().zip(table.row(i)) {
                *acc += w * e;
            }
        }
    }
    s.iter_mut().for_each(|v| *v /= total);
    Ok(SemanticCondition { s })
}

/// Batched [`semantic_condition`] for `[B, K]` weights; rows must have
/// positive mass.
pub fn semantic_batch(weights: &[Vec<f64>], table: &EmbeddingTable) -> Result<Tensor> {
    let mut out = Vec::with_capacity(weights.len() * table.dim);
    for w in weights {
        out.extend(semantic_condition(w, table)?.s);
    }
    Ok(Tensor::new(out, &[weights.len(), table.dim]))
}

/// Floor added to the softplus scale.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// `s' = mu(s) + sigma(s) * eps`, `sigma = softplus(.) + floor`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationHead {
    pub mu: Linear,
    pub sigma: Linear,
    pub dim: usize,
}

impl PerturbationHead {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mu: Linear::with_gain(store, &format!("{name}.mu"), dim, dim, 1.0, rng),
            sigma: Linear::with_gain(store, &format!("{name}.sigma"), dim, dim, 1.0, rng),
            dim,
        }
    }

    pub fn mean(&self, p: &Bound, s: &Tensor) -> Tensor {
        self.mu.forward(p, s)
    }

    pub fn scale(&self, p: &Bound, s: &Tensor) -> Tensor {
        self.sigma.forward(p, s).softplus().add_scalar(SIGMA_FLOOR)
    }

    /// `eps = None` disables the noise, giving `mu(s)`.
    pub fn forward(&self, p: &Bound, s: &Tensor, eps: Option<&Tensor>) -> Tensor {
        let mu = self.mean(p, s);
        match eps {
            None => mu,
            Some(e) => mu.add(&self.scale(p, s).mul(e)),
        }
    }
}

/// Standard normal noise for `rows` perturbations of width `dim`.
pub fn perturbation_noise(seed: u64, rows: usize, dim: usize) -> Tensor {
    let mut rng = rng_for(seed, &[0xe95]);
    Tensor::new(normal_vec(&mut rng, rows * dim), &[rows, dim])
}

/// Single-vector perturbation with noise drawn from `noise_seed`.
pub fn perturb(s: &SemanticCondition, head: &PerturbationHead, p: &Bound, noise_seed: u64) -> SemanticCondition {
    let x = Tensor::new(s.s.clone(), &[1, s.s.len()]);
    let eps = perturbation_noise(noise_seed, 1, s.s.len());
    SemanticCondition {
        s: head.forward(p, &x, Some(&eps)).to_vec(),
    }
}

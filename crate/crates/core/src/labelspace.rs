//! Label co-occurrence statistics and missing-label completion.
//!
//! `T[i][j] = P(j | i)` is estimated from the binary label matrix, and a
//! label vector is completed by averaging the rows of `T` selected by its
//! attached labels. Attached labels always stay at 1.

use crate::error::{Error, Result};
use crate::util::sha256_hex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Vocabularies up to this size keep `T` dense.
pub const DENSE_LIMIT: usize = 4096;

/// Binary `N x K` matrix of attached labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    k: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(rows: usize, k: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * k {
            return Err(Error::Shape(format!(
                "label matrix {rows}x{k} needs {} entries, got {}",
                rows * k,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("label entries must be 0 or 1"));
        }
        Ok(Self { rows, k, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ragged label rows".into()));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, n: usize) -> &[u8] {
        &self.data[n * self.k..(n + 1) * self.k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.k.max(1)).take(self.rows)
    }

    pub fn get(&self, n: usize, i: usize) -> u8 {
        self.data[n * self.k + i]
    }

    pub fn positives(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Positive count per label.
    pub fn column_support(&self) -> Vec<usize> {
        let mut support = vec![0usize; self.k];
        for row in self.iter_rows() {
            for (s, &v) in support.iter_mut().zip(row) {
                *s += v as usize;
            }
        }
        support
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.k);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        LabelMatrix {
            rows: rows.len(),
            k: self.k,
            data,
        }
    }

    /// Indices of rows with at least one positive.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&n| self.row(n).contains(&1)).collect()
    }

    pub fn as_f64_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Compressed rows: `indptr[i]..indptr[i+1]` indexes `indices`/`values`.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Conditional co-occurrence probabilities, `T[i][j] = P(j | i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMatrix {
    k: usize,
    storage: Storage,
}

impl CooccurrenceMatrix {
    /// `T = I`: no label implies any other, so completion is the identity.
    pub fn identity(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self {
            k,
            storage: Storage::Dense(data),
        }
    }

    pub fn from_dense(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::Shape(format!("dense T needs {} entries", k * k)));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("T entries must lie in [0, 1]"));
        }
        Ok(Self {
            k,
            storage: Storage::Dense(data),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[i * self.k + j],
            Storage::Sparse {
                indptr,
                indices,
                values,
            } => {
                let (lo, hi) = (indptr[i], indptr[i + 1]);
                match indices[lo..hi].binary_search(&j) {
                    Ok(pos) => values[lo + pos],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Adds `scale * T[i][..]` into `acc`.
    fn accumulate_row(&self, i: usize, scale: f64, acc: &mut [f64]) {
        match &self.storage {
            Storage::Dense(d) => {
                for (a, &t) in acc.iter_mut().zip(&d[i * self.k..(i + 1) * self.k]) {
                    *a += scale * t;
                }
            }
            Storage::Sparse {
                indptr,
                indices,
                values,
            } => {
                for p in indptr[i]..indptr[i + 1] {
                    acc[indices[p]] += scale * values[p];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(d) => d.clone(),
            Storage::Sparse { .. } => {
                let mut out = vec![0.0; self.k * self.k];
                for i in 0..self.k {
                    self.accumulate_row(i, 1.0, &mut out[i * self.k..(i + 1) * self.k]);
                }
                out
            }
        }
    }
}

/// Builds `T` from the label matrix, dense up to [`DENSE_LIMIT`] labels.
pub fn build_cooccurrence(labels: &LabelMatrix) -> Result<CooccurrenceMatrix> {
    build_cooccurrence_with_limit(labels, DENSE_LIMIT, None)
}

/// Like [`build_cooccurrence`] with an explicit dense/sparse threshold.
/// `names` is only used to name a zero-support label in the error.
pub fn build_cooccurrence_with_limit(
    labels: &LabelMatrix,
    dense_limit: usize,
    names: Option<&[String]>,
) -> Result<CooccurrenceMatrix> {
    let support = labels.column_support();
    if let Some(i) = support.iter().position(|&s| s == 0) {
        let name = names
            .and_then(|n| n.get(i).cloned())
            .unwrap_or_else(|| format!("#{i}"));
        return Err(Error::ZeroSupport(name));
    }
    Ok(cooccurrence_unchecked(labels, dense_limit))
}

/// Variant for a subset of the corpus (such as the training split) in which
/// some vocabulary labels may never occur. An unseen label gets `T_ii = 1`
/// and no other mass, so it neither implies nor is implied by anything.
pub fn build_cooccurrence_allowing_unseen(labels: &LabelMatrix) -> CooccurrenceMatrix {
    cooccurrence_unchecked(labels, DENSE_LIMIT)
}

fn cooccurrence_unchecked(labels: &LabelMatrix, dense_limit: usize) -> CooccurrenceMatrix {
    let k = labels.k();
    let support = labels.column_support();
    let positives: Vec<Vec<usize>> = labels
        .iter_rows()
        .map(|r| r.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect())
        .collect();
    if k <= dense_limit {
        let mut counts = vec![0u64; k * k];
        for p in &positives {
            for &i in p {
                for &j in p {
                    counts[i * k + j] += 1;
                }
            }
        }
        let data = counts
            .iter()
            .enumerate()
            .map(|(idx, &c)| match support[idx / k] {
                0 => (idx / k == idx % k) as u8 as f64,
                s => c as f64 / s as f64,
            })
            .collect();
        CooccurrenceMatrix {
            k,
            storage: Storage::Dense(data),
        }
    } else {
        let mut rows: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); k];
        for p in &positives {
            for &i in p {
                for &j in p {
                    *rows[i].entry(j).or_insert(0) += 1;
                }
            }
        }
        let mut indptr = Vec::with_capacity(k + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, row) in rows.iter_mut().enumerate() {
            if support[i] == 0 {
                row.insert(i, 1);
            }
            let s = support[i].max(1);
            for (&j, &c) in row.iter() {
                indices.push(j);
                values.push(c as f64 / s as f64);
            }
            indptr.push(indices.len());
        }
        CooccurrenceMatrix {
            k,
            storage: Storage::Sparse {
                indptr,
                indices,
                values,
            },
        }
    }
}

/// Label vector after co-occurrence completion; entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedLabelVector {
    pub values: Vec<f64>,
}

/// Completes a (possibly soft) label vector `y` in `[0, 1]^K`:
/// `out_j = y_j + (1 - y_j) * sum_i T_ij y_i / sum_i y_i`.
///
/// For binary `y` this is exactly the co-occurrence completion: attached
/// labels stay 1 and unattached labels get the mean of `T_ij` over the
/// attached `i`.
pub fn complete_weighted(y: &[f64], t: &CooccurrenceMatrix) -> Result<CompletedLabelVector> {
    if y.len() != t.k() {
        return Err(Error::Shape(format!(
            "label vector has length {}, T is {}x{}",
            y.len(),
            t.k(),
            t.k()
        )));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("label weights must lie in [0, 1]"));
    }
    let total: f64 = y.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoPositiveLabels);
    }
    let mut acc = vec![0.0; y.len()];
    for (i, &w) in y.iter().enumerate() {
        if w > 0.0 {
            t.accumulate_row(i, w, &mut acc);
        }
    }
    let values = y
        .iter()
        .zip(&acc)
        .map(|(&yj, &a)| (yj + (1.0 - yj) * (a / total)).clamp(0.0, 1.0))
        .collect();
    Ok(CompletedLabelVector { values })
}

/// Completion of a binary label vector.
pub fn complete_labels(y: &[u8], t: &CooccurrenceMatrix) -> Result<CompletedLabelVector> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("label entries must be 0 or 1"));
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    complete_weighted(&yf, t)
}

/// Row-wise completion, computed once and cached by the caller.
pub fn complete_all(labels: &LabelMatrix, t: &CooccurrenceMatrix) -> Result<Vec<CompletedLabelVector>> {
    labels.iter_rows().map(|row| complete_labels(row, t)).collect()
}

/// Flips exactly `floor(ratio * positives)` positive entries to 0, chosen
/// uniformly without replacement over all positives of the matrix.
pub fn remove_labels(labels: &LabelMatrix, ratio: f64, seed: u64) -> Result<LabelMatrix> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("removal ratio {ratio} outside [0, 1]")));
    }
    let positions: Vec<usize> = labels
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| i)
        .collect();
    // the epsilon keeps products like 0.29 * 100 from flooring to 28
    let count = ((ratio * positions.len() as f64) + 1e-9).floor() as usize;
    let count = count.min(positions.len());
    let mut out = labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in rand::seq::index::sample(&mut rng, positions.len(), count) {
        out.data[positions[idx]] = 0;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    format: String,
    version: u32,
    k: usize,
    labels: Vec<String>,
    layout: String,
    dtype: String,
    nnz: usize,
    data_file: String,
    checksum: String,
}

const MATRIX_FORMAT: &str = "glyphgen-cooccurrence";

fn data_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `T` as a JSON header (`path`) plus a little-endian binary body
/// next to it (same stem, `.bin`).
pub fn save_cooccurrence(t: &CooccurrenceMatrix, labels: &[String], path: &Path) -> Result<()> {
    if labels.len() != t.k() {
        return Err(Error::Shape("label list length differs from K".into()));
    }
    let mut body = Vec::new();
    let (layout, nnz) = match &t.storage {
        Storage::Dense(d) => {
            for v in d {
                body.extend_from_slice(&v.to_le_bytes());
            }
            ("dense", d.len())
        }
        Storage::Sparse {
            indptr,
            indices,
            values,
        } => {
            for &p in indptr {
                body.extend_from_slice(&(p as u64).to_le_bytes());
            }
            for &i in indices {
                body.extend_from_slice(&(i as u64).to_le_bytes());
            }
            for v in values {
                body.extend_from_slice(&v.to_le_bytes());
            }
            ("csr", values.len())
        }
    };
    let bin = data_path(path);
    let header = MatrixHeader {
        format: MATRIX_FORMAT.into(),
        version: 1,
        k: t.k(),
        labels: labels.to_vec(),
        layout: layout.into(),
        dtype: "f64le".into(),
        nnz,
        data_file: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        checksum: format!("sha256:{}", sha256_hex(&body)),
    };
    std::fs::write(&bin, &body).map_err(|e| Error::io(&bin, e))?;
    let json = serde_json::to_vec_pretty(&header)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`save_cooccurrence`], verifying its checksum.
pub fn load_cooccurrence(path: &Path) -> Result<(CooccurrenceMatrix, Vec<String>)> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header: MatrixHeader = serde_json::from_slice(&raw)?;
    if header.format != MATRIX_FORMAT || header.dtype != "f64le" {
        return Err(Error::invalid(format!("{}: not a co-occurrence matrix file", path.display())));
    }
    let bin = path.with_file_name(&header.data_file);
    let body = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let sum = format!("sha256:{}", sha256_hex(&body));
    if sum != header.checksum {
        return Err(Error::invalid(format!("{}: checksum mismatch", bin.display())));
    }
    let words: Vec<[u8; 8]> = body.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
    let k = header.k;
    let storage = match header.layout.as_str() {
        "dense" => {
            if words.len() != k * k {
                return Err(Error::Shape("dense body has the wrong size".into()));
            }
            Storage::Dense(words.iter().map(|w| f64::from_le_bytes(*w)).collect())
        }
        "csr" => {
            let nnz = header.nnz;
            if words.len() != k + 1 + 2 * nnz {
                return Err(Error::Shape("csr body has the wrong size".into()));
            }
            let indptr = words[..k + 1].iter().map(|w| u64::from_le_bytes(*w) as usize).collect();
            let indices = words[k + 1..k + 1 + nnz]
                .iter()
                .map(|w| u64::from_le_bytes(*w) as usize)
                .collect();
            let values = words[k + 1 + nnz..].iter().map(|w| f64::from_le_bytes(*w)).collect();
            Storage::Sparse {
                indptr,
                indices,
                values,
            }
        }
        other => return Err(Error::invalid(format!("unknown matrix layout {other:?}"))),
    };
    Ok((CooccurrenceMatrix { k, storage }, header.labels))
}

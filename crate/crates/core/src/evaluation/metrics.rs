//! Ranking and distribution metrics.

use crate::error::{Error, Result};
use crate::labelspace::LabelMatrix;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Positions (1-based) of the `H` positives of one label among `total`
/// fonts sorted by descending score.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub total: usize,
    pub ranks: Vec<usize>,
}

impl RankingInstance {
    pub fn new(total: usize, mut ranks: Vec<usize>) -> Result<Self> {
        ranks.sort_unstable();
        if ranks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("ranks must be distinct"));
        }
        if ranks.iter().any(|&r| r == 0 || r > total) {
            return Err(Error::invalid(format!("ranks must lie in 1..={total}")));
        }
        Ok(Self { total, ranks })
    }

    pub fn positives(&self) -> usize {
        self.ranks.len()
    }
}

/// `(1/H) sum_h h / r_h`; `None` when the label has no positive.
pub fn average_precision(inst: &RankingInstance) -> Option<f64> {
    if inst.ranks.is_empty() {
        return None;
    }
    let h = inst.ranks.len() as f64;
    Some(
        inst.ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / r as f64)
            .sum::<f64>()
            / h,
    )
}

/// Ranks of the positives in `scores`, ties resolved pessimistically so a
/// positive sits after every negative it is tied with.
pub fn ranking_for(scores: &[f64], positive: &[bool]) -> Result<RankingInstance> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(positive[a].cmp(&positive[b])));
    let ranks = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| positive[i])
        .map(|(r, _)| r + 1)
        .collect();
    Ok(RankingInstance {
        total: scores.len(),
        ranks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    /// AP per evaluated label, `None` for labels without positives.
    pub per_label: Vec<Option<f64>>,
    /// Evaluated label indices that had no positive and were left out.
    pub skipped: Vec<usize>,
}

/// Mean AP over labels with at least one positive. `labels_subset`
/// restricts the mean (e.g. to the top-M frequent labels).
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    labels: &LabelMatrix,
    labels_subset: Option<&[usize]>,
) -> Result<MapReport> {
    if scores.len() != labels.rows() {
        return Err(Error::Shape(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.rows()
        )));
    }
    let k = labels.k();
    if scores.iter().any(|r| r.len() != k) {
        return Err(Error::Shape(format!("score rows must have {k} entries")));
    }
    let all: Vec<usize> = (0..k).collect();
    let subset = labels_subset.unwrap_or(&all);
    let mut per_label = Vec::with_capacity(subset.len());
    let mut skipped = Vec::new();
    for &i in subset {
        if i >= k {
            return Err(Error::invalid(format!("label index {i} out of {k}")));
        }
        let col: Vec<f64> = scores.iter().map(|r| r[i]).collect();
        let pos: Vec<bool> = (0..labels.rows()).map(|n| labels.get(n, i) == 1).collect();
        let ap = average_precision(&ranking_for(&col, &pos)?);
        if ap.is_none() {
            skipped.push(i);
        }
        per_label.push(ap);
    }
    let aps: Vec<f64> = per_label.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::NoPositiveLabels);
    }
    Ok(MapReport {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        per_label,
        skipped,
    })
}

/// Diagonal jitter added to both covariances.
pub const FID_JITTER: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance.
pub fn moments(feats: &[Vec<f64>]) -> Result<Moments> {
    let n = feats.len();
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let d = feats[0].len();
    if feats.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature rows differ in dimension".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok(Moments { mean, cov })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_from_moments(a: &Moments, b: &Moments) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let d = a.mean.len();
    let jitter = DMatrix::<f64>::identity(d, d) * FID_JITTER;
    let sa = &a.cov + &jitter;
    let sb = &b.cov + &jitter;
    let ra = psd_sqrt(&sa);
    let cross = psd_sqrt(&(&ra * &sb * &ra));
    let diff = &a.mean - &b.mean;
    let value = diff.dot(&diff) + sa.trace() + sb.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    frechet_from_moments(&moments(a)?, &moments(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let ap = |total, r: Vec<usize>| average_precision(&RankingInstance::new(total, r).unwrap()).unwrap();
        assert_eq!(ap(5, vec![1]), 1.0);
        assert!((ap(17_202, vec![100]) - 0.01).abs() < 1e-15);
        assert!((ap(10, vec![3, 1]) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&RankingInstance::new(3, vec![]).unwrap()), None);
    }

    #[test]
    fn ties_are_pessimistic() {
        let r = ranking_for(&[0.5, 0.5, 0.5], &[true, false, false]).unwrap();
        assert_eq!(r.ranks, vec![3]);
        let r = ranking_for(&[0.9, 0.5, 0.5, 0.1], &[false, true, true, false]).unwrap();
        assert_eq!(r.ranks, vec![2, 3]);
    }

    #[test]
    fn perfect_scores_give_one() {
        let labels = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 0]]).unwrap();
        let scores: Vec<Vec<f64>> = labels.as_f64_rows();
        let rep = mean_average_precision(&scores, &labels, None).unwrap();
        assert_eq!(rep.map, 1.0);
    }

    #[test]
    fn empty_labels_are_skipped_or_fatal() {
        let labels = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        let rep = mean_average_precision(&[vec![0.2, 0.1], vec![0.1, 0.3]], &labels, None).unwrap();
        assert_eq!(rep.skipped, vec![1]);
        assert_eq!(rep.map, 1.0);
        let none = LabelMatrix::from_rows(&[vec![0, 0]]).unwrap();
        assert!(mean_average_precision(&[vec![0.0, 0.0]], &none, None).is_err());
    }

    #[test]
    fn univariate_closed_form() {
        let m = |mu: f64| Moments {
            mean: DVector::from_element(1, mu),
            cov: DMatrix::from_element(1, 1, 1.0),
        };
        assert!((frechet_from_moments(&m(0.0), &m(1.0)).unwrap() - 1.0).abs() < 1e-6);
        let wide = Moments {
            mean: DVector::from_element(1, 0.0),
            cov: DMatrix::from_element(1, 1, 4.0),
        };
        // (sigma_a - sigma_b)^2 = 1
        assert!((frechet_from_moments(&m(0.0), &wide).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_sets_are_zero() {
        let a: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-5);
        assert!(frechet_distance(&a, &[vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
    }
}

use glyphgen::analysis::{bicluster_reorder, CorrelationMatrix};
use glyphgen::autodiff::Tensor;
use glyphgen::evaluation::{average_precision, frechet_distance, mean_average_precision, ranking_for, RankingInstance};
use glyphgen::labelspace::{build_cooccurrence, build_cooccurrence_with_limit, complete_labels, complete_weighted};
use glyphgen::nets::{growth_schedule, GrowthConfig};
use glyphgen::training::{gradient_penalty, make_style_pairs};
use glyphgen::util::rng_for;
use glyphgen::LabelMatrix;
use proptest::prelude::*;

/// Label matrices with every label attached to at least one font.
fn label_matrix(max_n: usize, max_k: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max_k, 1..=max_n).prop_flat_map(|(k, n)| {
        prop::collection::vec(prop::collection::vec(0u8..=1, k), n).prop_map(move |mut rows| {
            for i in 0..k {
                if rows.iter().all(|r| r[i] == 0) {
                    let n = rows.len();
                    rows[i % n][i] = 1;
                }
            }
            rows
        })
    })
}

fn naive_t(rows: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let k = rows[0].len();
    let mut t = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut den = 0.0;
        let mut num = vec![0.0; k];
        for r in rows {
            den += r[i] as f64;
            for j in 0..k {
                num[j] += (r[i] * r[j]) as f64;
            }
        }
        for j in 0..k {
            t[i][j] = num[j] / den;
        }
    }
    t
}

fn naive_completion(y: &[u8], t: &[Vec<f64>]) -> Vec<f64> {
    let k = y.len();
    let attached: f64 = y.iter().map(|&v| v as f64).sum();
    (0..k)
        .map(|j| {
            if y[j] == 1 {
                1.0
            } else {
                (0..k).map(|i| t[i][j] * y[i] as f64).sum::<f64>() / attached
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cooccurrence_matches_naive(rows in label_matrix(20, 10)) {
        let m = LabelMatrix::from_rows(&rows).unwrap();
        let oracle = naive_t(&rows);
        for t in [build_cooccurrence(&m).unwrap(), build_cooccurrence_with_limit(&m, 0, None).unwrap()] {
            for i in 0..m.k() {
                for j in 0..m.k() {
                    prop_assert!((t.get(i, j) - oracle[i][j]).abs() <= 1e-12);
                }
            }
            for r in &rows {
                if r.iter().all(|&v| v == 0) {
                    continue;
                }
                let got = complete_labels(r, &t).unwrap().values;
                for (a, b) in got.iter().zip(naive_completion(r, &oracle)) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn completion_keeps_positives_in_range(
        rows in label_matrix(12, 8),
        y in prop::collection::vec(0u8..=1, 8),
    ) {
        let m = LabelMatrix::from_rows(&rows).unwrap();
        let t = build_cooccurrence(&m).unwrap();
        let mut y = y[..m.k()].to_vec();
        if y.iter().all(|&v| v == 0) {
            y[0] = 1;
        }
        let out = complete_labels(&y, &t).unwrap().values;
        for (j, v) in out.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(v));
            if y[j] == 1 {
                prop_assert_eq!(*v, 1.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn soft_completion_stays_in_range(
        rows in label_matrix(12, 6),
        w in prop::collection::vec(0.0f64..=1.0, 6),
    ) {
        let m = LabelMatrix::from_rows(&rows).unwrap();
        let t = build_cooccurrence(&m).unwrap();
        let w = &w[..m.k()];
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let out = complete_weighted(w, &t).unwrap().values;
        for (a, b) in out.iter().zip(w) {
            prop_assert!(*a >= *b - 1e-15 && *a <= 1.0);
        }
    }

    #[test]
    fn ap_matches_definition(total in 1usize..60, seed in any::<u64>()) {
        let mut rng = rng_for(seed, &[]);
        use rand::Rng;
        let positive: Vec<bool> = (0..total).map(|_| rng.random_bool(0.3)).collect();
        prop_assume!(positive.iter().any(|&p| p));
        let scores: Vec<f64> = (0..total).map(|_| rng.random_range(0..8) as f64).collect();
        let inst = ranking_for(&scores, &positive).unwrap();
        // precision at each positive, ties broken with negatives first
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then((positive[a] as u8).cmp(&(positive[b] as u8))));
        let mut hits = 0.0;
        let mut sum = 0.0;
        for (pos, &i) in order.iter().enumerate() {
            if positive[i] {
                hits += 1.0;
                sum += hits / (pos + 1) as f64;
            }
        }
        let reference = sum / hits;
        prop_assert!((average_precision(&inst).unwrap() - reference).abs() <= 1e-12);
    }

    #[test]
    fn ranks_are_valid(total in 1usize..40, ranks in prop::collection::btree_set(1usize..40, 0..10)) {
        let ranks: Vec<usize> = ranks.into_iter().filter(|&r| r <= total).collect();
        let inst = RankingInstance::new(total, ranks.clone()).unwrap();
        if let Some(ap) = average_precision(&inst) {
            prop_assert!(ap > 0.0 && ap <= 1.0);
        } else {
            prop_assert!(ranks.is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn map_is_invariant_to_monotone_transforms(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = rng_for(seed, &[1]);
        let (n, k) = (15, 4);
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| rng.random_bool(0.3) as u8).collect()).collect();
        let labels = LabelMatrix::from_rows(&rows).unwrap();
        prop_assume!(labels.positives() > 0);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let transformed: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| (3.0 * v).exp() + 7.0).collect()).collect();
        let a = mean_average_precision(&scores, &labels, None).unwrap().map;
        let b = mean_average_precision(&transformed, &labels, None).unwrap().map;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_itself(seed in any::<u64>(), n in 3usize..25, d in 1usize..5) {
        let mut rng = rng_for(seed, &[2]);
        let a: Vec<Vec<f64>> = (0..n).map(|_| glyphgen::util::normal_vec(&mut rng, d)).collect();
        let b: Vec<Vec<f64>> = (0..n + 2).map(|_| glyphgen::util::normal_vec(&mut rng, d).iter().map(|v| v * 1.5 + 0.3).collect()).collect();
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-5);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
    }

    #[test]
    fn gradient_penalty_is_nonnegative(seed in any::<u64>()) {
        let mut rng = rng_for(seed, &[3]);
        let w = Tensor::new(glyphgen::util::normal_vec(&mut rng, 8), &[4, 2]);
        let real = Tensor::new(glyphgen::util::normal_vec(&mut rng, 12), &[3, 2, 2, 1]);
        let fake = Tensor::new(glyphgen::util::normal_vec(&mut rng, 12), &[3, 2, 2, 1]);
        let critic = |x: &Tensor| Ok(x.reshape(&[3, 4]).matmul(&w).tanh().sum_rows());
        let p = gradient_penalty(&critic, &real, &fake, 10.0, &mut rng).unwrap();
        prop_assert!(p.item() >= 0.0);
    }

    #[test]
    fn reorder_is_a_permutation(seed in any::<u64>(), m in 1usize..12) {
        let mut rng = rng_for(seed, &[4]);
        let samples: Vec<Vec<f64>> = (0..20).map(|_| glyphgen::util::normal_vec(&mut rng, m)).collect();
        let c = CorrelationMatrix::from_samples((0..m).map(|i| i.to_string()).collect(), &samples).unwrap();
        let perm = bicluster_reorder(&c).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..m).collect::<Vec<_>>());
        let r = c.reordered(&perm).unwrap();
        let mut before = c.values.clone();
        let mut after = r.values.clone();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        prop_assert_eq!(before, after);
        for i in 0..m {
            prop_assert_eq!(r.get(i, i), 1.0);
            for j in 0..m {
                prop_assert_eq!(r.get(i, j), r.get(j, i));
            }
        }
    }

    #[test]
    fn schedule_is_monotone(len in 1usize..50, max_stage in 0usize..5, it in 0usize..400) {
        let g = GrowthConfig { stage_len: len, max_stage };
        let a = growth_schedule(it, &g);
        let b = growth_schedule(it + 1, &g);
        prop_assert!(a.stage <= b.stage && a.stage <= max_stage);
        prop_assert!((0.0..=1.0).contains(&a.alpha));
        if a.stage == b.stage {
            prop_assert!(a.alpha <= b.alpha);
        }
    }
}

#[test]
fn random_scores_match_expected_ap() {
    use rand::Rng;
    let n = 10usize;
    let expected: f64 = (1..=n).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64;
    let mut rng = rng_for(9, &[]);
    let trials = 10_000;
    let mut total = 0.0;
    for _ in 0..trials {
        let pos = rng.random_range(0..n);
        let rows: Vec<Vec<u8>> = (0..n).map(|i| vec![(i == pos) as u8]).collect();
        let scores: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        total += mean_average_precision(&scores, &LabelMatrix::from_rows(&rows).unwrap(), None).unwrap().map;
    }
    assert!((total / trials as f64 - expected).abs() < 0.01);
}

#[test]
fn inconsistent_references_come_from_other_fonts() {
    use rand::Rng;
    let mut rng = rng_for(5, &[]);
    let mut count = 0;
    for seed in 0..100u64 {
        let n_fonts = rng.random_range(2..30);
        let fakes: Vec<usize> = (0..100).map(|_| rng.random_range(0..n_fonts)).collect();
        let batch = make_style_pairs(&fakes, n_fonts, 4, seed).unwrap();
        for (p, &f) in batch.pairs.iter().zip(&fakes) {
            assert_eq!(p.font, f);
            assert_ne!(p.other_font, p.font);
            assert!(p.other_font < n_fonts);
            assert_eq!(p.consistent_chars.len(), 4);
            assert_eq!(p.inconsistent_chars.len(), 4);
            count += 1;
        }
    }
    assert_eq!(count, 10_000);
}

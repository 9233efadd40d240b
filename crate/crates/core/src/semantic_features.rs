//! The five semantic session features computed from the topic vectors of the
//! pages a session requested: total topics, unique topics, page similarity,
//! page variance, and its boolean variant.

use std::collections::BTreeSet;

use crate::topic_model::SparseTopicVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticFeatures {
    /// Number of topic entries summed over all mapped pages (TT).
    pub total_topics: usize,
    /// Size of the union of the pages' topic supports (UT).
    pub unique_topics: usize,
    /// UT / TT; absent when no page carried any topic.
    pub page_similarity: Option<f64>,
    /// Mean Euclidean distance of each page's topic vector from the mean vector (PV).
    pub page_variance: f64,
    /// PV after replacing every nonzero probability with 1 (BPV).
    pub boolean_page_variance: f64,
    /// Fraction of session requests that had a topic vector.
    pub coverage: f64,
}

/// Compute the semantic features of a session from the topic vectors of its
/// mapped requests. `total_requests` is the nominal session length, used only
/// for coverage; requests without a topic vector are excluded from every
/// other quantity rather than treated as zero vectors.
pub fn extract_semantic(
    vectors: &[SparseTopicVector],
    total_requests: usize,
) -> SemanticFeatures {
    let coverage = if total_requests == 0 {
        0.0
    } else {
        vectors.len() as f64 / total_requests as f64
    };
    if vectors.is_empty() {
        return SemanticFeatures {
            total_topics: 0,
            unique_topics: 0,
            page_similarity: None,
            page_variance: 0.0,
            boolean_page_variance: 0.0,
            coverage,
        };
    }

    let total_topics: usize = vectors.iter().map(|v| v.len()).sum();
    let support: BTreeSet<u32> = vectors.iter().flat_map(|v| v.support()).collect();
    let unique_topics = support.len();
    let page_similarity = if total_topics > 0 {
        Some(unique_topics as f64 / total_topics as f64)
    } else {
        None
    };

    SemanticFeatures {
        total_topics,
        unique_topics,
        page_similarity,
        page_variance: mean_distance(vectors, &support, false),
        boolean_page_variance: mean_distance(vectors, &support, true),
        coverage,
    }
}

/// Mean L2 distance from the centroid, evaluated on the union support only;
/// coordinates outside every support are zero in all vectors and cancel.
/// Sums are taken in sorted order so the result does not depend on the order
/// of the vectors, and identical vectors yield exactly zero.
fn mean_distance(vectors: &[SparseTopicVector], support: &BTreeSet<u32>, boolean: bool) -> f64 {
    let n = vectors.len() as f64;
    let dims: Vec<u32> = support.iter().copied().collect();
    let rows: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            dims.iter()
                .map(|&t| {
                    let p = v.get(t);
                    if boolean && p != 0.0 {
                        1.0
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect();
    if rows.iter().all(|r| r == &rows[0]) {
        return 0.0;
    }

    let mean: Vec<f64> = (0..dims.len())
        .map(|j| sorted_sum(rows.iter().map(|r| r[j])) / n)
        .collect();
    let distances = rows.iter().map(|row| {
        row.iter()
            .zip(&mean)
            .map(|(x, m)| (x - m).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    sorted_sum(distances) / n
}

fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut values: Vec<f64> = values.collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sparse(entries: &[(u32, f64)]) -> SparseTopicVector {
        let mut entries = entries.to_vec();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        SparseTopicVector { entries }
    }

    #[test]
    fn worked_example() {
        let a = sparse(&[(1, 0.5), (2, 0.5)]);
        let b = sparse(&[(3, 1.0)]);
        let f = extract_semantic(&[a.clone(), a, b], 3);
        assert_eq!(f.total_topics, 5);
        assert_eq!(f.unique_topics, 3);
        assert_eq!(f.page_similarity, Some(0.6));
        let pv = (2.0 * (1.0f64 / 6.0).sqrt() + (2.0f64 / 3.0).sqrt()) / 3.0;
        let bpv = (2.0 * (1.0f64 / 3.0).sqrt() + (4.0f64 / 3.0).sqrt()) / 3.0;
        assert!((f.page_variance - pv).abs() < 1e-12);
        assert!((f.boolean_page_variance - bpv).abs() < 1e-12);
        assert!((pv - 0.5443).abs() < 1e-4);
        assert!((bpv - 0.7698).abs() < 1e-4);
        assert_eq!(f.coverage, 1.0);
    }

    #[test]
    fn identical_pages_have_zero_variance() {
        let p = sparse(&[(4, 0.7), (9, 0.2)]);
        let f = extract_semantic(&[p.clone(), p.clone(), p], 4);
        assert_eq!(f.total_topics, 6);
        assert_eq!(f.unique_topics, 2);
        assert_eq!(f.page_similarity, Some(1.0 / 3.0));
        assert_eq!(f.page_variance, 0.0);
        assert_eq!(f.boolean_page_variance, 0.0);
        assert_eq!(f.coverage, 0.75);
    }

    #[test]
    fn single_page_single_topic() {
        let f = extract_semantic(&[sparse(&[(0, 1.0)])], 1);
        assert_eq!(f.total_topics, 1);
        assert_eq!(f.unique_topics, 1);
        assert_eq!(f.page_similarity, Some(1.0));
        assert_eq!(f.page_variance, 0.0);
        assert_eq!(f.boolean_page_variance, 0.0);
    }

    #[test]
    fn empty_input() {
        let f = extract_semantic(&[], 5);
        assert_eq!(f.total_topics, 0);
        assert_eq!(f.unique_topics, 0);
        assert_eq!(f.page_similarity, None);
        assert_eq!(f.page_variance, 0.0);
        assert_eq!(f.boolean_page_variance, 0.0);
        assert_eq!(f.coverage, 0.0);
        assert_eq!(extract_semantic(&[], 0).coverage, 0.0);
    }

    #[test]
    fn duplication_doubles_tt_preserves_variance() {
        let vs = vec![
            sparse(&[(0, 0.5), (3, 0.3)]),
            sparse(&[(1, 0.9)]),
            sparse(&[(0, 0.2), (1, 0.2), (2, 0.2)]),
        ];
        let mut doubled = vs.clone();
        doubled.extend(vs.iter().cloned());
        let f1 = extract_semantic(&vs, vs.len());
        let f2 = extract_semantic(&doubled, doubled.len());
        assert_eq!(f2.total_topics, 2 * f1.total_topics);
        assert_eq!(f2.unique_topics, f1.unique_topics);
        assert!((f2.page_similarity.unwrap() - f1.page_similarity.unwrap() / 2.0).abs() < 1e-12);
        assert!((f2.page_variance - f1.page_variance).abs() < 1e-12);
        assert!((f2.boolean_page_variance - f1.boolean_page_variance).abs() < 1e-12);
    }

    /// Direct reimplementation on dense k-length vectors, for cross-checking.
    fn dense_oracle(k: usize, vectors: &[SparseTopicVector]) -> (usize, usize, f64, f64) {
        let dense: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| {
                let mut row = vec![0.0; k];
                for &(t, p) in &v.entries {
                    row[t as usize] = p;
                }
                row
            })
            .collect();
        let tt = dense.iter().flatten().filter(|&&p| p != 0.0).count();
        let ut = (0..k)
            .filter(|&j| dense.iter().any(|row| row[j] != 0.0))
            .count();
        let pv = dense_mean_distance(&dense);
        let boolean: Vec<Vec<f64>> = dense
            .iter()
            .map(|row| row.iter().map(|&p| if p != 0.0 { 1.0 } else { 0.0 }).collect())
            .collect();
        (tt, ut, pv, dense_mean_distance(&boolean))
    }

    fn dense_mean_distance(rows: &[Vec<f64>]) -> f64 {
        let n = rows.len() as f64;
        let k = rows[0].len();
        let mean: Vec<f64> = (0..k)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<SparseTopicVector>)> {
        (2usize..=20).prop_flat_map(|k| {
            let vector = proptest::collection::vec((0..k as u32, 0.05f64..1.0), 0..=k.min(10))
                .prop_map(|mut entries| {
                    entries.sort_by_key(|e| e.0);
                    entries.dedup_by_key(|e| e.0);
                    let sum: f64 = entries.iter().map(|e| e.1).sum();
                    if sum > 1.0 {
                        for e in &mut entries {
                            e.1 /= sum;
                        }
                    }
                    sparse(&entries)
                });
            (Just(k), proptest::collection::vec(vector, 1..=10))
        })
    }

    proptest! {
        #[test]
        fn matches_dense_oracle((k, vectors) in instance()) {
            let f = extract_semantic(&vectors, vectors.len());
            let (tt, ut, pv, bpv) = dense_oracle(k, &vectors);
            prop_assert_eq!(f.total_topics, tt);
            prop_assert_eq!(f.unique_topics, ut);
            prop_assert!((f.page_variance - pv).abs() < 1e-9);
            prop_assert!((f.boolean_page_variance - bpv).abs() < 1e-9);
            if tt > 0 {
                prop_assert!((f.page_similarity.unwrap() - ut as f64 / tt as f64).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_invariant((_k, mut vectors) in instance()) {
            let forward = extract_semantic(&vectors, vectors.len());
            vectors.reverse();
            let backward = extract_semantic(&vectors, vectors.len());
            prop_assert_eq!(forward, backward);
        }
    }
}

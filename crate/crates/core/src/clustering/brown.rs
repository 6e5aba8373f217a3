//! Brown clustering by generalized exchange: the k most frequent tokens seed
//! singleton clusters, remaining tokens are inserted in frequency order, and
//! each insertion is followed by the merge that minimizes the loss of average
//! mutual information of adjacent-cluster bigrams.

use super::{Clustering, Flavor};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq)]
pub struct BrownMerge {
    /// Cluster list indices merged (second folded into first).
    pub merged: (usize, usize),
    /// AMI of the partition after the chosen merge.
    pub ami_after: f64,
    /// Best AMI among the rejected alternatives; -inf when none existed.
    pub best_alternative: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BrownLog {
    pub merges: Vec<BrownMerge>,
}

/// Average mutual information of cluster-level adjacency:
/// `sum over (c1, c2) of p(c1,c2) * ln( p(c1,c2) / (pl(c1) * pr(c2)) )`.
/// Bigrams with an unclustered endpoint (`cluster_of` returns None) are
/// excluded; probabilities are normalized over the included mass. Counts are
/// accumulated in sorted order so the value is deterministic.
pub(crate) fn partition_ami(
    bigrams: &[((usize, usize), u64)],
    cluster_of: impl Fn(usize) -> Option<usize>,
) -> f64 {
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut total = 0u64;
    for &((a, b), count) in bigrams {
        if let (Some(ca), Some(cb)) = (cluster_of(a), cluster_of(b)) {
            *joint.entry((ca, cb)).or_insert(0.0) += count as f64;
            total += count;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let mut left: BTreeMap<usize, f64> = BTreeMap::new();
    let mut right: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(c1, c2), &n) in &joint {
        *left.entry(c1).or_insert(0.0) += n;
        *right.entry(c2).or_insert(0.0) += n;
    }
    let t = total as f64;
    let mut ami = 0.0;
    for (&(c1, c2), &n) in &joint {
        let p = n / t;
        let pl = left[&c1] / t;
        let pr = right[&c2] / t;
        ami += p * (p / (pl * pr)).ln();
    }
    ami
}

/// Clusters the streams' tokens into `k` groups under `Flavor::Brown`.
pub fn brown_cluster(streams: &[Vec<String>], k: u32) -> Result<(Clustering, BrownLog)> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for stream in streams {
        for token in stream {
            let e = counts.entry(token).or_insert(0);
            if *e == 0 {
                first_seen.push(token);
            }
            *e += 1;
        }
    }
    let kk = k as usize;
    if first_seen.len() < kk {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} distinct tokens",
            first_seen.len()
        )));
    }
    // Insertion order: frequency descending, token ascending on ties.
    let mut order: Vec<&str> = first_seen.clone();
    order.sort_by(|a, b| counts[b].cmp(&counts[a]).then(a.cmp(b)));
    let token_id: HashMap<&str, usize> =
        order.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    // Adjacent bigrams never cross document boundaries; sorted for
    // deterministic summation.
    let mut bigram_counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for stream in streams {
        for pair in stream.windows(2) {
            let a = token_id[pair[0].as_str()];
            let b = token_id[pair[1].as_str()];
            *bigram_counts.entry((a, b)).or_insert(0) += 1;
        }
    }
    let bigrams: Vec<((usize, usize), u64)> =
        bigram_counts.iter().map(|(&p, &c)| (p, c)).collect();

    // clusters[i] = member token ids; cluster_of[token] = index into clusters,
    // usize::MAX until the token is inserted.
    let mut clusters: Vec<Vec<usize>> = (0..kk).map(|i| vec![i]).collect();
    let mut cluster_of: Vec<usize> =
        (0..order.len()).map(|i| if i < kk { i } else { usize::MAX }).collect();
    let mut log = BrownLog::default();

    for next in kk..order.len() {
        clusters.push(vec![next]);
        cluster_of[next] = clusters.len() - 1;

        let mut best: Option<((usize, usize), f64)> = None;
        let mut second = f64::NEG_INFINITY;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let ami = partition_ami(&bigrams, |t| {
                    let c = cluster_of[t];
                    if c == usize::MAX {
                        None
                    } else if c == j {
                        Some(i)
                    } else {
                        Some(c)
                    }
                });
                match best {
                    None => best = Some(((i, j), ami)),
                    Some((_, best_ami)) => {
                        if ami > best_ami {
                            second = best_ami;
                            best = Some(((i, j), ami));
                        } else if ami > second {
                            second = ami;
                        }
                    }
                }
            }
        }
        let ((i, j), ami_after) = best.expect("k + 1 clusters always offer a merge");
        debug_assert!(ami_after >= second);
        log.merges.push(BrownMerge { merged: (i, j), ami_after, best_alternative: second });

        let members = clusters.remove(j);
        for &t in &members {
            cluster_of[t] = i;
        }
        clusters[i].extend(members);
        // Indices above j shifted down by the removal.
        for c in cluster_of.iter_mut() {
            if *c != usize::MAX && *c > j {
                *c -= 1;
            }
        }
    }

    let mut assignment = BTreeMap::new();
    for (cluster_id, members) in clusters.iter().enumerate() {
        for &t in members {
            assignment.insert(order[t].to_string(), cluster_id as u32);
        }
    }
    let clustering = Clustering::from_assignment(Flavor::Brown, k, assignment)?;
    Ok((clustering, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn interchangeable_tokens_share_a_cluster() {
        let s = streams(&["A x B A x B A x B"]);
        let (clustering, log) = brown_cluster(&s, 2).unwrap();
        assert_eq!(clustering.cluster("A"), clustering.cluster("B"));
        assert_ne!(clustering.cluster("A"), clustering.cluster("x"));
        // One insertion happened, so exactly one merge.
        assert_eq!(log.merges.len(), 1);
        assert!(log.merges[0].ami_after >= log.merges[0].best_alternative);
    }

    #[test]
    fn merge_is_locally_optimal() {
        let s = streams(&[
            "red apple red apple green pear green pear",
            "red cherry green grape red cherry green grape",
        ]);
        let (_, log) = brown_cluster(&s, 3).unwrap();
        assert!(!log.merges.is_empty());
        for merge in &log.merges {
            assert!(
                merge.ami_after >= merge.best_alternative,
                "chosen merge {:?} is worse than an alternative",
                merge.merged
            );
        }
    }

    #[test]
    fn zero_bigram_ties_merge_lowest_indices() {
        // Single-token documents produce no bigrams; every merge has AMI 0 and
        // the (0, 1) pair of most frequent tokens wins the tie.
        let s = streams(&["a", "a", "b", "b", "c"]);
        let (clustering, log) = brown_cluster(&s, 2).unwrap();
        assert_eq!(log.merges.len(), 1);
        assert_eq!(log.merges[0].merged, (0, 1));
        assert_eq!(clustering.cluster("a"), clustering.cluster("b"));
        assert_ne!(clustering.cluster("a"), clustering.cluster("c"));
    }

    #[test]
    fn k_larger_than_vocabulary_is_error() {
        let s = streams(&["a b"]);
        assert!(brown_cluster(&s, 3).is_err());
        assert!(brown_cluster(&s, 0).is_err());
    }

    #[test]
    fn k_equals_vocabulary_is_identity() {
        let s = streams(&["a b c a b c"]);
        let (clustering, log) = brown_cluster(&s, 3).unwrap();
        assert!(log.merges.is_empty());
        let ids: std::collections::HashSet<u32> = clustering.iter().map(|(_, c)| c).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn ami_matches_hand_computation() {
        // Stream `A x B A x B A x B`: bigrams Ax x3, xB x3, BA x2 (total 8).
        // Partition {A,B | x}: p(c0,c1) = 3/8, p(c1,c0) = 3/8, p(c0,c0) = 2/8.
        let s = streams(&["A x B A x B A x B"]);
        let mut ids: HashMap<&str, usize> = HashMap::new();
        for (i, t) in ["A", "x", "B"].iter().enumerate() {
            ids.insert(t, i);
        }
        let mut bigrams: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for pair in s[0].windows(2) {
            *bigrams.entry((ids[pair[0].as_str()], ids[pair[1].as_str()])).or_insert(0) += 1;
        }
        let bigrams: Vec<_> = bigrams.into_iter().collect();
        let ami = partition_ami(&bigrams, |t| Some(if t == 1 { 1 } else { 0 }));
        let expected = 0.375 * (1.6f64).ln() + 0.375 * (1.6f64).ln() + 0.25 * (0.64f64).ln();
        assert!((ami - expected).abs() < 1e-12, "{ami} vs {expected}");
    }

    #[test]
    fn uninserted_tokens_are_excluded_from_ami() {
        let bigrams = vec![((0usize, 1usize), 4u64), ((1, 2), 4)];
        // Token 2 unclustered: only the (0, 1) bigram counts, and a single
        // cluster pair has AMI 0 by definition.
        let ami = partition_ami(&bigrams, |t| if t == 2 { None } else { Some(t) });
        let full = partition_ami(&bigrams, Some);
        assert_eq!(ami, 0.0);
        assert!(full > 0.0);
    }
}

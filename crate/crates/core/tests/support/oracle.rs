//! Brute-force reference implementations used only by tests.
//!
//! Nothing here calls into the selectors or the KNN code under test: distances
//! are recomputed coordinate by coordinate, neighbors come from a full sort and
//! the vote is counted with plain arrays.

#![allow(dead_code)]

use flowknn::{Dataset, FeatureVector, LabelId};

pub fn manhattan(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let xs = [
        a.icmp_pct,
        a.tcp_pct,
        a.udp_pct,
        a.ip_diversity,
        a.packet_count as f64,
        a.mean_packet_size,
    ];
    let ys = [
        b.icmp_pct,
        b.tcp_pct,
        b.udp_pct,
        b.ip_diversity,
        b.packet_count as f64,
        b.mean_packet_size,
    ];
    let mut total = 0.0;
    for i in 0..6 {
        let d = xs[i] - ys[i];
        total += if d < 0.0 { -d } else { d };
    }
    total
}

/// The `min(k, n)` smallest values, ascending, by full sort.
pub fn k_smallest(values: &[f64], k: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.truncate(k);
    v
}

/// True when the k-th and (k+1)-th smallest distances differ, so every
/// correct selector keeps the same set of samples.
pub fn tie_free(values: &[f64], k: usize) -> bool {
    if k >= values.len() {
        return true;
    }
    let v = k_smallest(values, k + 1);
    v[k - 1] < v[k]
}

pub struct OracleVote {
    pub label: LabelId,
    pub tie_free: bool,
}

/// Every training sample as (distance, label), nearest first, ties in
/// training order.
pub fn ranked(train: &Dataset, query: &FeatureVector) -> Vec<(f64, LabelId)> {
    let mut scored: Vec<(f64, usize)> = train
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (manhattan(&s.features, query), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .map(|(d, i)| (d, train.samples()[i].label))
        .collect()
}

/// Vote among the first `k` ranked samples: count, then distance sum, then
/// ordinal.
pub fn vote(ranked: &[(f64, LabelId)], k: usize, n_labels: usize) -> LabelId {
    let mut counts = vec![0usize; n_labels];
    let mut dists: Vec<Vec<f64>> = vec![Vec::new(); n_labels];
    for &(d, l) in ranked.iter().take(k) {
        counts[l.index()] += 1;
        dists[l.index()].push(d);
    }
    let sums: Vec<f64> = dists
        .iter_mut()
        .map(|v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.iter().sum()
        })
        .collect();
    let mut best = None::<usize>;
    for l in 0..n_labels {
        if counts[l] == 0 {
            continue;
        }
        best = match best {
            None => Some(l),
            Some(b) if counts[l] > counts[b] || (counts[l] == counts[b] && sums[l] < sums[b]) => {
                Some(l)
            }
            keep => keep,
        };
    }
    LabelId(best.unwrap() as u32)
}

/// Full-sort KNN with count, then distance sum, then ordinal tie-breaking.
pub fn classify(train: &Dataset, query: &FeatureVector, k: usize) -> OracleVote {
    let r = ranked(train, query);
    let all: Vec<f64> = r.iter().map(|p| p.0).collect();
    OracleVote {
        label: vote(&r, k, train.labels().len()),
        tie_free: tie_free(&all, k),
    }
}

/// Accuracy of the oracle classifier on `test`.
pub fn accuracy(train: &Dataset, test: &Dataset, k: usize) -> f64 {
    let correct = test
        .samples()
        .iter()
        .filter(|s| classify(train, &s.features, k).label == s.label)
        .count();
    correct as f64 / test.len() as f64
}

/// Mean fold accuracy per k for a given fold assignment.
pub fn cv_scores(data: &Dataset, fold_of: &[usize], folds: usize, ks: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0; ks.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == f).collect();
        let train_set = data.subset(&train);
        let mut correct = vec![0usize; ks.len()];
        for &q in &test {
            let query = &data.samples()[q];
            let r = ranked(&train_set, &query.features);
            for (j, &k) in ks.iter().enumerate() {
                if vote(&r, k, data.labels().len()) == query.label {
                    correct[j] += 1;
                }
            }
        }
        for j in 0..ks.len() {
            sums[j] += correct[j] as f64 / test.len() as f64;
        }
    }
    sums.iter().map(|s| s / folds as f64).collect()
}

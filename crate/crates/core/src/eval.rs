//! Cross-validated k tuning, held-out evaluation and the selector benchmark.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{kfold_assign, Dataset, LabelId};
use crate::error::{Error, Result};
use crate::flowfeat::FeatureVector;
use crate::knn::{self, classify_candidates, Distance, KnnConfig};
use crate::selectors::{self, Candidate, ExecMode, SelectionStats, SelectorKind};

/// Default k candidates for tuning.
pub const DEFAULT_K_CANDIDATES: [usize; 6] = [1, 3, 5, 7, 9, 11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub folds: usize,
    pub seed: u64,
    /// Mean fold accuracy per evaluated k.
    pub scores: BTreeMap<usize, f64>,
    pub best_k: usize,
    /// Candidates larger than the smallest training fold.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<usize>,
    pub stratified: bool,
}

/// Picks the k with the highest score, preferring the smaller k on ties.
pub fn best_k(scores: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&k, &s) in scores {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Predicts every query against `train`, in parallel over queries.
pub fn predict(
    train: &Dataset,
    queries: &[FeatureVector],
    config: &KnnConfig,
) -> Result<Vec<LabelId>> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    queries
        .par_iter()
        .map(|q| knn::classify(train, q, config).map(|c| c.label))
        .collect()
}

/// Mean per-fold accuracy of the K-Min classifier for each candidate k.
pub fn tune_k(
    data: &Dataset,
    k_candidates: &[usize],
    folds: usize,
    seed: u64,
) -> Result<TuneResult> {
    if k_candidates.is_empty() {
        return Err(Error::invalid("no k candidates given"));
    }
    if let Some(&k) = k_candidates.iter().find(|&&k| k < 1) {
        return Err(Error::invalid(format!("k candidate {k} is below 1")));
    }
    let assignment = kfold_assign(data, folds, seed)?;
    let parts: Vec<(Vec<usize>, Vec<usize>)> =
        (0..folds).map(|f| assignment.partition(f)).collect();
    let smallest_train = parts.iter().map(|(tr, _)| tr.len()).min().unwrap_or(0);

    let mut ks: Vec<usize> = k_candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let (ks, skipped): (Vec<usize>, Vec<usize>) =
        ks.into_iter().partition(|&k| k <= smallest_train);
    for k in &skipped {
        log::warn!("skipping k={k}: larger than the smallest training fold ({smallest_train})");
    }
    if ks.is_empty() {
        return Err(Error::invalid(
            "every k candidate exceeds the training fold size",
        ));
    }

    let mut sums = vec![0.0; ks.len()];
    for (train_idx, test_idx) in &parts {
        let train = data.subset(train_idx);
        let correct = test_idx
            .par_iter()
            .map(|&qi| -> Result<Vec<u64>> {
                let query = &data.samples()[qi];
                let cands = knn::candidates(&train, &query.features);
                ks.iter()
                    .map(|&k| {
                        let c =
                            classify_candidates(&cands, &KnnConfig::new(k, SelectorKind::KMin)?)?;
                        Ok(u64::from(c.label == query.label))
                    })
                    .collect()
            })
            .try_reduce(
                || vec![0; ks.len()],
                |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            )?;
        for (sum, c) in sums.iter_mut().zip(correct) {
            *sum += c as f64 / test_idx.len() as f64;
        }
    }
    let scores: BTreeMap<usize, f64> = ks
        .iter()
        .zip(&sums)
        .map(|(&k, &s)| (k, s / folds as f64))
        .collect();
    Ok(TuneResult {
        folds,
        seed,
        best_k: best_k(&scores).expect("non-empty"),
        scores,
        skipped,
        stratified: assignment.stratified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub k: usize,
    pub selector: SelectorKind,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub labels: Vec<String>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Auxiliary; accuracy is the gating metric.
    pub macro_f1: f64,
    #[serde(skip)]
    pub predictions: Vec<LabelId>,
}

pub fn evaluate(train: &Dataset, test: &Dataset, config: &KnnConfig) -> Result<Evaluation> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("train and test sets must be non-empty"));
    }
    if train.labels() != test.labels() {
        return Err(Error::invalid("train and test label tables differ"));
    }
    let queries: Vec<FeatureVector> = test.samples().iter().map(|s| s.features).collect();
    let predictions = predict(train, &queries, config)?;
    let n_labels = train.labels().len();
    let mut confusion = vec![vec![0u64; n_labels]; n_labels];
    for (s, p) in test.samples().iter().zip(&predictions) {
        confusion[s.label.index()][p.index()] += 1;
    }
    let correct = (0..n_labels)
        .map(|i| confusion[i][i] as usize)
        .sum::<usize>();
    Ok(Evaluation {
        k: config.k,
        selector: config.selector,
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        labels: train
            .labels()
            .labels()
            .iter()
            .map(|l| l.name.clone())
            .collect(),
        macro_f1: macro_f1(&confusion),
        confusion,
        predictions,
    })
}

/// Mean F1 over classes that occur in the test set or the predictions.
fn macro_f1(confusion: &[Vec<u64>]) -> f64 {
    let n = confusion.len();
    let mut f1s = Vec::new();
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let actual: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        let denom = (actual + predicted) as f64;
        f1s.push(2.0 * tp / denom);
    }
    if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

/// Uniform random distances in [0, 1) with labels in 0..5, from `seed`.
pub fn random_input(n: usize, seed: u64) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Candidate {
            distance: Distance::new(rng.random::<f64>()).expect("non-negative"),
            label: LabelId(rng.random_range(0..5)),
        })
        .collect()
}

/// Input seed for repetition `rep` at size `n`; shared by every strategy and k.
pub fn bench_input_seed(seed: u64, n: usize, rep: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (n as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (rep as u64).wrapping_mul(0x94d0_49bb_1331_11eb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub strategies: Vec<SelectorKind>,
    pub mode: ExecMode,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1000],
            ks: vec![5],
            reps: 5,
            seed: 0,
            strategies: SelectorKind::ALL.to_vec(),
            mode: ExecMode::Sequential,
        }
    }
}

/// Parses a comma-separated list of strategy identifiers.
pub fn parse_strategies(list: &str) -> Result<Vec<SelectorKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: u64,
    pub median: u64,
    pub max: u64,
}

impl Aggregate {
    /// Order statistics; the median is the lower middle value, so it is
    /// always one of the recorded runs.
    pub fn of(values: &[u64]) -> Aggregate {
        let mut v = values.to_vec();
        v.sort_unstable();
        Aggregate {
            min: v[0],
            median: v[(v.len() - 1) / 2],
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub strategy: SelectorKind,
    pub n: usize,
    pub k: usize,
    pub comparisons: Aggregate,
    pub element_reads: Aggregate,
    pub element_writes: Aggregate,
    pub wall_nanos: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLatency {
    pub cpu_ms: f64,
    pub fpga_ms: f64,
}

/// Published per-query latencies at a 50% training split, kept for
/// comparison only: the hardware numbers are not reproducible here, only
/// their ordering.
pub fn reference_latencies() -> BTreeMap<SelectorKind, ReferenceLatency> {
    BTreeMap::from([
        (
            SelectorKind::OddEven,
            ReferenceLatency {
                cpu_ms: 1_927_200.0,
                fpga_ms: 297_615.0,
            },
        ),
        (
            SelectorKind::Enumeration,
            ReferenceLatency {
                cpu_ms: 1_209_000.0,
                fpga_ms: 281_750.0,
            },
        ),
        (
            SelectorKind::Merge,
            ReferenceLatency {
                cpu_ms: 150_000.0,
                fpga_ms: 6_024.0,
            },
        ),
        (
            SelectorKind::Bubble,
            ReferenceLatency {
                cpu_ms: 34_811.0,
                fpga_ms: 13.041,
            },
        ),
        (
            SelectorKind::KMin,
            ReferenceLatency {
                cpu_ms: 32_519.0,
                fpga_ms: 3.913,
            },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub seed: u64,
    pub reps: usize,
    pub host: String,
    /// Whether the first repetition was dropped from the aggregates.
    pub warmup_discarded: bool,
    pub reference_latency_ms: BTreeMap<SelectorKind, ReferenceLatency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub meta: BenchMeta,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, strategy: SelectorKind, n: usize, k: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.n == n && c.k == k)
    }
}

pub fn host_description() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, available_parallelism={threads}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Runs every (strategy, n, k) cell `reps` times on seeded random inputs.
///
/// Cells run one at a time so wall-clock numbers are not co-scheduled. When
/// `reps >= 3` the first repetition is a warm-up and is left out of the
/// aggregates.
pub fn bench_selectors(config: &BenchConfig) -> Result<BenchReport> {
    if config.reps < 1 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if config.sizes.is_empty() || config.ks.is_empty() || config.strategies.is_empty() {
        return Err(Error::invalid("sizes, ks and strategies must be non-empty"));
    }
    if config.sizes.contains(&0) {
        return Err(Error::invalid("sizes must be positive"));
    }
    if config.ks.contains(&0) {
        return Err(Error::invalid("ks must be positive"));
    }
    let discard = usize::from(config.reps >= 3);
    let mut cells = Vec::new();
    for &n in &config.sizes {
        let inputs: Vec<Vec<Candidate>> = (0..config.reps)
            .map(|r| random_input(n, bench_input_seed(config.seed, n, r)))
            .collect();
        for &strategy in &config.strategies {
            for &k in &config.ks {
                let started = Instant::now();
                let runs: Vec<SelectionStats> = inputs
                    .iter()
                    .map(|input| selectors::select(strategy, input, k, config.mode).map(|(_, s)| s))
                    .collect::<Result<_>>()?;
                log::info!(
                    "bench {strategy} n={n} k={k}: {} reps in {:.3}s",
                    config.reps,
                    started.elapsed().as_secs_f64()
                );
                let kept = &runs[discard..];
                let agg = |f: fn(&SelectionStats) -> u64| {
                    Aggregate::of(&kept.iter().map(f).collect::<Vec<_>>())
                };
                cells.push(BenchCell {
                    strategy,
                    n,
                    k,
                    comparisons: agg(|s| s.comparisons),
                    element_reads: agg(|s| s.element_reads),
                    element_writes: agg(|s| s.element_writes),
                    wall_nanos: agg(|s| s.wall_nanos),
                });
            }
        }
    }
    Ok(BenchReport {
        meta: BenchMeta {
            seed: config.seed,
            reps: config.reps,
            host: host_description(),
            warmup_discarded: discard == 1,
            reference_latency_ms: reference_latencies(),
        },
        cells,
    })
}

//! Instrumented k-smallest selection strategies.
//!
//! Every strategy returns the `min(k, n)` smallest distances (with their
//! labels) and a [`SelectionStats`] with exact operation counts. The counting
//! rules are shared so the strategies can be compared directly:
//!
//! * a *comparison* is one order test between two distance values;
//! * an *element read* is one load of a distance or a label from a working
//!   array (the k slots for K-Min, the sort buffers for the others);
//! * an *element write* is one store of a distance or a label into a working
//!   array. Moving a pair therefore costs two writes, a swap four.
//!
//! Copying the input into the working arrays and reading the answer back out
//! are not counted.
//!
//! Equal distances: merge and enumeration are stable, bubble and odd-even
//! only swap on strict inequality, and K-Min only replaces on strict
//! inequality so earlier arrivals win ties.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelId;
use crate::error::{Error, Result};
use crate::knn::Distance;

/// Pairs per phase below which the parallel mode stays on the calling thread.
const PAR_MIN_PAIRS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    #[serde(rename = "kmin")]
    KMin,
    Bubble,
    Merge,
    #[serde(rename = "oddeven")]
    OddEven,
    Enumeration,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 5] = [
        SelectorKind::KMin,
        SelectorKind::Bubble,
        SelectorKind::Merge,
        SelectorKind::OddEven,
        SelectorKind::Enumeration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectorKind::KMin => "kmin",
            SelectorKind::Bubble => "bubble",
            SelectorKind::Merge => "merge",
            SelectorKind::OddEven => "oddeven",
            SelectorKind::Enumeration => "enumeration",
        }
    }

    /// Strategies whose cost grows with k instead of sorting everything.
    pub fn is_partial(self) -> bool {
        matches!(self, SelectorKind::KMin | SelectorKind::Bubble)
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown selector {s:?}; valid identifiers: kmin, bubble, merge, oddeven, enumeration"
                ))
            })
    }
}

/// A (distance, label) pair, used both as selector input and output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub distance: Distance,
    pub label: LabelId,
}

pub type Candidate = Neighbor;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    entries: Vec<Neighbor>,
    k: usize,
}

impl NeighborSet {
    pub fn new(entries: Vec<Neighbor>, k: usize) -> Self {
        debug_assert!(entries.len() <= k);
        NeighborSet { entries, k }
    }

    /// Entries in the order the selector left them (K-Min slots are unordered).
    pub fn entries(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The distance multiset in ascending order.
    pub fn sorted_distances(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.entries.iter().map(|e| e.distance.value()).collect();
        d.sort_by(f64::total_cmp);
        d
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub comparisons: u64,
    pub element_reads: u64,
    pub element_writes: u64,
    /// Zero unless the run was timed.
    pub wall_nanos: u64,
}

impl SelectionStats {
    fn merge(self, other: SelectionStats) -> SelectionStats {
        SelectionStats {
            comparisons: self.comparisons + other.comparisons,
            element_reads: self.element_reads + other.element_reads,
            element_writes: self.element_writes + other.element_writes,
            wall_nanos: self.wall_nanos + other.wall_nanos,
        }
    }

    /// Counters only; `wall_nanos` cleared.
    pub fn counters(self) -> SelectionStats {
        SelectionStats {
            wall_nanos: 0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecMode {
    #[default]
    Sequential,
    /// Data-parallel phases (odd-even), bubbles (bubble) and ranks
    /// (enumeration). Output and counters are identical to sequential mode.
    /// K-Min and merge always run sequentially.
    Parallel,
}

/// Runs `kind` over `input`, timing the call.
pub fn select(
    kind: SelectorKind,
    input: &[Candidate],
    k: usize,
    mode: ExecMode,
) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    let start = Instant::now();
    let (set, mut stats) = match kind {
        SelectorKind::KMin => kmin(input, k),
        SelectorKind::Bubble => bubble(input, k, mode),
        SelectorKind::Merge => merge(input, k),
        SelectorKind::OddEven => oddeven(input, k, mode),
        SelectorKind::Enumeration => enumeration(input, k, mode),
    };
    stats.wall_nanos = start.elapsed().as_nanos().max(1) as u64;
    Ok((set, stats))
}

pub fn kmin_select(input: &[Candidate], k: usize) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    Ok(kmin(input, k))
}

pub fn bubble_select(
    input: &[Candidate],
    k: usize,
    mode: ExecMode,
) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    Ok(bubble(input, k, mode))
}

pub fn merge_select(input: &[Candidate], k: usize) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    Ok(merge(input, k))
}

pub fn oddeven_select(
    input: &[Candidate],
    k: usize,
    mode: ExecMode,
) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    Ok(oddeven(input, k, mode))
}

pub fn enumeration_select(
    input: &[Candidate],
    k: usize,
    mode: ExecMode,
) -> Result<(NeighborSet, SelectionStats)> {
    validate(input, k)?;
    Ok(enumeration(input, k, mode))
}

fn validate(input: &[Candidate], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if input.is_empty() {
        return Err(Error::invalid("selector input is empty"));
    }
    if let Some(i) = input.iter().position(|c| !c.distance.is_finite()) {
        return Err(Error::invalid(format!(
            "selector input {i} has non-finite distance"
        )));
    }
    Ok(())
}

/// Bubble comparisons: `sum_{i < min(k,n)} (n - 1 - i)`.
pub fn bubble_comparisons(n: usize, k: usize) -> u64 {
    let passes = k.min(n) as u64;
    let n = n as u64;
    // passes * (n - 1) - passes * (passes - 1) / 2
    passes * (n - 1) - passes * passes.saturating_sub(1) / 2
}

/// Odd-even comparisons over `n` phases: `ceil(n/2)` even phases with
/// `floor(n/2)` pairs and `floor(n/2)` odd phases with `floor((n-1)/2)` pairs.
pub fn oddeven_comparisons(n: usize) -> u64 {
    let n = n as u64;
    n.div_ceil(2) * (n / 2) + (n / 2) * (n.saturating_sub(1) / 2)
}

/// Enumeration comparisons: `n (n - 1)`.
pub fn enumeration_comparisons(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1)
}

struct Buffers {
    dist: Vec<f64>,
    label: Vec<LabelId>,
}

impl Buffers {
    fn from_input(input: &[Candidate]) -> Self {
        Buffers {
            dist: input.iter().map(|c| c.distance.value()).collect(),
            label: input.iter().map(|c| c.label).collect(),
        }
    }

    fn head(&self, k: usize) -> Vec<Neighbor> {
        self.dist
            .iter()
            .zip(&self.label)
            .take(k)
            .map(|(&d, &label)| Neighbor {
                distance: Distance::from_raw(d),
                label,
            })
            .collect()
    }
}

fn kmin(input: &[Candidate], k: usize) -> (NeighborSet, SelectionStats) {
    let mut st = SelectionStats::default();
    let mut dist = vec![f64::INFINITY; k];
    let mut label = vec![LabelId(u32::MAX); k];
    // All slots start equal, so slot 0 is a valid maximum.
    let mut max = 0usize;
    for c in input {
        let d = c.distance.value();
        st.element_reads += 1;
        st.comparisons += 1;
        if d < dist[max] {
            dist[max] = d;
            label[max] = c.label;
            st.element_writes += 2;
            // Rescan for the new maximum slot.
            st.element_reads += 1;
            let mut best = 0;
            let mut best_d = dist[0];
            for (j, &dj) in dist.iter().enumerate().skip(1) {
                st.element_reads += 1;
                st.comparisons += 1;
                if dj > best_d {
                    best = j;
                    best_d = dj;
                }
            }
            max = best;
        }
    }
    let entries = dist
        .into_iter()
        .zip(label)
        .filter(|(d, _)| d.is_finite())
        .map(|(d, label)| Neighbor {
            distance: Distance::from_raw(d),
            label,
        })
        .collect();
    (NeighborSet::new(entries, k), st)
}

/// One compare-exchange on a two-element window; swaps when the left
/// distance is strictly larger.
fn exchange(d: &mut [f64], l: &mut [LabelId]) -> SelectionStats {
    let mut st = SelectionStats {
        comparisons: 1,
        element_reads: 2,
        ..Default::default()
    };
    if d[0] > d[1] {
        d.swap(0, 1);
        l.swap(0, 1);
        st.element_reads += 2;
        st.element_writes += 4;
    }
    st
}

/// Compare-exchange over the disjoint pairs `(0,1), (2,3), ...` of an
/// even-length window.
fn exchange_pairs(dist: &mut [f64], label: &mut [LabelId], parallel: bool) -> SelectionStats {
    debug_assert_eq!(dist.len() % 2, 0);
    let step = |(d, l): (&mut [f64], &mut [LabelId])| exchange(d, l);
    if parallel && dist.len() / 2 >= PAR_MIN_PAIRS {
        dist.par_chunks_exact_mut(2)
            .zip(label.par_chunks_exact_mut(2))
            .with_min_len(PAR_MIN_PAIRS / 4)
            .map(step)
            .reduce(SelectionStats::default, SelectionStats::merge)
    } else {
        dist.chunks_exact_mut(2)
            .zip(label.chunks_exact_mut(2))
            .map(step)
            .fold(SelectionStats::default(), SelectionStats::merge)
    }
}

fn bubble(input: &[Candidate], k: usize, mode: ExecMode) -> (NeighborSet, SelectionStats) {
    let n = input.len();
    let passes = k.min(n);
    let mut buf = Buffers::from_input(input);
    let mut st = SelectionStats::default();
    match mode {
        ExecMode::Sequential => {
            for i in 0..passes {
                for j in (i + 1..n).rev() {
                    st = st.merge(exchange(
                        &mut buf.dist[j - 1..=j],
                        &mut buf.label[j - 1..=j],
                    ));
                }
            }
        }
        ExecMode::Parallel => {
            // Wavefront: bubble b runs two steps behind bubble b-1. At global
            // step t, bubble b handles pair (lo, lo+1) with lo = n - 2 - (t - 2b),
            // so the active pairs are adjacent and disjoint, and each sees the
            // state the sequential schedule would. Bubble n-1 has no pairs.
            let busy = passes.min(n - 1);
            if busy > 0 {
                let total_steps = 2 * (busy - 1) + (n - 2 - (busy - 1)) + 1;
                for t in 0..total_steps {
                    // b active iff 2b <= t and t - 2b <= n - 2 - b
                    let b_hi = (t / 2).min(busy - 1);
                    // t - 2b <= n - 2 - b  <=>  b >= t - (n - 2)
                    let b_lo = t.saturating_sub(n - 2);
                    if b_lo > b_hi {
                        continue;
                    }
                    let lo_first = n - 2 - (t - 2 * b_lo);
                    let lo_last = n - 2 - (t - 2 * b_hi);
                    debug_assert!(lo_first <= lo_last);
                    let span = lo_first..lo_last + 2;
                    st = st.merge(exchange_pairs(
                        &mut buf.dist[span.clone()],
                        &mut buf.label[span],
                        true,
                    ));
                }
            }
        }
    }
    (NeighborSet::new(buf.head(passes), k), st)
}

fn merge(input: &[Candidate], k: usize) -> (NeighborSet, SelectionStats) {
    let n = input.len();
    let mut src = Buffers::from_input(input);
    let mut dst = Buffers {
        dist: vec![0.0; n],
        label: vec![LabelId(0); n],
    };
    let mut st = SelectionStats::default();
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            merge_runs(&src, &mut dst, lo, mid, hi, &mut st);
            lo = hi;
        }
        std::mem::swap(&mut src, &mut dst);
        width *= 2;
    }
    (NeighborSet::new(src.head(k.min(n)), k), st)
}

fn merge_runs(
    src: &Buffers,
    dst: &mut Buffers,
    lo: usize,
    mid: usize,
    hi: usize,
    st: &mut SelectionStats,
) {
    let (mut i, mut j, mut out) = (lo, mid, lo);
    while i < mid && j < hi {
        st.element_reads += 2;
        st.comparisons += 1;
        // Take from the right run only when strictly smaller.
        let from = if src.dist[j] < src.dist[i] {
            j += 1;
            j - 1
        } else {
            i += 1;
            i - 1
        };
        st.element_reads += 1;
        st.element_writes += 2;
        dst.dist[out] = src.dist[from];
        dst.label[out] = src.label[from];
        out += 1;
    }
    for from in (i..mid).chain(j..hi) {
        st.element_reads += 2;
        st.element_writes += 2;
        dst.dist[out] = src.dist[from];
        dst.label[out] = src.label[from];
        out += 1;
    }
}

fn oddeven(input: &[Candidate], k: usize, mode: ExecMode) -> (NeighborSet, SelectionStats) {
    let n = input.len();
    let mut buf = Buffers::from_input(input);
    let mut st = SelectionStats::default();
    let parallel = mode == ExecMode::Parallel;
    for phase in 0..n {
        let start = phase % 2;
        let pairs = (n - start) / 2;
        let end = start + 2 * pairs;
        st = st.merge(exchange_pairs(
            &mut buf.dist[start..end],
            &mut buf.label[start..end],
            parallel,
        ));
    }
    (NeighborSet::new(buf.head(k.min(n)), k), st)
}

fn enumeration(input: &[Candidate], k: usize, mode: ExecMode) -> (NeighborSet, SelectionStats) {
    let n = input.len();
    let buf = Buffers::from_input(input);
    let d = &buf.dist;
    // Stable rank: strictly smaller elements plus equal elements that come first.
    let rank = |i: usize| -> usize {
        let di = d[i];
        let before = d[..i].iter().filter(|&&dj| dj <= di).count();
        let after = d[i + 1..].iter().filter(|&&dj| dj < di).count();
        before + after
    };
    let ranks: Vec<usize> = match mode {
        ExecMode::Sequential => (0..n).map(rank).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().with_min_len(64).map(rank).collect(),
    };
    let n64 = n as u64;
    let st = SelectionStats {
        // per element: one load of d_i, n-1 loads and comparisons against d_j,
        // then a label load and two stores at the rank position
        comparisons: n64 * n64.saturating_sub(1),
        element_reads: n64 * (1 + n64.saturating_sub(1) + 1),
        element_writes: 2 * n64,
        wall_nanos: 0,
    };
    let mut out = Buffers {
        dist: vec![0.0; n],
        label: vec![LabelId(0); n],
    };
    for (i, &r) in ranks.iter().enumerate() {
        out.dist[r] = d[i];
        out.label[r] = buf.label[i];
    }
    (NeighborSet::new(out.head(k.min(n)), k), st)
}

/// Stable ranks as computed by the enumeration strategy; exposed for tests.
pub fn enumeration_ranks(distances: &[f64]) -> Vec<usize> {
    (0..distances.len())
        .map(|i| {
            let di = distances[i];
            distances[..i].iter().filter(|&&dj| dj <= di).count()
                + distances[i + 1..].iter().filter(|&&dj| dj < di).count()
        })
        .collect()
}

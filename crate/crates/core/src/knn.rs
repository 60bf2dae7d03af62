//! Manhattan-distance KNN over a [`Dataset`] with a pluggable selector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelId};
use crate::error::{Error, Result};
use crate::flowfeat::FeatureVector;
use crate::selectors::{self, Candidate, ExecMode, NeighborSet, SelectionStats, SelectorKind};

/// A non-negative distance; `INFINITY` orders above every finite value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distance(f64);

impl Distance {
    pub const ZERO: Distance = Distance(0.0);
    pub const INFINITY: Distance = Distance(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 {
            Ok(Distance(value))
        } else {
            Err(Error::invalid(format!(
                "distance must be non-negative, got {value}"
            )))
        }
    }

    pub(crate) fn from_raw(value: f64) -> Self {
        debug_assert!(value >= 0.0);
        Distance(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

/// Sum of absolute coordinate differences.
pub fn manhattan(a: &[f64], b: &[f64]) -> Result<Distance> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(Distance(manhattan_unchecked(a, b)))
}

#[inline]
fn manhattan_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl FeatureVector {
    pub fn manhattan(&self, other: &FeatureVector) -> Distance {
        Distance(manhattan_unchecked(&self.to_array(), &other.to_array()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub selector: SelectorKind,
    #[serde(skip)]
    pub mode: ExecMode,
}

impl KnnConfig {
    pub fn new(k: usize, selector: SelectorKind) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(KnnConfig {
            k,
            selector,
            mode: ExecMode::Sequential,
        })
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 5,
            selector: SelectorKind::KMin,
            mode: ExecMode::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: LabelId,
    pub neighbors: NeighborSet,
    pub stats: SelectionStats,
}

/// Distances from `query` to every training sample, in training order.
pub fn candidates(train: &Dataset, query: &FeatureVector) -> Vec<Candidate> {
    let q = query.to_array();
    train
        .samples()
        .iter()
        .map(|s| Candidate {
            distance: Distance(manhattan_unchecked(&s.features.to_array(), &q)),
            label: s.label,
        })
        .collect()
}

pub fn classify(
    train: &Dataset,
    query: &FeatureVector,
    config: &KnnConfig,
) -> Result<Classification> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    classify_candidates(&candidates(train, query), config)
}

/// Classifies from precomputed candidates.
pub fn classify_candidates(cands: &[Candidate], config: &KnnConfig) -> Result<Classification> {
    let (neighbors, stats) = selectors::select(config.selector, cands, config.k, config.mode)?;
    let label = mode_with_tiebreak(&neighbors)?;
    Ok(Classification {
        label,
        neighbors,
        stats,
    })
}

/// Most frequent label; ties go to the smaller distance sum, then the
/// smaller ordinal.
pub fn mode_with_tiebreak(neighbors: &NeighborSet) -> Result<LabelId> {
    if neighbors.is_empty() {
        return Err(Error::invalid("empty neighbor set"));
    }
    let mut by_label: BTreeMap<LabelId, Vec<f64>> = BTreeMap::new();
    for e in neighbors.entries() {
        by_label
            .entry(e.label)
            .or_default()
            .push(e.distance.value());
    }
    // Sum in ascending order so the result does not depend on slot order.
    let tallies = by_label.into_iter().map(|(label, mut ds)| {
        ds.sort_by(f64::total_cmp);
        (label, ds.len(), ds.iter().sum::<f64>())
    });
    let mut best: Option<(LabelId, usize, f64)> = None;
    for (label, count, sum) in tallies {
        let better = match best {
            None => true,
            // labels arrive in ascending ordinal, so equal (count, sum) keeps the earlier one
            Some((_, bc, bs)) => count > bc || (count == bc && sum < bs),
        };
        if better {
            best = Some((label, count, sum));
        }
    }
    Ok(best.expect("non-empty").0)
}

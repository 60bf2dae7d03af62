//! Labeled samples, stratified splits, cross-validation folds and a seeded
//! synthetic traffic generator.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, so a given seed reproduces the same partitions and the
//! same synthetic corpus on any platform.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfeat::{self, FeatureRecord, FeatureVector, DEFAULT_WINDOW_LENGTH};

/// Dense label ordinal within a [`LabelTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub ordinal: u32,
    pub name: String,
}

/// Ordinal-to-name table; ordinals are `0..len` in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelTable {
    labels: Vec<ClassLabel>,
    #[serde(skip)]
    by_name: HashMap<String, LabelId>,
}

impl LabelTable {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = LabelTable::default();
        for name in names {
            let name = name.into();
            if table.id_of(&name).is_some() {
                return Err(Error::invalid(format!("duplicate label {name:?}")));
            }
            table.intern(&name);
        }
        Ok(table)
    }

    /// Returns the id of `name`, appending it if new.
    pub fn intern(&mut self, name: &str) -> LabelId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = LabelId(self.labels.len() as u32);
        self.labels.push(ClassLabel {
            ordinal: id.0,
            name: name.to_string(),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id_of(&self, name: &str) -> Option<LabelId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.labels.get(id.index()).map(|l| l.name.as_str())
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses `{"labels":[{"ordinal":0,"name":"..."}]}`, checking that
    /// ordinals are dense and names unique.
    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            labels: Vec<ClassLabel>,
        }
        let mut raw: Raw = serde_json::from_str(json)?;
        raw.labels.sort_by_key(|l| l.ordinal);
        for (i, l) in raw.labels.iter().enumerate() {
            if l.ordinal as usize != i {
                return Err(Error::invalid(format!(
                    "label ordinals must be dense from 0; found {} at position {i}",
                    l.ordinal
                )));
            }
        }
        LabelTable::from_names(raw.labels.into_iter().map(|l| l.name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: LabelId,
    pub device_id: String,
    pub window_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    labels: LabelTable,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, labels: LabelTable) -> Result<Self> {
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.label.index() >= labels.len())
        {
            return Err(Error::invalid(format!(
                "sample {i} has label {} outside the label table",
                s.label.0
            )));
        }
        Ok(Dataset { samples, labels })
    }

    /// Builds a dataset from labeled feature rows. Labels are interned into
    /// `table` (pass an empty table to assign ordinals by first appearance).
    pub fn from_records(records: Vec<FeatureRecord>, mut table: LabelTable) -> Result<Self> {
        let mut samples = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            let name = r
                .label
                .ok_or_else(|| Error::invalid(format!("record {i} has no label")))?;
            samples.push(LabeledSample {
                features: r.features,
                label: table.intern(&name),
                device_id: r.device_id,
                window_start: r.window_start,
            });
        }
        Dataset::new(samples, table)
    }

    pub fn to_records(&self) -> Vec<FeatureRecord> {
        self.samples
            .iter()
            .map(|s| FeatureRecord {
                device_id: s.device_id.clone(),
                window_start: s.window_start,
                features: s.features,
                label: self.labels.name(s.label).map(str::to_string),
            })
            .collect()
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let records = flowfeat::read_feature_csv(source)?;
        if records.first().is_some_and(|r| r.label.is_none()) {
            return Err(Error::invalid("feature CSV has no label column"));
        }
        Dataset::from_records(records, LabelTable::default())
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        flowfeat::write_feature_csv(sink, &self.to_records(), true)
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn labels(&self) -> &LabelTable {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples at `indices`, in the given order, sharing the label table.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Sample indices grouped by label ordinal.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.labels.len()];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.label.index()].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            seed,
        })
    }
}

/// Fractions swept when reproducing the accuracy-versus-size curve.
pub const SWEEP_FRACTIONS: [f64; 7] = [0.01, 0.05, 0.10, 0.30, 0.50, 0.70, 0.90];

/// Per-class RNG: one ChaCha stream per class so classes shuffle independently.
fn class_rng(seed: u64, domain: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(class as u64);
    rng
}

const SPLIT_DOMAIN: u64 = 0x5b1c_0de5_a11e_0001;
const FOLD_DOMAIN: u64 = 0xf01d_5eed_0000_0002;

/// Stratified train/test split. Each class sends
/// `floor(fraction * count)` samples to train (at least one when the class has
/// two or more), the rest to test. Both halves keep the original order.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    SplitSpec::new(spec.train_fraction, spec.seed)?;
    let mut in_train = vec![false; data.len()];
    for (class, mut idx) in data.class_indices().into_iter().enumerate() {
        let count = idx.len();
        let mut n_train = (spec.train_fraction * count as f64).floor() as usize;
        if n_train == 0 && count >= 2 {
            n_train = 1;
        }
        idx.shuffle(&mut class_rng(spec.seed, SPLIT_DOMAIN, class));
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_train[i]);
    Ok((data.subset(&train), data.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub folds: usize,
    /// Fold index of every sample.
    pub fold_of: Vec<usize>,
    /// False when some class had fewer samples than folds and the
    /// assignment fell back to plain shuffling.
    pub stratified: bool,
}

impl FoldAssignment {
    /// (training indices, held-out indices) for `fold`, each ascending.
    pub fn partition(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assigns every sample to one of `folds` folds.
///
/// Classes are dealt round-robin after a seeded shuffle, continuing from where
/// the previous class stopped, so per-class and overall fold sizes each differ
/// by at most one.
pub fn kfold_assign(data: &Dataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    if data.len() < folds {
        return Err(Error::invalid(format!(
            "{} samples cannot fill {folds} folds",
            data.len()
        )));
    }
    let classes = data.class_indices();
    let stratified = classes.iter().all(|c| c.is_empty() || c.len() >= folds);
    let groups = if stratified {
        classes
    } else {
        log::warn!("a class has fewer than {folds} samples; folds are not stratified");
        vec![(0..data.len()).collect()]
    };
    let mut fold_of = vec![usize::MAX; data.len()];
    let mut next = 0;
    for (g, mut idx) in groups.into_iter().enumerate() {
        idx.shuffle(&mut class_rng(seed, FOLD_DOMAIN, g));
        for i in idx {
            fold_of[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(FoldAssignment {
        folds,
        fold_of,
        stratified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of classes; the last one is the flood class.
    pub classes: usize,
    pub samples_per_class: usize,
    /// Noise magnitude: additive on the fraction features, relative on
    /// packet count and mean size.
    pub cluster_spread: f64,
    /// Probability that a sample's label is replaced by a different class.
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Six classes (five devices plus a UDP flood), 2,000 windows each, with
    /// enough overlap that 1-NN and majority votes disagree on a few percent
    /// of queries while a tuned KNN stays near 0.99.
    pub fn calibrated() -> Self {
        SynthConfig {
            classes: 6,
            samples_per_class: 2000,
            cluster_spread: 0.3,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

const DEVICE_NAMES: [&str; 10] = [
    "google-home",
    "amazon-echo",
    "nest-camera",
    "ring-camera",
    "android-phone",
    "wemo-switch",
    "hue-bulb",
    "tp-link-plug",
    "chromecast",
    "lifx-bulb",
];

pub const FLOOD_CLASS: &str = "ddos-udp";

/// Class centre as (icmp, tcp, udp, other) shares plus the scalar features.
#[derive(Debug, Clone, Copy)]
struct Center {
    shares: [f64; 4],
    ip_diversity: f64,
    packet_count: f64,
    mean_size: f64,
}

fn device_center(rng: &mut ChaCha8Rng) -> Center {
    // ICMP is rare in benign device traffic.
    let raw = [
        0.1 * rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
        0.3 * rng.random::<f64>(),
    ];
    let total: f64 = raw.iter().sum();
    let packet_count = (20f64.ln() + rng.random::<f64>() * (3000f64 / 20.0).ln()).exp();
    Center {
        shares: raw.map(|v| v / total),
        ip_diversity: rng.random_range(0.02..0.4),
        packet_count,
        mean_size: rng.random_range(60.0..1200.0),
    }
}

fn flood_center(rng: &mut ChaCha8Rng) -> Center {
    Center {
        shares: [0.0, 0.01, 0.98, 0.01],
        ip_diversity: rng.random_range(0.95..0.99),
        packet_count: rng.random_range(15_000.0..25_000.0),
        mean_size: rng.random_range(40.0..80.0),
    }
}

/// Projects a noisy point back into the feature domain.
fn clamp_point(
    shares: [f64; 3],
    ip_diversity: f64,
    packet_count: f64,
    mean_size: f64,
) -> FeatureVector {
    let mut shares = shares.map(|v| v.clamp(0.0, 1.0));
    let sum: f64 = shares.iter().sum();
    if sum > 1.0 {
        shares = shares.map(|v| v / sum);
    }
    let packet_count = packet_count.round().max(1.0) as u64;
    FeatureVector {
        icmp_pct: shares[0],
        tcp_pct: shares[1],
        udp_pct: shares[2],
        ip_diversity: ip_diversity.clamp(1.0 / packet_count as f64, 1.0),
        packet_count,
        mean_packet_size: mean_size.max(0.0),
    }
}

/// Generates a labeled corpus with one cluster per class.
///
/// Samples are emitted class by class; each gets `device_id` = class name and
/// `window_start` = its index within the class times the default window.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    if config.classes < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes"));
    }
    if config.samples_per_class < 1 {
        return Err(Error::invalid("samples_per_class must be at least 1"));
    }
    if !(config.cluster_spread >= 0.0 && config.cluster_spread.is_finite()) {
        return Err(Error::invalid(format!(
            "cluster spread must be finite and non-negative, got {}",
            config.cluster_spread
        )));
    }
    if !(0.0..=1.0).contains(&config.label_noise) {
        return Err(Error::invalid("label noise must lie in [0, 1]"));
    }
    let names: Vec<String> = (0..config.classes - 1)
        .map(|i| match DEVICE_NAMES.get(i) {
            Some(n) => n.to_string(),
            None => format!("device-{i}"),
        })
        .chain(std::iter::once(FLOOD_CLASS.to_string()))
        .collect();
    let table = LabelTable::from_names(names.iter().cloned())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers: Vec<Center> = (0..config.classes)
        .map(|c| {
            if c + 1 == config.classes {
                flood_center(&mut rng)
            } else {
                device_center(&mut rng)
            }
        })
        .collect();

    let s = config.cluster_spread;
    let mut samples = Vec::with_capacity(config.classes * config.samples_per_class);
    for (class, center) in centers.iter().enumerate() {
        for i in 0..config.samples_per_class {
            let mut u = || {
                if s > 0.0 {
                    rng.random_range(-1.0..=1.0)
                } else {
                    0.0
                }
            };
            let shares = [
                center.shares[0] + s * u(),
                center.shares[1] + s * u(),
                center.shares[2] + s * u(),
            ];
            let ip = center.ip_diversity + s * u();
            let count = center.packet_count * (1.0 + s * u());
            let size = center.mean_size * (1.0 + s * u());
            let features = clamp_point(shares, ip, count, size);
            let mut label = class;
            if config.label_noise > 0.0 && rng.random::<f64>() < config.label_noise {
                let shift = rng.random_range(1..config.classes);
                label = (class + shift) % config.classes;
            }
            samples.push(LabeledSample {
                features,
                label: LabelId(label as u32),
                device_id: names[class].clone(),
                window_start: i as f64 * DEFAULT_WINDOW_LENGTH,
            });
        }
    }
    Dataset::new(samples, table)
}

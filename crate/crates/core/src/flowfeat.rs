//! Packet ingestion, tumbling flow windows and per-window feature extraction.
//!
//! A window covers one device over a half-open interval
//! `[window_start, window_start + window_length)` with `window_start` aligned
//! to a multiple of the window length. Each window reduces to a
//! [`FeatureVector`]: protocol shares, remote-IP diversity, packet count and
//! mean packet size.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;

/// Polling interval in seconds.
pub const DEFAULT_WINDOW_LENGTH: f64 = 20.0;

pub const PACKET_CSV_HEADER: [&str; 7] = [
    "timestamp",
    "device_id",
    "src_ip",
    "dst_ip",
    "protocol",
    "size",
    "direction",
];

pub const FEATURE_CSV_HEADER: [&str; 9] = [
    "device_id",
    "window_start",
    "icmp_pct",
    "tcp_pct",
    "udp_pct",
    "ip_diversity",
    "packet_count",
    "mean_packet_size",
    "label",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Icmp,
    Tcp,
    Udp,
    Other,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ICMP" => Ok(Protocol::Icmp),
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "OTHER" => Ok(Protocol::Other),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Icmp => "ICMP",
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Other => "OTHER",
        })
    }
}

/// Direction relative to the monitored device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Inbound,
    /// The device is the sender.
    Outbound,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "INBOUND" => Ok(Direction::Inbound),
            "OUTBOUND" => Ok(Direction::Outbound),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Inbound => "INBOUND",
            Direction::Outbound => "OUTBOUND",
        })
    }
}

/// Metadata of one captured packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketMeta {
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub device_id: String,
    pub src_ip: String,
    pub dst_ip: String,
    pub protocol: Protocol,
    pub size: u64,
    pub direction: Direction,
}

impl PacketMeta {
    /// The peer on the other side of the monitored device.
    pub fn remote_ip(&self) -> &str {
        match self.direction {
            Direction::Outbound => &self.dst_ip,
            Direction::Inbound => &self.src_ip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestMode {
    /// Abort on the first malformed row.
    Strict,
    /// Skip malformed rows and report them.
    Lenient,
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub packets: Vec<PacketMeta>,
    /// Row errors skipped in lenient mode, in file order.
    pub rejected: Vec<Error>,
}

/// Streams packets out of a packet-CSV source, one item per data row.
///
/// The header row is validated first; a bad header is reported as a row
/// error on line 1 and ends the stream.
pub struct PacketRows<R: Read> {
    reader: csv::Reader<R>,
    record: csv::StringRecord,
    header_checked: bool,
    done: bool,
}

impl<R: Read> PacketRows<R> {
    pub fn new(source: R) -> Self {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        PacketRows {
            reader,
            record: csv::StringRecord::new(),
            header_checked: false,
            done: false,
        }
    }
}

impl<R: Read> Iterator for PacketRows<R> {
    type Item = Result<PacketMeta>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done {
                return None;
            }
            match self.reader.read_record(&mut self.record) {
                Ok(false) => {
                    self.done = true;
                    return None;
                }
                Ok(true) => {}
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    // A UTF-8 error is local to its row; anything else is fatal.
                    if !matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                        self.done = true;
                    }
                    return Some(Err(Error::Row {
                        line,
                        message: e.to_string(),
                    }));
                }
            }
            let line = self.record.position().map_or(0, |p| p.line());
            if !self.header_checked {
                self.header_checked = true;
                if self.record.iter().ne(PACKET_CSV_HEADER.iter().copied()) {
                    self.done = true;
                    return Some(Err(Error::Row {
                        line,
                        message: format!(
                            "expected header {:?}, found {:?}",
                            PACKET_CSV_HEADER.join(","),
                            self.record.iter().collect::<Vec<_>>().join(",")
                        ),
                    }));
                }
                continue;
            }
            if self.record.len() == 1 && self.record[0].is_empty() {
                // blank line
                continue;
            }
            return Some(
                parse_packet(&self.record).map_err(|message| Error::Row { line, message }),
            );
        }
    }
}

fn parse_packet(rec: &csv::StringRecord) -> Result<PacketMeta, String> {
    if rec.len() != PACKET_CSV_HEADER.len() {
        return Err(format!(
            "expected {} columns, found {}",
            PACKET_CSV_HEADER.len(),
            rec.len()
        ));
    }
    let timestamp: f64 = rec[0]
        .parse()
        .map_err(|_| format!("unparseable timestamp {:?}", &rec[0]))?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(format!(
            "timestamp must be finite and non-negative, got {timestamp}"
        ));
    }
    let size: u64 = rec[5]
        .parse()
        .map_err(|_| format!("size must be a non-negative integer, got {:?}", &rec[5]))?;
    Ok(PacketMeta {
        timestamp,
        device_id: rec[1].to_string(),
        src_ip: rec[2].to_string(),
        dst_ip: rec[3].to_string(),
        protocol: rec[4].parse()?,
        size,
        direction: rec[6].parse()?,
    })
}

/// Reads a packet-CSV stream into memory, preserving file order.
pub fn ingest_packets<R: Read>(source: R, mode: IngestMode) -> Result<IngestOutcome> {
    let mut out = IngestOutcome::default();
    for row in PacketRows::new(source) {
        match row {
            Ok(p) => out.packets.push(p),
            Err(e @ Error::Row { line: 1, .. }) => return Err(e),
            Err(e) if mode == IngestMode::Strict => return Err(e),
            Err(e) => {
                log::debug!("skipping row: {e}");
                out.rejected.push(e);
            }
        }
    }
    Ok(out)
}

/// All packets of one device within one tumbling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowWindow {
    pub device_id: String,
    pub window_start: f64,
    pub window_length: f64,
    pub packets: Vec<PacketMeta>,
}

impl FlowWindow {
    pub fn contains(&self, timestamp: f64) -> bool {
        self.window_start <= timestamp && timestamp < self.window_start + self.window_length
    }
}

/// Index of the aligned interval holding `t`, corrected for rounding in `t / len`.
fn window_index(t: f64, len: f64) -> i64 {
    let mut idx = (t / len).floor() as i64;
    if idx as f64 * len > t {
        idx -= 1;
    } else if (idx + 1) as f64 * len <= t {
        idx += 1;
    }
    idx
}

/// Groups packets per device into aligned, half-open tumbling windows.
///
/// Empty windows are not emitted. Output is ordered by
/// `(device_id, window_start)`; packets keep their input order within a window.
pub fn windowize<I>(packets: I, window_length: f64) -> Result<Vec<FlowWindow>>
where
    I: IntoIterator<Item = PacketMeta>,
{
    if !(window_length > 0.0 && window_length.is_finite()) {
        return Err(Error::invalid(format!(
            "window length must be positive, got {window_length}"
        )));
    }
    let mut groups: BTreeMap<(String, i64), Vec<PacketMeta>> = BTreeMap::new();
    for p in packets {
        let idx = window_index(p.timestamp, window_length);
        groups
            .entry((p.device_id.clone(), idx))
            .or_default()
            .push(p);
    }
    Ok(groups
        .into_iter()
        .map(|((device_id, idx), packets)| FlowWindow {
            device_id,
            window_start: idx as f64 * window_length,
            window_length,
            packets,
        })
        .collect())
}

/// Six-dimensional flow-window feature point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub icmp_pct: f64,
    pub tcp_pct: f64,
    pub udp_pct: f64,
    /// Distinct remote IPs over packet count.
    pub ip_diversity: f64,
    pub packet_count: u64,
    pub mean_packet_size: f64,
}

impl FeatureVector {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; Self::DIM] {
        [
            self.icmp_pct,
            self.tcp_pct,
            self.udp_pct,
            self.ip_diversity,
            self.packet_count as f64,
            self.mean_packet_size,
        ]
    }

    /// Checks the domain constraints every extracted or generated vector obeys.
    pub fn validate(&self) -> Result<(), String> {
        let pcts = [self.icmp_pct, self.tcp_pct, self.udp_pct];
        if pcts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("protocol shares out of [0,1]: {pcts:?}"));
        }
        if pcts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(format!("protocol shares sum above 1: {pcts:?}"));
        }
        if [self.ip_diversity, self.mean_packet_size]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err("negative or NaN diversity or size".into());
        }
        if !self.mean_packet_size.is_finite() {
            return Err("non-finite mean packet size".into());
        }
        if self.packet_count == 0 {
            if self.to_array().iter().any(|&v| v != 0.0) {
                return Err("empty window must be the zero vector".into());
            }
        } else if self.ip_diversity > 1.0 + 1e-12 {
            return Err(format!("ip diversity {} above 1", self.ip_diversity));
        }
        Ok(())
    }
}

/// Computes the feature vector of one window. Order of packets is irrelevant.
pub fn extract_features(window: &FlowWindow) -> FeatureVector {
    let n = window.packets.len();
    if n == 0 {
        return FeatureVector::default();
    }
    let (mut icmp, mut tcp, mut udp) = (0usize, 0usize, 0usize);
    let mut bytes: u128 = 0;
    let mut remotes: HashSet<&str> = HashSet::with_capacity(n);
    for p in &window.packets {
        match p.protocol {
            Protocol::Icmp => icmp += 1,
            Protocol::Tcp => tcp += 1,
            Protocol::Udp => udp += 1,
            Protocol::Other => {}
        }
        bytes += u128::from(p.size);
        remotes.insert(p.remote_ip());
    }
    let total = n as f64;
    FeatureVector {
        icmp_pct: icmp as f64 / total,
        tcp_pct: tcp as f64 / total,
        udp_pct: udp as f64 / total,
        ip_diversity: remotes.len() as f64 / total,
        packet_count: n as u64,
        mean_packet_size: bytes as f64 / total,
    }
}

/// One row of the feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub device_id: String,
    pub window_start: f64,
    pub features: FeatureVector,
    pub label: Option<String>,
}

impl FeatureRecord {
    pub fn from_window(window: &FlowWindow) -> Self {
        FeatureRecord {
            device_id: window.device_id.clone(),
            window_start: window.window_start,
            features: extract_features(window),
            label: None,
        }
    }

    fn fields(&self) -> Vec<String> {
        let f = &self.features;
        let mut out = vec![
            self.device_id.clone(),
            sig9(self.window_start),
            sig9(f.icmp_pct),
            sig9(f.tcp_pct),
            sig9(f.udp_pct),
            sig9(f.ip_diversity),
            f.packet_count.to_string(),
            sig9(f.mean_packet_size),
        ];
        if let Some(label) = &self.label {
            out.push(label.clone());
        }
        out
    }
}

/// Writes feature rows with a header. The `label` column is emitted when
/// `labeled` is set; every record must then carry a label.
pub fn write_feature_csv<W: Write>(
    sink: W,
    records: &[FeatureRecord],
    labeled: bool,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let width = if labeled { 9 } else { 8 };
    w.write_record(&FEATURE_CSV_HEADER[..width])?;
    for (i, r) in records.iter().enumerate() {
        if r.label.is_some() != labeled {
            return Err(Error::invalid(format!(
                "record {i} label presence does not match the labeled flag"
            )));
        }
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV; the label column is optional but must be consistent
/// with the header.
pub fn read_feature_csv<R: Read>(source: R) -> Result<Vec<FeatureRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    let labeled = if header.iter().eq(FEATURE_CSV_HEADER.iter().copied()) {
        true
    } else if header.iter().eq(FEATURE_CSV_HEADER[..8].iter().copied()) {
        false
    } else {
        return Err(Error::Row {
            line: 1,
            message: format!(
                "unrecognized feature-CSV header {:?}",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    };
    let width = if labeled { 9 } else { 8 };
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let row = |message: String| Error::Row { line, message };
        if rec.len() != width {
            return Err(row(format!(
                "expected {width} columns, found {}",
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    row(format!(
                        "{}: unparseable number {:?}",
                        FEATURE_CSV_HEADER[i], &rec[i]
                    ))
                })
        };
        let features = FeatureVector {
            icmp_pct: num(2)?,
            tcp_pct: num(3)?,
            udp_pct: num(4)?,
            ip_diversity: num(5)?,
            packet_count: rec[6]
                .parse()
                .map_err(|_| row(format!("packet_count: expected integer, got {:?}", &rec[6])))?,
            mean_packet_size: num(7)?,
        };
        out.push(FeatureRecord {
            device_id: rec[0].to_string(),
            window_start: num(1)?,
            features,
            label: labeled.then(|| rec[8].to_string()),
        });
    }
    Ok(out)
}

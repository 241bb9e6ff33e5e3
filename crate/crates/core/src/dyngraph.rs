//! Continuous-time dynamic graphs: an initial topology plus a time-ordered
//! log of edge-addition events, with per-node history queries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided z value for the congestion test (95% confidence).
pub const CONGESTION_Z: f64 = 1.645;

const SECONDS_PER_HOUR: f64 = 3600.0;
const SECONDS_PER_DAY: f64 = 86_400.0;
const FEATURE_MAGIC: &[u8; 8] = b"CTDGFEAT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeOp {
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub u: usize,
    pub v: usize,
    pub op: EdgeOp,
    pub t: f64,
}

impl Event {
    pub fn add(u: usize, v: usize, t: f64) -> Self {
        Event {
            u,
            v,
            op: EdgeOp::Add,
            t,
        }
    }

    pub fn other(&self, node: usize) -> usize {
        if self.u == node {
            self.v
        } else {
            self.u
        }
    }
}

/// Time-sorted edge-addition events.
pub type EventLog = Vec<Event>;

/// Reads an event CSV with header `u,v,op,t`.
///
/// Rows are stably sorted by timestamp. A row whose timestamp falls behind its
/// predecessor by more than a relative 1e-9 is rejected with its line number;
/// smaller jitter is absorbed by the stable sort.
pub fn load_events(path: impl AsRef<Path>) -> Result<EventLog> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    parse_events(BufReader::new(file), path)
}

fn parse_events(reader: impl BufRead, path: &Path) -> Result<EventLog> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, header)) => {
            let header = header?;
            let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
            if cols != ["u", "v", "op", "t"] {
                return Err(parse_err(1, format!("expected header `u,v,op,t`, got `{header}`")));
            }
        }
        None => return Err(parse_err(1, "missing header".into())),
    }

    let mut events = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(lineno, format!("expected 4 fields, got {}", fields.len())));
        }
        let u: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad node id `{}`", fields[0])))?;
        let v: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad node id `{}`", fields[1])))?;
        let op = match fields[2].to_ascii_lowercase().as_str() {
            "add" => EdgeOp::Add,
            "delete" | "del" | "remove" => {
                return Err(Error::UnsupportedOperation {
                    path: path.to_path_buf(),
                    line: lineno,
                    op: fields[2].to_string(),
                })
            }
            other => return Err(parse_err(lineno, format!("unknown op `{other}`"))),
        };
        let t: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad timestamp `{}`", fields[3])))?;
        if !t.is_finite() {
            return Err(parse_err(lineno, format!("non-finite timestamp `{}`", fields[3])));
        }
        if u == v {
            return Err(parse_err(lineno, format!("self-loop event on node {u}")));
        }
        if t < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Unsorted {
                path: path.to_path_buf(),
                line: lineno,
                t,
                prev,
            });
        }
        prev = prev.max(t);
        events.push(Event { u, v, op, t });
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(events)
}

/// Writes events in the same CSV layout [`load_events`] reads.
pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let mut out = String::from("u,v,op,t\n");
    for e in events {
        let _ = writeln!(out, "{},{},Add,{}", e.u, e.v, e.t);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads an undirected edge list `u,v` (optional header).
pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let mut it = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad edge row `{line}`"),
            })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edges(path: impl AsRef<Path>, edges: &[(usize, usize)]) -> Result<()> {
    let mut out = String::from("u,v\n");
    for (u, v) in edges {
        let _ = writeln!(out, "{u},{v}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dense feature matrix: either the binary layout (magic `CTDGFEAT`,
/// u64 rows, u64 cols, row-major little-endian f64) or CSV with one row per
/// node and an optional header.
pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(FEATURE_MAGIC) {
        return decode_binary_features(&bytes, path);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "feature file is neither binary nor UTF-8 CSV".into(),
    })?;
    parse_dense_csv(&text, path)
}

fn decode_binary_features(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: msg.to_string(),
    };
    if bytes.len() < 24 {
        return Err(bad("truncated binary feature header"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 8 {
        return Err(bad("binary feature payload size does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))
}

pub fn write_features_binary(path: impl AsRef<Path>, features: &Array2<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(24 + features.len() * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.ncols() as u64).to_le_bytes());
    for x in features.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn write_features_csv(path: impl AsRef<Path>, features: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_dense_csv(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("bad numeric row `{line}`"),
                })
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(pos) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: pos + 1,
            message: "ragged row".into(),
        });
    }
    let nrows = rows.len();
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::shape(e.to_string()))
}

/// Time-indexed sensor readings (e.g. traffic speeds), one row per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Readings {
    pub timestamps: Vec<f64>,
    pub values: Array2<f64>,
}

impl Readings {
    pub fn new(timestamps: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        if timestamps.len() != values.nrows() {
            return Err(Error::shape(format!(
                "{} timestamps for {} reading rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("reading timestamps must be strictly increasing"));
        }
        Ok(Readings { timestamps, values })
    }

    pub fn num_sensors(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Rows `[start, end)` as a new reading set.
    pub fn slice(&self, start: usize, end: usize) -> Readings {
        Readings {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice(ndarray::s![start..end, ..]).to_owned(),
        }
    }

    /// Sampling cadence in seconds, if the timestamps are evenly spaced.
    pub fn cadence(&self) -> Option<f64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let step = self.timestamps[1] - self.timestamps[0];
        let even = self
            .timestamps
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step.abs().max(1.0));
        even.then_some(step)
    }
}

/// Reads readings CSV with header `timestamp,sensor_0,...,sensor_{P-1}`.
pub fn load_readings(path: impl AsRef<Path>) -> Result<Readings> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"timestamp") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "header must start with `timestamp`".into(),
        });
    }
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let dense = parse_dense_csv(&body, path)?;
    if dense.ncols() != cols.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: format!("expected {} columns, got {}", cols.len(), dense.ncols()),
        });
    }
    let timestamps = dense.column(0).to_vec();
    let values = dense.slice(ndarray::s![.., 1..]).to_owned();
    Readings::new(timestamps, values)
}

pub fn write_readings(path: impl AsRef<Path>, readings: &Readings) -> Result<()> {
    let mut out = String::from("timestamp");
    for p in 0..readings.num_sensors() {
        let _ = write!(out, ",sensor_{p}");
    }
    out.push('\n');
    for (t, row) in readings.timestamps.iter().zip(readings.values.rows()) {
        let _ = write!(out, "{t}");
        for x in row {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// One neighbor slot in a node's history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub neighbor: usize,
    pub time: f64,
    pub cluster: usize,
}

/// Neighbors of a node as seen strictly before a query time.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub owner: usize,
    /// Ascending by time; ties ordered by neighbor id.
    pub entries: Vec<HistoryEntry>,
    /// Time of the most recent entry, or `t0` when there is none.
    pub last_event_time: f64,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, neighbor: usize) -> bool {
        self.entries.iter().any(|e| e.neighbor == neighbor)
    }
}

/// Immutable continuous-time graph `(G, O)`.
#[derive(Debug, Clone)]
pub struct DynamicGraph {
    num_nodes: usize,
    t0: f64,
    initial_edges: Vec<(usize, usize)>,
    events: EventLog,
    features: Array2<f64>,
    dynamic_attributes: Option<Readings>,
    max_neighbors: Option<usize>,
    initial_adj: Vec<Vec<usize>>,
    /// Per node: (time, neighbor) in event order.
    incidence: Vec<Vec<(f64, usize)>>,
}

impl DynamicGraph {
    /// Validates and indexes a graph. `t0` defaults to the first event time
    /// (or 0 for an empty log).
    pub fn new(
        num_nodes: usize,
        initial_edges: Vec<(usize, usize)>,
        events: EventLog,
        features: Array2<f64>,
        t0: Option<f64>,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        let t0 = t0.unwrap_or_else(|| events.first().map_or(0.0, |e| e.t));
        let mut initial_adj = vec![Vec::new(); num_nodes];
        for &(u, v) in &initial_edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::UnknownNode(u.max(v)));
            }
            if u == v {
                return Err(Error::InvalidEvent(format!("initial self-loop on node {u}")));
            }
            initial_adj[u].push(v);
            initial_adj[v].push(u);
        }
        for adj in &mut initial_adj {
            adj.sort_unstable();
            adj.dedup();
        }
        let mut incidence = vec![Vec::new(); num_nodes];
        let mut prev = f64::NEG_INFINITY;
        for e in &events {
            if e.u >= num_nodes || e.v >= num_nodes {
                return Err(Error::UnknownNode(e.u.max(e.v)));
            }
            if e.u == e.v {
                return Err(Error::InvalidEvent(format!("self-loop event on node {}", e.u)));
            }
            if !e.t.is_finite() || e.t < prev {
                return Err(Error::InvalidEvent(format!("event at t = {} is out of order", e.t)));
            }
            if e.t < t0 {
                return Err(Error::InvalidEvent(format!("event at t = {} precedes t0 = {t0}", e.t)));
            }
            prev = e.t;
            incidence[e.u].push((e.t, e.v));
            incidence[e.v].push((e.t, e.u));
        }
        Ok(DynamicGraph {
            num_nodes,
            t0,
            initial_edges,
            events,
            features,
            dynamic_attributes: None,
            max_neighbors: None,
            initial_adj,
            incidence,
        })
    }

    /// Graph whose node count is inferred from the largest event endpoint and
    /// which carries no node features.
    pub fn from_events(events: EventLog) -> Result<Self> {
        let n = events.iter().map(|e| e.u.max(e.v) + 1).max().unwrap_or(0);
        DynamicGraph::new(n, Vec::new(), events, Array2::zeros((n, 0)), None)
    }

    pub fn with_dynamic_attributes(mut self, readings: Readings) -> Result<Self> {
        if readings.num_sensors() != self.num_nodes {
            return Err(Error::shape(format!(
                "{} sensors for {} nodes",
                readings.num_sensors(),
                self.num_nodes
            )));
        }
        self.dynamic_attributes = Some(readings);
        Ok(self)
    }

    /// Keep only the `cap` most recent neighbors in every history.
    pub fn with_max_neighbors(mut self, cap: Option<usize>) -> Self {
        self.max_neighbors = cap;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn initial_edges(&self) -> &[(usize, usize)] {
        &self.initial_edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn dynamic_attributes(&self) -> Option<&Readings> {
        self.dynamic_attributes.as_ref()
    }

    pub fn initial_neighbors(&self, u: usize) -> &[usize] {
        &self.initial_adj[u]
    }

    /// Latest time any event touched `u`, or `t0`.
    pub fn last_event_time(&self, u: usize) -> f64 {
        self.incidence
            .get(u)
            .and_then(|inc| inc.last())
            .map_or(self.t0, |&(t, _)| t)
    }

    /// Events incident to `u` strictly before `t`, as (neighbor, time), in
    /// time order. Repeated events on one pair are all kept.
    pub fn events_before(&self, u: usize, t: f64) -> Result<Vec<(usize, f64)>> {
        let inc = self.incidence.get(u).ok_or(Error::UnknownNode(u))?;
        let end = inc.partition_point(|&(ti, _)| ti < t);
        Ok(inc[..end].iter().map(|&(ti, v)| (v, ti)).collect())
    }

    /// Neighbors of `u` connected by an initial edge or by an event strictly
    /// before `t`. Repeated events on a pair collapse to the latest time.
    /// `clusters` maps node id to cluster id; pass an empty slice to label
    /// every entry with cluster 0.
    pub fn neighborhood_at(&self, u: usize, t: f64, clusters: &[usize]) -> Result<History> {
        if u >= self.num_nodes {
            return Err(Error::UnknownNode(u));
        }
        if t < self.t0 {
            return Err(Error::invalid(format!("query time {t} precedes t0 = {}", self.t0)));
        }
        let mut latest: BTreeMap<usize, f64> = BTreeMap::new();
        for &v in &self.initial_adj[u] {
            latest.insert(v, self.t0);
        }
        let inc = &self.incidence[u];
        let end = inc.partition_point(|&(ti, _)| ti < t);
        for &(ti, v) in &inc[..end] {
            let slot = latest.entry(v).or_insert(ti);
            if ti > *slot {
                *slot = ti;
            }
        }
        let cluster_of = |v: usize| clusters.get(v).copied().unwrap_or(0);
        let mut entries: Vec<HistoryEntry> = latest
            .into_iter()
            .map(|(neighbor, time)| HistoryEntry {
                neighbor,
                time,
                cluster: cluster_of(neighbor),
            })
            .collect();
        entries.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.neighbor.cmp(&b.neighbor)));
        if let Some(cap) = self.max_neighbors {
            if entries.len() > cap {
                entries.drain(..entries.len() - cap);
            }
        }
        let last_event_time = entries.iter().map(|e| e.time).fold(self.t0, f64::max);
        Ok(History {
            owner: u,
            entries,
            last_event_time,
        })
    }

    /// Median positive gap between consecutive events; 1.0 when undefined.
    pub fn median_interevent_gap(&self) -> f64 {
        median_positive_gap(self.events.iter().map(|e| e.t))
    }
}

pub fn median_positive_gap(times: impl Iterator<Item = f64>) -> f64 {
    let times: Vec<f64> = times.collect();
    let mut gaps: Vec<f64> = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return 1.0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

/// Adjacency lists of an undirected edge set over `n` nodes.
pub fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::UnknownNode(u.max(v)));
        }
        if u != v {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    Ok(adj)
}

/// Hour-of-day congestion detector.
///
/// For every sensor and hour bucket, the mean and sample standard deviation
/// are taken over `readings`. A reading strictly below `mean - 1.645 * std`
/// emits an `Add` event on every road-graph edge incident to that sensor.
/// Buckets with zero spread (or fewer than two samples) never fire.
pub fn derive_congestion_events(readings: &Readings, road_adjacency: &[Vec<usize>]) -> Result<EventLog> {
    let p = readings.num_sensors();
    if road_adjacency.len() != p {
        return Err(Error::shape(format!(
            "road graph has {} nodes for {} sensors",
            road_adjacency.len(),
            p
        )));
    }
    let cadence = readings
        .cadence()
        .ok_or_else(|| Error::invalid("readings must have a fixed cadence"))?;
    let span = readings.timestamps[readings.len() - 1] - readings.timestamps[0] + cadence;
    if span + 1e-6 < SECONDS_PER_DAY {
        return Err(Error::invalid("readings must cover at least one full day"));
    }
    derive_congestion_events_with(readings, road_adjacency, &HourlyStats::fit(readings))
}

/// Congestion events judged against precomputed hourly statistics, e.g.
/// statistics fitted on a training window only.
pub fn derive_congestion_events_with(
    readings: &Readings,
    road_adjacency: &[Vec<usize>],
    stats: &HourlyStats,
) -> Result<EventLog> {
    if road_adjacency.len() != readings.num_sensors() {
        return Err(Error::shape(format!(
            "road graph has {} nodes for {} sensors",
            road_adjacency.len(),
            readings.num_sensors()
        )));
    }
    let mut events = Vec::new();
    for (row, &t) in readings.values.rows().into_iter().zip(&readings.timestamps) {
        let hour = hour_of_day(t);
        for (sensor, &x) in row.iter().enumerate() {
            if stats.is_congested(sensor, hour, x) {
                for &v in &road_adjacency[sensor] {
                    events.push(Event::add(sensor, v, t));
                }
            }
        }
    }
    Ok(events)
}

pub fn hour_of_day(t: f64) -> usize {
    ((t.rem_euclid(SECONDS_PER_DAY)) / SECONDS_PER_HOUR).floor() as usize % 24
}

/// Per-sensor, per-hour mean and sample standard deviation.
#[derive(Debug, Clone)]
pub struct HourlyStats {
    mean: Array2<f64>,
    std: Array2<f64>,
}

impl HourlyStats {
    pub fn fit(readings: &Readings) -> Self {
        let p = readings.num_sensors();
        let mut sum = Array2::<f64>::zeros((p, 24));
        let mut count = Array2::<f64>::zeros((p, 24));
        for (row, &t) in readings.values.rows().into_iter().zip(&readings.timestamps) {
            let h = hour_of_day(t);
            for (s, &x) in row.iter().enumerate() {
                sum[[s, h]] += x;
                count[[s, h]] += 1.0;
            }
        }
        let mean = ndarray::Zip::from(&sum)
            .and(&count)
            .map_collect(|&s, &c| if c > 0.0 { s / c } else { 0.0 });
        let mut sq = Array2::<f64>::zeros((p, 24));
        for (row, &t) in readings.values.rows().into_iter().zip(&readings.timestamps) {
            let h = hour_of_day(t);
            for (s, &x) in row.iter().enumerate() {
                sq[[s, h]] += (x - mean[[s, h]]).powi(2);
            }
        }
        let std = ndarray::Zip::from(&sq)
            .and(&count)
            .map_collect(|&q, &c| if c > 1.0 { (q / (c - 1.0)).sqrt() } else { 0.0 });
        HourlyStats { mean, std }
    }

    pub fn from_parts(mean: Array2<f64>, std: Array2<f64>) -> Result<Self> {
        if mean.ncols() != 24 || mean.dim() != std.dim() {
            return Err(Error::shape("hourly stats must be sensors x 24"));
        }
        Ok(HourlyStats { mean, std })
    }

    pub fn mean(&self, sensor: usize, hour: usize) -> f64 {
        self.mean[[sensor, hour]]
    }

    pub fn std(&self, sensor: usize, hour: usize) -> f64 {
        self.std[[sensor, hour]]
    }

    pub fn is_congested(&self, sensor: usize, hour: usize, reading: f64) -> bool {
        let sd = self.std[[sensor, hour]];
        sd > 0.0 && reading < self.mean[[sensor, hour]] - CONGESTION_Z * sd
    }
}

/// Paths of a dataset on disk; everything except the events file is optional.
#[derive(Debug, Clone, Default)]
pub struct GraphSources {
    pub events: PathBuf,
    pub initial_edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub num_nodes: Option<usize>,
}

/// Loads and validates a graph from its on-disk parts.
pub fn load_graph(src: &GraphSources) -> Result<DynamicGraph> {
    let events = load_events(&src.events)?;
    let initial = match &src.initial_edges {
        Some(p) => load_edges(p)?,
        None => Vec::new(),
    };
    let features = match &src.features {
        Some(p) => Some(load_features(p)?),
        None => None,
    };
    let inferred = events
        .iter()
        .map(|e| e.u.max(e.v) + 1)
        .chain(initial.iter().map(|&(u, v)| u.max(v) + 1))
        .max()
        .unwrap_or(0);
    let n = src
        .num_nodes
        .or_else(|| features.as_ref().map(|f| f.nrows()))
        .unwrap_or(inferred);
    let features = features.unwrap_or_else(|| Array2::zeros((n, 0)));
    DynamicGraph::new(n, initial, events, features, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<EventLog> {
        parse_events(Cursor::new(text.to_string()), Path::new("mem.csv"))
    }

    #[test]
    fn loads_two_events() {
        let log = parse("u,v,op,t\n0,1,Add,1.0\n0,2,Add,2.0\n").unwrap();
        let g = DynamicGraph::from_events(log).unwrap();
        assert_eq!(g.events().len(), 2);
        assert_eq!(g.last_event_time(0), 2.0);
    }

    #[test]
    fn empty_log_uses_initial_edges() {
        let log = parse("u,v,op,t\n").unwrap();
        let g = DynamicGraph::new(3, vec![(0, 1), (1, 2), (0, 2)], log, Array2::zeros((3, 1)), None)
            .unwrap();
        assert!(g.events().is_empty());
        let h = g.neighborhood_at(1, 5.0, &[]).unwrap();
        let ids: Vec<usize> = h.entries.iter().map(|e| e.neighbor).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn unsorted_rows_name_the_line() {
        let err = parse("u,v,op,t\n0,1,Add,2.0\n0,2,Add,1.0\n").unwrap_err();
        match err {
            Error::Unsorted { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn delete_is_unsupported() {
        let err = parse("u,v,op,t\n0,1,Delete,2.0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedOperation { line: 2, .. }));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("u,v,op,t\n0,1,Add,1.0\n0,x,Add,2.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn integer_timestamps_are_accepted() {
        let log = parse("u,v,op,t\n0,1,Add,1700000000\n").unwrap();
        assert_eq!(log[0].t, 1.7e9);
    }

    #[test]
    fn ties_keep_file_order() {
        let log = parse("u,v,op,t\n0,3,Add,1.0\n0,1,Add,1.0\n0,2,Add,1.0\n").unwrap();
        let vs: Vec<usize> = log.iter().map(|e| e.v).collect();
        assert_eq!(vs, vec![3, 1, 2]);
    }

    fn chain() -> DynamicGraph {
        let events = vec![Event::add(0, 1, 1.0), Event::add(0, 2, 3.0), Event::add(0, 3, 5.0)];
        DynamicGraph::new(4, vec![], events, Array2::zeros((4, 0)), Some(0.0)).unwrap()
    }

    #[test]
    fn strict_past_only() {
        let g = chain();
        let h = g.neighborhood_at(0, 4.0, &[]).unwrap();
        let times: Vec<f64> = h.entries.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 3.0]);
        assert_eq!(h.last_event_time, 3.0);
        // an event exactly at the query time is excluded
        let h = g.neighborhood_at(0, 3.0, &[]).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn query_at_t0_sees_initial_only() {
        let events = vec![Event::add(0, 2, 1.0)];
        let g = DynamicGraph::new(3, vec![(0, 1)], events, Array2::zeros((3, 0)), Some(0.0)).unwrap();
        let h = g.neighborhood_at(0, 0.0, &[]).unwrap();
        assert_eq!(h.entries, vec![HistoryEntry { neighbor: 1, time: 0.0, cluster: 0 }]);
        assert_eq!(h.last_event_time, 0.0);
    }

    #[test]
    fn repeated_pair_collapses_to_latest() {
        let events = vec![Event::add(0, 1, 1.0), Event::add(1, 0, 2.0)];
        let g = DynamicGraph::new(2, vec![], events, Array2::zeros((2, 0)), Some(0.0)).unwrap();
        let h = g.neighborhood_at(0, 3.0, &[4, 7]).unwrap();
        assert_eq!(h.entries, vec![HistoryEntry { neighbor: 1, time: 2.0, cluster: 7 }]);
        // raw events keep both
        assert_eq!(g.events_before(0, 3.0).unwrap().len(), 2);
    }

    #[test]
    fn neighbor_cap_keeps_most_recent() {
        let g = chain().with_max_neighbors(Some(2));
        let h = g.neighborhood_at(0, 10.0, &[]).unwrap();
        let ids: Vec<usize> = h.entries.iter().map(|e| e.neighbor).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn unknown_node_is_an_error() {
        assert!(matches!(chain().neighborhood_at(9, 1.0, &[]), Err(Error::UnknownNode(9))));
    }

    #[test]
    fn feature_rows_must_match() {
        let err = DynamicGraph::new(3, vec![], vec![], Array2::zeros((2, 1)), None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    fn day_readings(values: impl Fn(usize, usize) -> f64, sensors: usize) -> Readings {
        // hourly cadence over two days
        let steps = 48;
        let ts: Vec<f64> = (0..steps).map(|i| i as f64 * 3600.0).collect();
        let vals = Array2::from_shape_fn((steps, sensors), |(i, s)| values(i, s));
        Readings::new(ts, vals).unwrap()
    }

    #[test]
    fn constant_readings_never_congest() {
        let r = day_readings(|_, _| 50.0, 2);
        let adj = vec![vec![1], vec![0]];
        assert!(derive_congestion_events(&r, &adj).unwrap().is_empty());
    }

    #[test]
    fn congestion_threshold_is_strict() {
        let mut mean = Array2::zeros((1, 24));
        let mut std = Array2::zeros((1, 24));
        mean[[0, 12]] = 60.0;
        std[[0, 12]] = 10.0;
        let stats = HourlyStats::from_parts(mean, std).unwrap();
        assert!(stats.is_congested(0, 12, 40.0));
        let boundary = 60.0 - CONGESTION_Z * 10.0;
        assert!(!stats.is_congested(0, 12, boundary));
        assert!(stats.is_congested(0, 12, boundary - 1e-9));
        // zero spread never fires
        assert!(!stats.is_congested(0, 3, -1e9));
    }

    #[test]
    fn hourly_stats_use_sample_std() {
        // noon bucket on sensor 0 sees {70, 50}: mean 60, sample std sqrt(200)
        let r = day_readings(|i, s| if s == 0 && i % 24 == 12 { if i < 24 { 70.0 } else { 50.0 } } else { 40.0 }, 1);
        let stats = HourlyStats::fit(&r);
        assert!((stats.mean(0, 12) - 60.0).abs() < 1e-12);
        assert!((stats.std(0, 12) - 200f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn congested_reading_emits_incident_edges() {
        // sensor 0 at noon: ten days of {50,70} alternating then a 40 reading
        let days = 11;
        let steps = days * 24;
        let ts: Vec<f64> = (0..steps).map(|i| i as f64 * 3600.0).collect();
        let vals = Array2::from_shape_fn((steps, 3), |(i, s)| {
            if s == 0 && i % 24 == 12 {
                let d = i / 24;
                if d == days - 1 {
                    20.0
                } else if d % 2 == 0 {
                    50.0
                } else {
                    70.0
                }
            } else {
                55.0
            }
        });
        let r = Readings::new(ts, vals).unwrap();
        let adj = vec![vec![1, 2], vec![0], vec![0]];
        let events = derive_congestion_events(&r, &adj).unwrap();
        let t = ((days - 1) * 24 + 12) as f64 * 3600.0;
        assert_eq!(events, vec![Event::add(0, 1, t), Event::add(0, 2, t)]);
    }

    #[test]
    fn short_readings_are_rejected() {
        let ts: Vec<f64> = (0..5).map(|i| i as f64 * 3600.0).collect();
        let r = Readings::new(ts, Array2::zeros((5, 1))).unwrap();
        assert!(derive_congestion_events(&r, &[vec![]]).is_err());
    }
}

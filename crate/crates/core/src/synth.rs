//! Seeded synthetic datasets: a periodic repurchase stream, a road-sensor
//! series with propagating slowdowns, and a two-community labeled graph.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dyngraph::{DynamicGraph, Event, Readings};
use crate::encoder::EncoderConfig;
use crate::learn::link::{Holdout, LinkTask, Sequence};
use crate::learn::node::NodeTask;
use crate::learn::traffic::TrafficTask;
use crate::learn::ModelConfig;

pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 24.0 * HOUR;

/// User–item purchase stream. Users are nodes `0..users`, items are nodes
/// `users..users+items`.
#[derive(Debug, Clone)]
pub struct RepurchaseData {
    pub users: usize,
    pub items: usize,
    pub events: Vec<Event>,
    /// One-hot item identity for item rows, zeros for user rows.
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RepurchaseConfig {
    pub users: usize,
    pub items: usize,
    pub days: usize,
    /// Favorites per user are drawn from `min_favorites..=max_favorites`.
    pub min_favorites: usize,
    pub max_favorites: usize,
    /// Chance a favorite is bought on a given day.
    pub daily_prob: f64,
    /// Standard deviation of the purchase time around its daily phase.
    pub jitter: f64,
    /// Mean number of non-favorite purchases per user per day.
    pub noise_rate: f64,
    /// Exponent of the Zipf-like item popularity.
    pub popularity_skew: f64,
}

impl Default for RepurchaseConfig {
    fn default() -> Self {
        RepurchaseConfig {
            users: 300,
            items: 200,
            days: 10,
            min_favorites: 2,
            max_favorites: 4,
            daily_prob: 0.85,
            jitter: HOUR,
            noise_rate: 0.5,
            popularity_skew: 0.3,
        }
    }
}

fn zipf_weights(n: usize, skew: f64) -> Vec<f64> {
    (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(skew)).collect()
}

fn draw(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Each user rebuys a few favorite items roughly every 24 hours at a
/// user-item specific time of day, plus occasional popularity-driven
/// purchases.
pub fn repurchase_stream(cfg: &RepurchaseConfig, seed: u64) -> RepurchaseData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = zipf_weights(cfg.items, cfg.popularity_skew);
    let total: f64 = weights.iter().sum();
    let jitter = Normal::new(0.0, cfg.jitter).expect("finite jitter");
    let noise = Poisson::new(cfg.noise_rate.max(1e-12)).expect("positive rate");
    let mut raw: Vec<(f64, usize, usize)> = Vec::new();
    for u in 0..cfg.users {
        let k = rng.random_range(cfg.min_favorites..=cfg.max_favorites);
        let mut favs: Vec<usize> = Vec::new();
        while favs.len() < k.min(cfg.items) {
            let i = draw(&weights, total, &mut rng);
            if !favs.contains(&i) {
                favs.push(i);
            }
        }
        let phases: Vec<f64> = favs.iter().map(|_| rng.random::<f64>() * DAY).collect();
        for d in 0..cfg.days {
            for (&i, &phase) in favs.iter().zip(&phases) {
                if rng.random::<f64>() < cfg.daily_prob {
                    let t = d as f64 * DAY + phase + jitter.sample(&mut rng);
                    raw.push((t.max(0.0), u, i));
                }
            }
            let extra = noise.sample(&mut rng) as usize;
            for _ in 0..extra {
                let t = d as f64 * DAY + rng.random::<f64>() * DAY;
                raw.push((t, u, draw(&weights, total, &mut rng)));
            }
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let events = raw
        .into_iter()
        .map(|(t, u, i)| Event::add(u, cfg.users + i, t.round()))
        .collect();
    let n = cfg.users + cfg.items;
    let mut features = Array2::zeros((n, cfg.items));
    for i in 0..cfg.items {
        features[[cfg.users + i, i]] = 1.0;
    }
    RepurchaseData {
        users: cfg.users,
        items: cfg.items,
        events,
        features,
    }
}

/// Sensor readings on a ring road with chords.
#[derive(Debug, Clone)]
pub struct TrafficData {
    pub readings: Readings,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrafficConfig {
    pub sensors: usize,
    pub days: usize,
    /// Seconds between readings.
    pub cadence: f64,
    /// Mean incidents per sensor per day.
    pub incident_rate: f64,
    /// Speed drop at the incident sensor.
    pub incident_drop: f64,
    /// Delay before a slowdown reaches a neighbor.
    pub propagation_delay: f64,
    /// Decay time of a slowdown.
    pub recovery: f64,
    pub noise: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            sensors: 20,
            days: 7,
            cadence: 300.0,
            incident_rate: 3.0,
            incident_drop: 25.0,
            propagation_delay: 900.0,
            recovery: 1800.0,
            noise: 1.5,
        }
    }
}

/// Free-flow speed with a daily rush-hour dip, plus random incidents. An
/// incident slows its sensor immediately and each neighbor after a delay;
/// every slowdown decays exponentially.
pub fn traffic_series(cfg: &TrafficConfig, seed: u64) -> TrafficData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.sensors;
    let mut edges: Vec<(usize, usize)> = (0..p).map(|i| (i, (i + 1) % p)).collect();
    for i in (0..p).step_by(5) {
        let j = (i + p / 2) % p;
        if i != j && !edges.contains(&(i, j)) && !edges.contains(&(j, i)) {
            edges.push((i, j));
        }
    }
    edges.retain(|&(a, b)| a != b);
    let mut adj = vec![Vec::new(); p];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let steps = (cfg.days as f64 * DAY / cfg.cadence).round() as usize;
    let horizon = cfg.days as f64 * DAY;
    let base: Vec<f64> = (0..p).map(|_| 55.0 + 10.0 * rng.random::<f64>()).collect();
    let phase: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * HOUR).collect();
    // (sensor, start, magnitude)
    let mut slowdowns: Vec<(usize, f64, f64)> = Vec::new();
    let incidents = Poisson::new(cfg.incident_rate * cfg.days as f64).expect("positive rate");
    for s in 0..p {
        let n = incidents.sample(&mut rng) as usize;
        for _ in 0..n {
            let t = rng.random::<f64>() * horizon;
            let mag = cfg.incident_drop * (0.6 + 0.8 * rng.random::<f64>());
            slowdowns.push((s, t, mag));
            for &v in &adj[s] {
                slowdowns.push((v, t + cfg.propagation_delay, 0.7 * mag));
            }
        }
    }
    slowdowns.sort_by(|a, b| a.1.total_cmp(&b.1));
    let noise = Normal::new(0.0, cfg.noise).expect("finite noise");
    let mut values = Array2::zeros((steps, p));
    let timestamps: Vec<f64> = (0..steps).map(|k| k as f64 * cfg.cadence).collect();
    for (k, &t) in timestamps.iter().enumerate() {
        for s in 0..p {
            let tod = (t + phase[s]).rem_euclid(DAY) / HOUR;
            let rush = 8.0 * (-((tod - 8.0) / 1.5).powi(2)).exp() + 10.0 * (-((tod - 17.5) / 1.5).powi(2)).exp();
            values[[k, s]] = base[s] - rush + noise.sample(&mut rng);
        }
    }
    for &(s, start, mag) in &slowdowns {
        let first = (start / cfg.cadence).ceil().max(0.0) as usize;
        let last = ((start + 6.0 * cfg.recovery) / cfg.cadence).ceil() as usize;
        for k in first..last.min(steps) {
            let dt = timestamps[k] - start;
            values[[k, s]] -= mag * (-dt / cfg.recovery).exp();
        }
    }
    values.mapv_inplace(|x: f64| x.max(1.0));
    TrafficData {
        readings: Readings::new(timestamps, values).expect("valid synthetic readings"),
        edges,
    }
}

/// Labeled graph with two communities.
#[derive(Debug, Clone)]
pub struct CommunityData {
    pub events: Vec<Event>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// `n` nodes split into two communities whose features are separated by
/// `separation` along every axis; events mostly stay within a community.
pub fn two_communities(n: usize, feature_dim: usize, separation: f64, events_per_node: usize, seed: u64) -> CommunityData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Array2::zeros((n, feature_dim));
    for i in 0..n {
        let centre = if labels[i] == 0 { -separation / 2.0 } else { separation / 2.0 };
        for j in 0..feature_dim {
            features[[i, j]] = centre + normal.sample(&mut rng);
        }
    }
    let mut raw = Vec::new();
    for u in 0..n {
        for _ in 0..events_per_node {
            let same = rng.random::<f64>() < 0.9;
            let v = loop {
                let v = rng.random_range(0..n);
                if v != u && ((labels[v] == labels[u]) == same) {
                    break v;
                }
            };
            raw.push((rng.random::<f64>() * 100.0, u, v));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    CommunityData {
        events: raw.into_iter().map(|(t, u, v)| Event::add(u, v, t)).collect(),
        features,
        labels,
    }
}

/// Encoder settings for the six-node fixtures: two layers, two heads,
/// width 4 and hourly time units.
pub fn tiny_model_config(input_dim: usize, clusters: usize, label_dim: usize, output_dim: usize) -> ModelConfig {
    let mut enc = EncoderConfig::new(input_dim, clusters);
    enc.layers = 2;
    enc.heads = 2;
    enc.dim = 4;
    enc.time_unit = HOUR;
    ModelConfig {
        encoder: enc,
        label_dim,
        output_dim,
    }
}

/// Three users, three items, five purchases per user.
pub fn tiny_link_task(seed: u64) -> (LinkTask, ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = vec![0, 0, 1];
    let mut inputs = Array2::zeros((3, 5));
    for i in 0..3 {
        inputs[[i, i]] = 1.0;
        inputs[[i, 3 + clusters[i]]] = 1.0;
    }
    let seqs: Vec<Sequence> = (0..3)
        .map(|user| {
            let mut times: Vec<f64> = (0..5).map(|_| (rng.random::<f64>() * 48.0 * HOUR).round()).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let items = times.iter().map(|_| rng.random_range(0..3)).collect();
            Sequence { user, items, times }
        })
        .collect();
    let holdouts: Vec<Holdout> = seqs
        .iter()
        .filter_map(|s| s.holdout())
        .map(|(history, target, time)| Holdout { history, target, time })
        .collect();
    let task = LinkTask {
        item_inputs: inputs,
        item_clusters: clusters,
        train: seqs,
        valid: holdouts.clone(),
        test: holdouts,
        max_len: 8,
        ks: vec![1, 2],
        select_k: 1,
    };
    (task, tiny_model_config(5, 2, 1, 3))
}

/// Six nodes in two labeled pairs of triangles with random event times.
pub fn tiny_node_task(seed: u64) -> (NodeTask, ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pairs = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3), (0, 4), (1, 5), (0, 1), (2, 5), (3, 4)];
    let mut raw: Vec<(f64, usize, usize)> = pairs
        .iter()
        .map(|&(u, v)| ((rng.random::<f64>() * 24.0 * HOUR).round(), u, v))
        .collect();
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let events = raw.into_iter().map(|(t, u, v)| Event::add(u, v, t)).collect();
    let features = Array2::from_shape_fn((6, 2), |_| normal.sample(&mut rng));
    let graph = DynamicGraph::new(6, vec![(0, 3)], events, features, Some(0.0)).expect("valid fixture graph");
    let clusters = vec![0, 1, 0, 1, 0, 1];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let query_time = (0..6).map(|i| 20.0 * HOUR + i as f64 * 600.0).collect();
    let mut task = NodeTask::new(graph, clusters, 2, labels, 2, query_time).expect("valid fixture task");
    task.train = (0..6).collect();
    (task, tiny_model_config(4, 2, 2, 2))
}

/// Six sensors, one day of five-minute readings, window 3, horizons 1 and 2.
pub fn tiny_traffic_task(seed: u64) -> (TrafficTask, ModelConfig) {
    let cfg = TrafficConfig {
        sensors: 6,
        days: 1,
        incident_rate: 6.0,
        ..Default::default()
    };
    let data = traffic_series(&cfg, seed);
    let clusters = vec![0, 1, 0, 1, 0, 1];
    let task = TrafficTask::from_readings(&data.readings, &data.edges, clusters, 2, 3, vec![1, 2])
        .expect("valid fixture task");
    let input_dim = task.input_dim();
    (task, tiny_model_config(input_dim, 2, 2, 1))
}

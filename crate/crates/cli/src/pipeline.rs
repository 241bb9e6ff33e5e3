//! Ingestion, clustering, task construction, training and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};

use ctdg::checkpoint::Checkpoint;
use ctdg::cluster::{fit_clusters, one_hot, ClusterModel};
use ctdg::dyngraph::{load_edges, load_graph, load_readings, DynamicGraph, GraphSources, Readings};
use ctdg::learn::link::{sequences_from_events, LinkTask};
use ctdg::learn::node::{latest_event_times, NodeTask};
use ctdg::learn::traffic::{split_points, TrafficTask};
use ctdg::learn::{train, MetricReport, Model, ModelConfig, Task, TaskKind, TrainOutcome};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Raw inputs of one task.
#[derive(Debug, Clone)]
pub enum Dataset {
    /// Link and node tasks.
    Graph { graph: DynamicGraph, labels: Option<Vec<usize>> },
    Traffic { readings: Readings, roads: Vec<(usize, usize)> },
}

pub fn ingest(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let d = &cfg.data;
    match cfg.task {
        TaskKind::Link | TaskKind::Node => {
            let src = GraphSources {
                events: d.events.clone().expect("validated"),
                initial_edges: d.initial_edges.clone(),
                features: d.features.clone(),
                num_nodes: d.num_nodes,
            };
            let graph = load_graph(&src)?;
            let labels = match (&cfg.task, &d.labels) {
                (TaskKind::Node, Some(p)) => Some(load_labels(p, graph.num_nodes())?),
                _ => None,
            };
            Ok(Dataset::Graph { graph, labels })
        }
        TaskKind::Traffic => {
            let readings = load_readings(d.readings.as_ref().expect("validated"))?;
            let roads = load_edges(d.road_edges.as_ref().expect("validated"))?;
            if let Some(&(u, v)) = roads.iter().find(|&&(u, v)| u.max(v) >= readings.num_sensors()) {
                return Err(CliError::invalid(format!(
                    "data.road_edges: edge ({u}, {v}) outside {} sensors",
                    readings.num_sensors()
                )));
            }
            Ok(Dataset::Traffic { readings, roads })
        }
    }
}

/// Reads `node,label` rows; every node needs exactly one label.
pub fn load_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = vec![None; n];
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let bad = || CliError::invalid(format!("{}:{}: bad label row `{line}`", path.display(), idx + 1));
        let (u, y) = line.split_once(',').ok_or_else(bad)?;
        let u: usize = u.trim().parse().map_err(|_| bad())?;
        let y: usize = y.trim().parse().map_err(|_| bad())?;
        *labels.get_mut(u).ok_or_else(bad)? = Some(y);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(u, y)| y.ok_or_else(|| CliError::invalid(format!("data.labels: node {u} has no label"))))
        .collect()
}

fn node_degrees(n: usize, graph: &DynamicGraph) -> Vec<f64> {
    let mut deg = vec![0.0; n];
    for e in graph.events() {
        deg[e.u] += 1.0;
        deg[e.v] += 1.0;
    }
    for &(u, v) in graph.initial_edges() {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    deg
}

/// Item node ids of a link dataset: every event target, ascending.
pub fn item_nodes(graph: &DynamicGraph) -> Vec<usize> {
    graph.events().iter().map(|e| e.v).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Features of the clustered entities. Rows without features fall back to
/// `ln(1 + degree)`.
fn cluster_inputs(cfg: &RunConfig, data: &Dataset) -> Array2<f64> {
    match data {
        Dataset::Graph { graph, .. } => {
            let rows: Vec<usize> = match cfg.task {
                TaskKind::Link => item_nodes(graph),
                _ => (0..graph.num_nodes()).collect(),
            };
            let f = graph.features();
            if f.ncols() > 0 {
                f.select(Axis(0), &rows)
            } else {
                let deg = node_degrees(graph.num_nodes(), graph);
                Array2::from_shape_fn((rows.len(), 1), |(i, _)| (1.0 + deg[rows[i]]).ln())
            }
        }
        Dataset::Traffic { readings, .. } => {
            // per-sensor level and spread over the training window only
            let (a, _) = split_points(readings.len());
            let train = readings.slice(0, a.max(1));
            let mean = train.values.mean_axis(Axis(0)).expect("nonempty window");
            let std = train.values.std_axis(Axis(0), 0.0);
            Array2::from_shape_fn((readings.num_sensors(), 2), |(v, j)| if j == 0 { mean[v] } else { std[v] })
        }
    }
}

pub fn cluster(cfg: &RunConfig, data: &Dataset) -> Result<ClusterModel> {
    let x = cluster_inputs(cfg, data);
    if cfg.cluster.k > x.nrows() {
        return Err(CliError::invalid(format!("cluster.k: {} exceeds the {} clustered entities", cfg.cluster.k, x.nrows())));
    }
    Ok(fit_clusters(&x, cfg.cluster.k, &vec![1.0; x.nrows()], cfg.seed_for("cluster"))?)
}

/// A task ready for training, with the matching model shape.
pub enum Prepared {
    Link(LinkTask),
    Node(NodeTask),
    Traffic(TrafficTask),
}

impl Prepared {
    pub fn task(&self) -> &dyn Task {
        match self {
            Prepared::Link(t) => t,
            Prepared::Node(t) => t,
            Prepared::Traffic(t) => t,
        }
    }
}

pub fn prepare(cfg: &RunConfig, data: &Dataset, clusters: &ClusterModel) -> Result<(Prepared, ModelConfig)> {
    let k = clusters.k();
    match (cfg.task, data) {
        (TaskKind::Link, Dataset::Graph { graph, .. }) => {
            let items = item_nodes(graph);
            let index: BTreeMap<usize, usize> = items.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            let seqs = sequences_from_events(graph.events(), &index)?;
            let feats = if graph.features().ncols() > 0 {
                graph.features().select(Axis(0), &items)
            } else {
                Array2::zeros((items.len(), 0))
            };
            let inputs = concatenate(Axis(1), &[feats.view(), one_hot(&clusters.assignment, k).view()])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let task = LinkTask::split_by_user(
                seqs,
                inputs,
                clusters.assignment.clone(),
                cfg.link.max_len,
                cfg.link.ks.clone(),
                cfg.seed_for("split"),
            )?;
            if task.valid.is_empty() || task.test.is_empty() {
                return Err(CliError::invalid("data.events: too few users with two or more interactions for validation and test splits"));
            }
            let mc = ModelConfig {
                encoder: cfg.encoder_config(task.item_inputs.ncols(), k),
                label_dim: 1,
                output_dim: task.num_items(),
            };
            Ok((Prepared::Link(task), mc))
        }
        (TaskKind::Node, Dataset::Graph { graph, labels }) => {
            let labels = labels.clone().ok_or_else(|| CliError::invalid("data.labels: required for the node task"))?;
            let classes = cfg.node.classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
            if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
                return Err(CliError::invalid(format!("node.classes: label {bad} outside {classes} classes")));
            }
            let horizon = graph.events().last().map_or(graph.t0(), |e| e.t) + 1.0;
            let qt = latest_event_times(graph, horizon);
            let task = NodeTask::new(graph.clone(), clusters.assignment.clone(), k, labels, classes, qt)?;
            let mc = ModelConfig {
                encoder: cfg.encoder_config(task.inputs.ncols(), k),
                label_dim: classes,
                output_dim: classes,
            };
            Ok((Prepared::Node(task), mc))
        }
        (TaskKind::Traffic, Dataset::Traffic { readings, roads }) => {
            let task = TrafficTask::from_readings(
                readings,
                roads,
                clusters.assignment.clone(),
                k,
                cfg.traffic.window,
                cfg.traffic.horizons.clone(),
            )?;
            if task.train.is_empty() || task.valid.is_empty() || task.test.is_empty() {
                return Err(CliError::invalid("data.readings: series too short for the window, horizons and splits"));
            }
            let mc = ModelConfig {
                encoder: cfg.encoder_config(task.input_dim(), k),
                label_dim: cfg.traffic.horizons.len(),
                output_dim: 1,
            };
            Ok((Prepared::Traffic(task), mc))
        }
        _ => Err(CliError::Runtime("dataset does not match the task".into())),
    }
}

/// Checkpoint metadata: the task kind and model shape, nothing run-specific,
/// so identical runs produce identical files.
pub fn checkpoint_metadata(kind: TaskKind, mc: &ModelConfig) -> String {
    #[derive(serde::Serialize)]
    struct Meta<'a> {
        task: TaskKind,
        model: &'a ModelConfig,
    }
    toml::to_string(&Meta { task: kind, model: mc }).expect("metadata serializes")
}

/// Restores a model after checking the checkpoint was trained for this task
/// and model shape.
pub fn load_model(path: &Path, kind: TaskKind, mc: &ModelConfig) -> Result<Model> {
    let ck = Checkpoint::load(path)?;
    let meta: toml::Table = toml::from_str(&ck.metadata).map_err(|_| CliError::Runtime(format!("{}: unreadable checkpoint metadata", path.display())))?;
    let task = meta.get("task").and_then(|v| v.as_str()).unwrap_or("?");
    let want = toml::Value::try_from(kind).expect("task kind serializes");
    if Some(task) != want.as_str() {
        return Err(CliError::invalid(format!("checkpoint `{}` was trained for the {task} task, config asks for {kind:?}", path.display())));
    }
    if ck.metadata != checkpoint_metadata(kind, mc) {
        return Err(CliError::invalid(format!(
            "checkpoint `{}` has a different model configuration than the config and data imply",
            path.display()
        )));
    }
    Ok(Model::from_checkpoint(mc.clone(), &ck)?)
}

fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved_config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Dataset summary and a validated copy of the features.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let data = ingest(cfg)?;
    write_snapshot(cfg, &cfg.out)?;
    let mut s = String::from("field,value\n");
    match &data {
        Dataset::Graph { graph, labels } => {
            let ev = graph.events();
            let _ = writeln!(s, "nodes,{}", graph.num_nodes());
            let _ = writeln!(s, "events,{}", ev.len());
            let _ = writeln!(s, "initial_edges,{}", graph.initial_edges().len());
            let _ = writeln!(s, "feature_dim,{}", graph.features().ncols());
            let _ = writeln!(s, "t_first,{}", ev.first().map_or(graph.t0(), |e| e.t));
            let _ = writeln!(s, "t_last,{}", ev.last().map_or(graph.t0(), |e| e.t));
            let _ = writeln!(s, "median_gap,{}", graph.median_interevent_gap());
            if let Some(l) = labels {
                let _ = writeln!(s, "classes,{}", l.iter().max().map_or(0, |m| m + 1));
            }
            ctdg::dyngraph::write_features_binary(cfg.out.join("features.bin"), graph.features())?;
        }
        Dataset::Traffic { readings, roads } => {
            let _ = writeln!(s, "sensors,{}", readings.num_sensors());
            let _ = writeln!(s, "steps,{}", readings.len());
            let _ = writeln!(s, "road_edges,{}", roads.len());
            let _ = writeln!(s, "cadence,{}", readings.cadence().unwrap_or(f64::NAN));
        }
    }
    fs::write(cfg.out.join("ingest_summary.csv"), s)?;
    Ok(())
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterModel> {
    let data = ingest(cfg)?;
    let model = cluster(cfg, &data)?;
    write_snapshot(cfg, &cfg.out)?;
    model.save(cfg.out.join("clusters"))?;
    Ok(model)
}

/// Ingest, cluster and train. Writes `checkpoint.ckpt` (best validation
/// model), `epoch_log.csv`, `clusters/` and `resolved_config.toml`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = ingest(cfg)?;
    let clusters = cluster(cfg, &data)?;
    let (prepared, mc) = prepare(cfg, &data, &clusters)?;
    let tc = cfg.train_config();
    let init = Model::init(mc.clone(), cfg.seed_for("init"))?;
    let outcome = train(prepared.task(), init, &tc)?;
    if let Some(msg) = &outcome.diverged {
        log::warn!("training stopped early: {msg}");
    }
    write_snapshot(cfg, &cfg.out)?;
    clusters.save(cfg.out.join("clusters"))?;
    fs::write(cfg.out.join("epoch_log.csv"), outcome.log_csv())?;
    outcome
        .model
        .to_checkpoint(checkpoint_metadata(cfg.task, &mc))
        .save(cfg.out.join("checkpoint.ckpt"))?;
    Ok(outcome)
}

/// Test-split metrics of a checkpoint, written to `metrics.csv`; traffic
/// also gets `horizons.csv` with one row per horizon, and link tasks a
/// popularity baseline in `baseline_metrics.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricReport> {
    let data = ingest(cfg)?;
    let clusters = cluster(cfg, &data)?;
    let (prepared, mc) = prepare(cfg, &data, &clusters)?;
    let model = load_model(checkpoint, cfg.task, &mc)?;
    write_snapshot(cfg, &cfg.out)?;
    let report = match &prepared {
        Prepared::Link(t) => {
            t.evaluate_popularity(&t.test)?.write(cfg.out.join("baseline_metrics.csv"))?;
            t.evaluate(&model, &t.test)?
        }
        Prepared::Node(t) => t.evaluate(&model, &t.test)?,
        Prepared::Traffic(t) => {
            let r = t.evaluate(&model, &t.test)?;
            let mut s = String::from("horizon,mae,rmse,mape\n");
            for h in &t.horizons {
                let get = |m: &str| r.get(&format!("h{h}_{m}")).unwrap_or(f64::NAN);
                let _ = writeln!(s, "{h},{},{},{}", get("mae"), get("rmse"), get("mape"));
            }
            fs::write(cfg.out.join("horizons.csv"), s)?;
            r
        }
    };
    report.write(cfg.out.join("metrics.csv"))?;
    Ok(report)
}

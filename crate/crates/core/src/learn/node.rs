//! Node classification at each node's query time.
//!
//! Every node `u` is embedded at its query time `t_u` from the events before
//! `t_u`. Training masks a share of the training nodes, giving them the
//! label-aware query `q(y_u)`, and applies cross-entropy over all nodes of
//! the batch. Evaluation disables masking.

use ndarray::{Array1, Array2};

use super::metrics::{evaluate_classification, MetricReport};
use super::program::{run_program, GroupMask, Program, Root, TppProgram, TreeBuilder};
use super::{cross_entropy, head, total_objective, BatchOut, Model, StepContext, Task, TaskKind};
use crate::cam::{MaskPlan, MaskingMode};
use crate::cluster::one_hot;
use crate::dyngraph::DynamicGraph;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tape::Tape;

#[derive(Debug, Clone)]
pub struct NodeTask {
    pub graph: DynamicGraph,
    pub clusters: Vec<usize>,
    /// Layer-0 input per node (features followed by cluster one-hot).
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub query_time: Vec<f64>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub include_self: bool,
}

/// Chronological 70/15/15 split of `nodes` by query time (ties by id).
pub fn chronological_split(nodes: &[usize], query_time: &[f64]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order = nodes.to_vec();
    order.sort_by(|&a, &b| query_time[a].total_cmp(&query_time[b]).then(a.cmp(&b)));
    let n = order.len();
    let a = (n as f64 * 0.70).round() as usize;
    let b = (n as f64 * 0.85).round() as usize;
    (order[..a].to_vec(), order[a..b].to_vec(), order[b..].to_vec())
}

/// Query time of each node: the time of its latest event, so the embedding
/// sees everything strictly before that event. Nodes without events use
/// `horizon`.
pub fn latest_event_times(graph: &DynamicGraph, horizon: f64) -> Vec<f64> {
    let mut out = vec![f64::NAN; graph.num_nodes()];
    for e in graph.events() {
        out[e.u] = e.t;
        out[e.v] = e.t;
    }
    out.into_iter().map(|t| if t.is_nan() { horizon } else { t }).collect()
}

impl NodeTask {
    /// Builds inputs as node features followed by the cluster one-hot and
    /// splits all nodes chronologically by query time.
    pub fn new(
        graph: DynamicGraph,
        clusters: Vec<usize>,
        cluster_count: usize,
        labels: Vec<usize>,
        classes: usize,
        query_time: Vec<f64>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if clusters.len() != n {
            return Err(Error::shape(format!("{} cluster ids for {n} nodes", clusters.len())));
        }
        if let Some(&bad) = clusters.iter().find(|&&c| c >= cluster_count) {
            return Err(Error::invalid(format!("cluster id {bad} outside {cluster_count} clusters")));
        }
        let inputs = ndarray::concatenate(
            ndarray::Axis(1),
            &[graph.features().view(), one_hot(&clusters, cluster_count).view()],
        )
        .map_err(|e| Error::shape(e.to_string()))?;
        let nodes: Vec<usize> = (0..n).collect();
        if query_time.len() != n {
            return Err(Error::shape(format!("{} query times for {n} nodes", query_time.len())));
        }
        let (train, valid, test) = chronological_split(&nodes, &query_time);
        let task = NodeTask {
            graph,
            clusters,
            inputs,
            labels,
            classes,
            query_time,
            train,
            valid,
            test,
            include_self: true,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.labels.len() != n || self.query_time.len() != n || self.inputs.nrows() != n {
            return Err(Error::shape(format!(
                "{n} nodes but {} labels, {} query times, {} input rows",
                self.labels.len(),
                self.query_time.len(),
                self.inputs.nrows()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::invalid(format!("label {bad} outside {} classes", self.classes)));
        }
        Ok(())
    }

    fn builder<'a>(&'a self, layers: usize, masks: &'a [GroupMask], mode: MaskingMode) -> TreeBuilder<'a> {
        TreeBuilder {
            graph: &self.graph,
            clusters: &self.clusters,
            layers,
            include_self: self.include_self,
            masks,
            mode,
        }
    }

    fn roots(&self, nodes: &[usize], group: Option<usize>) -> Vec<Root> {
        nodes
            .iter()
            .map(|&u| Root {
                node: u,
                time: self.query_time[u],
                cutoff: self.query_time[u],
                group,
            })
            .collect()
    }

    /// Node-level plan over the whole graph; only training nodes can be
    /// masked queries.
    fn plan(&self, ratio: f64, seed: u64) -> Result<MaskPlan> {
        let plain = self.builder(1, &[], MaskingMode::LabelAware);
        let base = (0..self.graph.num_nodes())
            .map(|u| plain.node_query(u, self.query_time[u], self.query_time[u], None))
            .collect::<Result<Vec<_>>>()?;
        let mut eligible = vec![false; self.graph.num_nodes()];
        for &u in &self.train {
            eligible[u] = true;
        }
        MaskPlan::for_nodes(&base, ratio, seed, Some(&eligible))
    }

    /// Class logits for `nodes` at their query times, masking disabled.
    pub fn logits(&self, model: &Model, nodes: &[usize]) -> Result<Array2<f64>> {
        let b = self.builder(model.config.encoder.layers, &[], MaskingMode::LabelAware);
        let tree = b.build(&self.roots(nodes, None))?;
        let h0 = super::program::stack_inputs(tree.h0_slots(), self.inputs.ncols(), |r| {
            Ok(self.inputs.row(r.node).to_owned())
        })?;
        let program = Program {
            h0,
            layers: tree.layers,
            labels: None,
            token: false,
            tpp: None,
        };
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let fwd = run_program(&mut tape, &model.config.encoder, &bound, &program)?;
        let logits = head(&mut tape, &bound, fwd.h)?;
        Ok(tape.value(logits).clone())
    }

    pub fn predict(&self, model: &Model, nodes: &[usize]) -> Result<Vec<usize>> {
        let logits = self.logits(model, nodes)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r.to_owned())).collect())
    }

    pub fn evaluate(&self, model: &Model, nodes: &[usize]) -> Result<MetricReport> {
        if nodes.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let pred = self.predict(model, nodes)?;
        let truth: Vec<usize> = nodes.iter().map(|&u| self.labels[u]).collect();
        evaluate_classification(&pred, &truth, self.classes)
    }
}

fn argmax(row: Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

impl Task for NodeTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Node
    }

    fn num_train(&self) -> usize {
        self.train.len()
    }

    fn batch_objective(
        &self,
        model: &Model,
        tape: &mut Tape,
        bound: &Bound<'_>,
        batch: &[usize],
        ctx: &StepContext,
    ) -> Result<BatchOut> {
        let nodes: Vec<usize> = batch.iter().map(|&i| self.train[i]).collect();
        let masks = if ctx.mask_ratio > 0.0 {
            vec![GroupMask {
                plan: self.plan(ctx.mask_ratio, ctx.seed)?,
                label_offset: 0,
            }]
        } else {
            Vec::new()
        };
        let group = (!masks.is_empty()).then_some(0);
        let b = self.builder(model.config.encoder.layers, &masks, ctx.masking);
        let roots = self.roots(&nodes, group);
        let tree = b.build(&roots)?;
        let mut tpp = TppProgram::default();
        if ctx.gamma > 0.0 {
            let feed = tree.feed_index();
            for r in &roots {
                b.tpp_for_root(&mut tpp, r, &feed, ctx.tpp_max_events, ctx.integrator)?;
            }
        }
        let labels = masks.first().map(|m| {
            let mut y = Array2::zeros((m.plan.masked_queries.len(), self.classes));
            for (j, &u) in m.plan.masked_queries.iter().enumerate() {
                y[[j, self.labels[u]]] = 1.0;
            }
            y
        });
        let h0 = super::program::stack_inputs(tree.h0_slots(), self.inputs.ncols(), |r| {
            Ok(self.inputs.row(r.node).to_owned())
        })?;
        let program = Program {
            h0,
            layers: tree.layers,
            labels,
            token: ctx.masking == MaskingMode::SpecialToken && !masks.is_empty(),
            tpp: (tpp.nodes > 0).then_some(tpp),
        };
        let fwd = run_program(tape, &model.config.encoder, bound, &program)?;
        let logits = head(tape, bound, fwd.h)?;
        let targets: Vec<usize> = nodes.iter().map(|&u| self.labels[u]).collect();
        let loss = cross_entropy(tape, logits, &targets);
        let objective = total_objective(tape, loss, fwd.tpp, ctx.gamma);
        Ok(BatchOut {
            objective,
            loss,
            tpp: fwd.tpp,
        })
    }

    fn validation_metric(&self, model: &Model) -> Result<f64> {
        let r = self.evaluate(model, &self.valid)?;
        Ok(r.get("macro_f1").unwrap_or(f64::NAN))
    }

    fn higher_is_better(&self) -> bool {
        true
    }

    fn evaluate_test(&self, model: &Model) -> Result<MetricReport> {
        self.evaluate(model, &self.test)
    }
}

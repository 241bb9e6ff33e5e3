//! Forward programs: the per-layer query lists a task hands to the encoder,
//! and the builders that derive them from graphs and event sequences.
//!
//! Layer `l` queries address the slots produced by layer `l - 1`; layer 0
//! queries address rows of the input matrix. Node tasks unroll a temporal
//! computation tree per root `(node, time, history cutoff)`, deduplicating
//! identical slots. Sequence tasks keep one slot per position at every layer.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{Array1, Array2};

use crate::cam::{MaskPlan, MaskingMode};
use crate::dyngraph::DynamicGraph;
use crate::encoder::{layer_forward, EncoderConfig, KeyRef, LayerExtras, LayerVars, QuerySource, QuerySpec};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tape::{Tape, Var};
use crate::tpple::{log_likelihood_tape, Integrator, Quadrature};

pub const LABEL_EMBEDDING: &str = "cam.w_lab";
pub const MASK_TOKEN: &str = "cam.token";

/// Point-process regularizer queries, evaluated by the last layer on the
/// slots that feed it.
#[derive(Debug, Clone, Default)]
pub struct TppProgram {
    pub queries: Vec<QuerySpec>,
    /// `(query row, cluster)` of each observed event.
    pub observed: Vec<(usize, usize)>,
    /// `(query row, weight)` of each quadrature point.
    pub integral: Vec<(usize, f64)>,
    /// Nodes contributing at least one event.
    pub nodes: usize,
}

impl TppProgram {
    /// Appends one node's likelihood terms. `query_at(τ)` builds the query of
    /// the node at `τ`; `events` are `(cluster, time)` ascending.
    pub fn push_node(
        &mut self,
        events: &[(usize, f64)],
        integrator: Integrator,
        mut query_at: impl FnMut(f64) -> Result<QuerySpec>,
    ) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        for &(k, t) in events {
            self.observed.push((self.queries.len(), k));
            self.queries.push(query_at(t)?);
        }
        let grid: Vec<f64> = std::iter::once(events[0].1).chain(events.iter().map(|e| e.1)).collect();
        let quad = Quadrature::over(&grid, integrator)?;
        for (&t, &w) in quad.points.iter().zip(&quad.weights) {
            self.integral.push((self.queries.len(), w));
            self.queries.push(query_at(t)?);
        }
        self.nodes += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    /// Layer-0 slot inputs.
    pub h0: Array2<f64>,
    pub layers: Vec<Vec<QuerySpec>>,
    /// Label rows of masked queries (`m × label_dim`).
    pub labels: Option<Array2<f64>>,
    pub token: bool,
    pub tpp: Option<TppProgram>,
}

pub struct ForwardOut {
    /// Final embeddings, one row per last-layer query.
    pub h: Var,
    /// Mean point-process log-likelihood over contributing nodes.
    pub tpp: Option<Var>,
    /// Key rows read by each layer (for zero-compute checks).
    pub key_rows: Vec<Rc<Vec<usize>>>,
    /// Last-layer queries with no keys.
    pub empty: Vec<usize>,
}

/// Records `prog` on `tape` using the encoder tensors bound in `bound`.
pub fn run_program(tape: &mut Tape, cfg: &EncoderConfig, bound: &Bound<'_>, prog: &Program) -> Result<ForwardOut> {
    if prog.layers.len() != cfg.layers {
        return Err(Error::shape(format!(
            "program has {} layers, encoder has {}",
            prog.layers.len(),
            cfg.layers
        )));
    }
    let vars = (0..cfg.layers)
        .map(|l| LayerVars::bind(bound, l))
        .collect::<Result<Vec<_>>>()?;
    let overrides = match &prog.labels {
        Some(y) if y.nrows() > 0 => {
            let y = tape.constant(y.clone());
            Some(tape.matmul(y, bound.var(LABEL_EMBEDDING)?))
        }
        _ => None,
    };
    let token = if prog.token { Some(bound.var(MASK_TOKEN)?) } else { None };
    let extras = LayerExtras { overrides, token };

    let mut h = tape.constant(prog.h0.clone());
    let mut feed = h;
    let mut key_rows = Vec::new();
    let mut empty = Vec::new();
    for (l, queries) in prog.layers.iter().enumerate() {
        let out = layer_forward(tape, cfg, &vars[l], h, queries, extras)?;
        key_rows.push(out.pairs.key_row.clone());
        if l + 1 == cfg.layers {
            empty = out.empty;
        } else {
            feed = out.h;
        }
        h = out.h;
    }
    let tpp = match &prog.tpp {
        Some(t) if t.nodes > 0 => {
            let last = &vars[cfg.layers - 1];
            let out = layer_forward(tape, cfg, last, feed, &t.queries, LayerExtras::default())?;
            let lam = out
                .intensity
                .ok_or_else(|| Error::invalid("point-process term needs learned intensities"))?;
            // quadrature weights are in seconds, intensities per time unit
            let integral: Vec<(usize, f64)> = t.integral.iter().map(|&(q, w)| (q, w / cfg.time_unit)).collect();
            let r = log_likelihood_tape(tape, lam, &t.observed, &integral);
            Some(tape.scale(r, 1.0 / t.nodes as f64))
        }
        _ => None,
    };
    Ok(ForwardOut { h, tpp, key_rows, empty })
}

/// One top-level query of a computation tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub node: usize,
    /// Time the embedding is requested for.
    pub time: f64,
    /// Only events strictly before this time are visible.
    pub cutoff: f64,
    /// Index into the mask groups, if masked.
    pub group: Option<usize>,
}

/// Node-level mask plan for one group of roots. Override rows are
/// `label_offset + j` for the plan's `j`-th masked node.
#[derive(Debug, Clone)]
pub struct GroupMask {
    pub plan: MaskPlan,
    pub label_offset: usize,
}

pub struct TreeBuilder<'a> {
    pub graph: &'a DynamicGraph,
    pub clusters: &'a [usize],
    pub layers: usize,
    pub include_self: bool,
    pub masks: &'a [GroupMask],
    pub mode: MaskingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotKey {
    node: usize,
    time: u64,
    cutoff: u64,
    group: Option<usize>,
}

impl SlotKey {
    fn of(node: usize, r: &Root) -> Self {
        SlotKey {
            node,
            time: r.time.to_bits(),
            cutoff: r.cutoff.to_bits(),
            group: r.group,
        }
    }
}

/// Result of unrolling.
pub struct Tree {
    /// `levels[0]` are the input slots, `levels[l]` the outputs of layer
    /// `l - 1`; the last level is the roots.
    pub levels: Vec<Vec<Root>>,
    pub layers: Vec<Vec<QuerySpec>>,
}

impl Tree {
    pub fn h0_slots(&self) -> &[Root] {
        &self.levels[0]
    }

    /// Index of every slot feeding the last layer.
    pub fn feed_index(&self) -> HashMap<SlotKey, usize> {
        self.levels[self.levels.len() - 2]
            .iter()
            .enumerate()
            .map(|(i, r)| (SlotKey::of(r.node, r), i))
            .collect()
    }
}

impl TreeBuilder<'_> {
    fn cluster(&self, v: usize) -> usize {
        self.clusters.get(v).copied().unwrap_or(0)
    }

    /// Query of `node` at `time` over events before `cutoff`, with key slots
    /// holding node ids and masking applied.
    pub fn node_query(&self, node: usize, time: f64, cutoff: f64, group: Option<usize>) -> Result<QuerySpec> {
        let hist = self.graph.neighborhood_at(node, cutoff, self.clusters)?;
        let mut keys: Vec<KeyRef> = hist
            .entries
            .iter()
            .map(|e| KeyRef::new(e.neighbor, e.time, e.cluster))
            .collect();
        if self.include_self {
            keys.push(KeyRef::new(node, hist.last_event_time, self.cluster(node)));
        }
        keys.sort_by_key(|k| k.slot);
        let mut spec = QuerySpec {
            source: QuerySource::Slot(node),
            time,
            last_event: hist.last_event_time.min(time),
            keys,
        };
        if let Some(g) = group.and_then(|g| self.masks.get(g)) {
            g.plan.rewrite(node, &mut spec, self.mode);
            if let QuerySource::Override(j) = spec.source {
                spec.source = QuerySource::Override(g.label_offset + j);
            }
        }
        Ok(spec)
    }

    pub fn build(&self, roots: &[Root]) -> Result<Tree> {
        let mut level: Vec<Root> = roots.to_vec();
        let mut levels_rev = vec![level.clone()];
        let mut layers_rev: Vec<Vec<QuerySpec>> = Vec::with_capacity(self.layers);
        for _ in 0..self.layers {
            let mut index: HashMap<SlotKey, usize> = HashMap::new();
            let mut children: Vec<Root> = Vec::new();
            let mut child = |node: usize, r: &Root| -> usize {
                *index.entry(SlotKey::of(node, r)).or_insert_with(|| {
                    children.push(Root { node, ..*r });
                    children.len() - 1
                })
            };
            let mut queries = Vec::with_capacity(level.len());
            for r in &level {
                let mut spec = self.node_query(r.node, r.time, r.cutoff, r.group)?;
                let own = child(r.node, r);
                if let QuerySource::Slot(_) = spec.source {
                    spec.source = QuerySource::Slot(own);
                }
                for k in spec.keys.iter_mut().filter(|k| !k.token) {
                    k.slot = child(k.slot, r);
                }
                queries.push(spec);
            }
            layers_rev.push(queries);
            levels_rev.push(children.clone());
            level = children;
        }
        layers_rev.reverse();
        levels_rev.reverse();
        Ok(Tree {
            levels: levels_rev,
            layers: layers_rev,
        })
    }

    /// Point-process queries for `root.node`, addressing the slots that feed
    /// the last layer (`feed` lists them). Keys absent from `feed` are
    /// skipped, which keeps masked keys out.
    pub fn tpp_for_root(
        &self,
        tpp: &mut TppProgram,
        root: &Root,
        feed: &HashMap<SlotKey, usize>,
        max_events: usize,
        integrator: Integrator,
    ) -> Result<()> {
        let events = self.graph.events_before(root.node, root.cutoff)?;
        let start = events.len().saturating_sub(max_events);
        let events: Vec<(usize, f64)> = events[start..].iter().map(|&(v, t)| (self.cluster(v), t)).collect();
        let own = match feed.get(&SlotKey::of(root.node, root)) {
            Some(&s) => s,
            None => return Ok(()),
        };
        let removed: &[usize] = root
            .group
            .and_then(|g| self.masks.get(g))
            .and_then(|g| g.plan.masked_keys.get(root.node))
            .map_or(&[], Vec::as_slice);
        tpp.push_node(&events, integrator, |tau| {
            let hist = self.graph.neighborhood_at(root.node, tau, self.clusters)?;
            let mut keys: Vec<KeyRef> = hist
                .entries
                .iter()
                .filter(|e| removed.binary_search(&e.neighbor).is_err())
                .filter_map(|e| {
                    feed.get(&SlotKey::of(e.neighbor, root))
                        .map(|&s| KeyRef::new(s, e.time, e.cluster))
                })
                .collect();
            keys.sort_by_key(|k| k.slot);
            Ok(QuerySpec {
                source: QuerySource::Slot(own),
                time: tau,
                last_event: hist.last_event_time.min(tau),
                keys,
            })
        })
    }
}

/// Builds the layer-0 matrix from per-slot inputs.
pub fn stack_inputs(slots: &[Root], din: usize, mut input: impl FnMut(&Root) -> Result<Array1<f64>>) -> Result<Array2<f64>> {
    let mut h0 = Array2::zeros((slots.len(), din));
    for (i, r) in slots.iter().enumerate() {
        let x = input(r)?;
        if x.len() != din {
            return Err(Error::shape(format!("input row has {} entries, expected {din}", x.len())));
        }
        h0.row_mut(i).assign(&x);
    }
    Ok(h0)
}

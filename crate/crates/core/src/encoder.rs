//! Attention–intensity–attention encoder.
//!
//! Each layer scores a query against its (time-stamped) keys, pools the value
//! vectors into an endogenous state `s_u`, turns `s_u` and the elapsed time
//! since the query's previous event into one conditional intensity per key
//! cluster, and finally re-pools the values with every attention weight
//! multiplied by the intensity of that key's cluster.
//!
//! The batched forward pass is recorded on a [`Tape`]; the free functions
//! (`attention_scores`, `endogenous_encode`, `conditional_intensity`) are the
//! per-query reference forms of the same computations.

use std::rc::Rc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cam::temporal_encoding;
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, Bound, ParamStore};
use crate::tape::{leaky_relu, softplus, Tape, Var};

pub const DEFAULT_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    #[serde(rename = "sa")]
    SelfAttention,
    Gat,
    #[serde(rename = "gatv2")]
    GatV2,
}

/// How the per-cluster intensity enters the modulated attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntensityMode {
    Learned,
    /// Every intensity pinned to the given value (1.0 recovers plain attention).
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub variant: AttentionVariant,
    pub clusters: usize,
    /// Width of the layer-0 input, i.e. feature count plus cluster count.
    pub input_dim: usize,
    /// LeakyReLU slope used for GAT scoring and the intensity hidden layer.
    pub slope: f64,
    /// Seconds per model time unit, for elapsed times and temporal encodings.
    pub time_unit: f64,
    pub intensity: IntensityMode,
    pub temporal_encoding: bool,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, clusters: usize) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            dim: 16,
            variant: AttentionVariant::SelfAttention,
            clusters,
            input_dim,
            slope: DEFAULT_SLOPE,
            time_unit: 1.0,
            intensity: IntensityMode::Learned,
            temporal_encoding: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "embedding size {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.temporal_encoding && self.dim % 2 != 0 {
            return Err(Error::invalid("temporal encodings need an even embedding size"));
        }
        if self.clusters == 0 {
            return Err(Error::invalid("cluster count must be positive"));
        }
        if !(self.time_unit > 0.0) {
            return Err(Error::invalid("time unit must be positive"));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.dim
        }
    }
}

pub fn layer_name(layer: usize, tensor: &str) -> String {
    format!("layer{layer}.{tensor}")
}

/// Adds freshly initialized encoder tensors to `store`.
///
/// Per layer: `w_v`, `w_k` (d×d_in), `w_q` (SA) or `a_q`/`a_k` (1×d, GAT
/// variants), and the per-cluster intensity block `w_g` ((K·d)×d), `b_g`,
/// `w_int` (1×K·d), `mu`, `log_phi` (1×K). The timescale is stored as its
/// logarithm so it stays positive.
pub fn init_encoder_params(cfg: &EncoderConfig, rng: &mut impl Rng, store: &mut ParamStore) {
    let d = cfg.dim;
    let k = cfg.clusters;
    for l in 0..cfg.layers {
        let din = cfg.layer_input_dim(l);
        store.insert(layer_name(l, "w_v"), glorot(d, din, rng));
        store.insert(layer_name(l, "w_k"), glorot(d, din, rng));
        match cfg.variant {
            AttentionVariant::SelfAttention => {
                store.insert(layer_name(l, "w_q"), glorot(d, din, rng));
            }
            AttentionVariant::Gat | AttentionVariant::GatV2 => {
                store.insert(layer_name(l, "a_q"), glorot(1, d, rng));
                store.insert(layer_name(l, "a_k"), glorot(1, d, rng));
            }
        }
        store.insert(layer_name(l, "w_g"), glorot(k * d, d, rng));
        store.insert(layer_name(l, "b_g"), uniform(1, k * d, 0.1, rng));
        store.insert(layer_name(l, "w_int"), uniform(1, k * d, 0.1, rng));
        store.insert(layer_name(l, "mu"), Array2::zeros((1, k)));
        store.insert(layer_name(l, "log_phi"), Array2::zeros((1, k)));
    }
}

/// Typed view of one layer's tensors.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_v: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_q: Option<Array2<f64>>,
    pub a_q: Option<Array2<f64>>,
    pub a_k: Option<Array2<f64>>,
    pub w_g: Array2<f64>,
    pub b_g: Array2<f64>,
    pub w_int: Array2<f64>,
    pub mu: Array2<f64>,
    pub log_phi: Array2<f64>,
}

impl LayerParams {
    pub fn from_store(store: &ParamStore, layer: usize) -> Result<Self> {
        let get = |n: &str| store.get(&layer_name(layer, n)).cloned();
        let opt = |n: &str| store.get(&layer_name(layer, n)).ok().cloned();
        Ok(LayerParams {
            w_v: get("w_v")?,
            w_k: get("w_k")?,
            w_q: opt("w_q"),
            a_q: opt("a_q"),
            a_k: opt("a_k"),
            w_g: get("w_g")?,
            b_g: get("b_g")?,
            w_int: get("w_int")?,
            mu: get("mu")?,
            log_phi: get("log_phi")?,
        })
    }

    pub fn write_to(&self, store: &mut ParamStore, layer: usize) {
        store.insert(layer_name(layer, "w_v"), self.w_v.clone());
        store.insert(layer_name(layer, "w_k"), self.w_k.clone());
        if let Some(w) = &self.w_q {
            store.insert(layer_name(layer, "w_q"), w.clone());
        }
        if let Some(a) = &self.a_q {
            store.insert(layer_name(layer, "a_q"), a.clone());
        }
        if let Some(a) = &self.a_k {
            store.insert(layer_name(layer, "a_k"), a.clone());
        }
        store.insert(layer_name(layer, "w_g"), self.w_g.clone());
        store.insert(layer_name(layer, "b_g"), self.b_g.clone());
        store.insert(layer_name(layer, "w_int"), self.w_int.clone());
        store.insert(layer_name(layer, "mu"), self.mu.clone());
        store.insert(layer_name(layer, "log_phi"), self.log_phi.clone());
    }

    pub fn clusters(&self) -> usize {
        self.mu.ncols()
    }

    /// Intensity parameters of cluster `k`: `W_G_k` (d×d), `b_G_k`, `w_k`,
    /// `mu_k` and the timescale `phi_k`.
    pub fn cluster_intensity(&self, k: usize) -> ClusterIntensity<'_> {
        let d = self.w_g.ncols();
        ClusterIntensity {
            w_g: self.w_g.slice(s![k * d..(k + 1) * d, ..]),
            b_g: self.b_g.slice(s![0, k * d..(k + 1) * d]),
            w: self.w_int.slice(s![0, k * d..(k + 1) * d]),
            mu: self.mu[[0, k]],
            phi: self.log_phi[[0, k]].exp(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClusterIntensity<'a> {
    pub w_g: ArrayView2<'a, f64>,
    pub b_g: ArrayView1<'a, f64>,
    pub w: ArrayView1<'a, f64>,
    pub mu: f64,
    pub phi: f64,
}

/// `H_0 = [X_f ‖ X_c]`.
pub fn encode_input(features: &Array2<f64>, clusters_one_hot: &Array2<f64>) -> Result<Array2<f64>> {
    if features.nrows() != clusters_one_hot.nrows() {
        return Err(Error::shape(format!(
            "{} feature rows vs {} cluster rows",
            features.nrows(),
            clusters_one_hot.nrows()
        )));
    }
    Ok(ndarray::concatenate![ndarray::Axis(1), features.view(), clusters_one_hot.view()])
}

/// Value vectors, one row per node: `V = H W_Vᵀ`.
pub fn values(h: &Array2<f64>, w_v: &Array2<f64>) -> Result<Array2<f64>> {
    if h.ncols() != w_v.ncols() {
        return Err(Error::shape(format!(
            "input width {} does not match value transform {}x{}",
            h.ncols(),
            w_v.nrows(),
            w_v.ncols()
        )));
    }
    Ok(h.dot(&w_v.t()))
}

/// Raw scores `e_{u,i}` of one query against each key (single head).
///
/// SA: `qᵀk/√d`. GAT: `LeakyReLU(a_qᵀq + a_kᵀk)`. GATv2:
/// `a_qᵀLeakyReLU(q) + a_kᵀLeakyReLU(k)`. For the GAT forms `query` is the
/// query node's own key embedding and `attn = (a_q, a_k)` splits the `2d`
/// attention vector.
pub fn attention_scores(
    variant: AttentionVariant,
    query: ArrayView1<f64>,
    keys: ArrayView2<f64>,
    attn: Option<(ArrayView1<f64>, ArrayView1<f64>)>,
    slope: f64,
) -> Vec<f64> {
    let d = query.len();
    match variant {
        AttentionVariant::SelfAttention => {
            let scale = 1.0 / (d as f64).sqrt();
            keys.rows().into_iter().map(|k| query.dot(&k) * scale).collect()
        }
        AttentionVariant::Gat => {
            let (aq, ak) = attn.expect("GAT scoring needs an attention vector");
            let qs = aq.dot(&query);
            keys.rows()
                .into_iter()
                .map(|k| leaky_relu(qs + ak.dot(&k), slope))
                .collect()
        }
        AttentionVariant::GatV2 => {
            let (aq, ak) = attn.expect("GATv2 scoring needs an attention vector");
            let qs: f64 = aq.iter().zip(query.iter()).map(|(a, x)| a * leaky_relu(*x, slope)).sum();
            keys.rows()
                .into_iter()
                .map(|k| qs + ak.iter().zip(k.iter()).map(|(a, x)| a * leaky_relu(*x, slope)).sum::<f64>())
                .collect()
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Softmax-weighted sum of value rows. Returns the zero vector and `false`
/// when there are no neighbors.
pub fn endogenous_encode(scores: &[f64], values: ArrayView2<f64>) -> (Array1<f64>, bool) {
    let mut out = Array1::zeros(values.ncols());
    if scores.is_empty() {
        return (out, false);
    }
    for (w, v) in softmax(scores).iter().zip(values.rows()) {
        out.scaled_add(*w, &v);
    }
    (out, true)
}

/// `φ·log(1 + exp(x/φ))` in overflow-free form.
pub fn scaled_softplus(x: f64, phi: f64) -> f64 {
    phi * softplus(x / phi)
}

/// `λ*_k(t) = f_k(w_kᵀ σ(W_G_k s_u + b_G_k (t − t̄_u)) + μ_k)`.
///
/// `t` and `t_bar` are raw timestamps; the elapsed time is divided by
/// `time_unit`.
pub fn conditional_intensity(
    s_u: ArrayView1<f64>,
    t: f64,
    t_bar: f64,
    p: &ClusterIntensity<'_>,
    slope: f64,
    time_unit: f64,
) -> Result<f64> {
    if t < t_bar {
        return Err(Error::TimeOrder { t, last: t_bar });
    }
    if !(p.phi > 0.0) {
        return Err(Error::invalid("intensity timescale must be positive"));
    }
    let dt = (t - t_bar) / time_unit;
    let pre = p.w_g.dot(&s_u) + &(&p.b_g * dt);
    let g = pre.mapv(|x| leaky_relu(x, slope));
    Ok(scaled_softplus(p.w.dot(&g) + p.mu, p.phi))
}

/// Where a query's scoring vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    /// Projection of the slot's own embedding.
    Slot(usize),
    /// Row of the caller-supplied override matrix (label-aware queries).
    Override(usize),
    /// The shared mask token.
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRef {
    pub slot: usize,
    /// Time of the latest event on the (query, key) pair.
    pub time: f64,
    pub cluster: usize,
    /// Key replaced by the shared mask token.
    pub token: bool,
}

impl KeyRef {
    pub fn new(slot: usize, time: f64, cluster: usize) -> Self {
        KeyRef {
            slot,
            time,
            cluster,
            token: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub source: QuerySource,
    /// Time the embedding is requested for.
    pub time: f64,
    /// Time of the query's previous event (`t̄_u`).
    pub last_event: f64,
    pub keys: Vec<KeyRef>,
}

impl QuerySpec {
    /// Sorts keys by slot id so reductions run in a canonical order.
    pub fn canonical(mut self) -> Self {
        self.keys
            .sort_by(|a, b| (a.token, a.slot).cmp(&(b.token, b.slot)).then(a.time.total_cmp(&b.time)));
        self
    }
}

/// Flattened (query, key) pairs of one attention pass.
#[derive(Debug, Clone)]
pub struct PairIndex {
    pub query_of_pair: Rc<Vec<usize>>,
    /// Row of the key/value matrix each pair reads (`n_slots` for the token).
    pub key_row: Rc<Vec<usize>>,
    pub cluster_at: Rc<Vec<(usize, usize)>>,
    pub key_times: Vec<f64>,
    pub queries: usize,
}

impl PairIndex {
    pub fn build(queries: &[QuerySpec], n_slots: usize, clusters: usize) -> Result<Self> {
        let mut qop = Vec::new();
        let mut krow = Vec::new();
        let mut cat = Vec::new();
        let mut times = Vec::new();
        for (q, spec) in queries.iter().enumerate() {
            for key in &spec.keys {
                if key.cluster >= clusters {
                    return Err(Error::invalid(format!("key cluster {} >= {clusters}", key.cluster)));
                }
                let row = if key.token {
                    n_slots
                } else if key.slot < n_slots {
                    key.slot
                } else {
                    return Err(Error::UnknownNode(key.slot));
                };
                qop.push(q);
                krow.push(row);
                cat.push((q, key.cluster));
                times.push(key.time);
            }
        }
        Ok(PairIndex {
            query_of_pair: Rc::new(qop),
            key_row: Rc::new(krow),
            cluster_at: Rc::new(cat),
            key_times: times,
            queries: queries.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.query_of_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_of_pair.is_empty()
    }
}

/// Tape handles for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_v: Var,
    pub w_k: Var,
    pub w_q: Option<Var>,
    pub a_q: Option<Var>,
    pub a_k: Option<Var>,
    pub w_g: Var,
    pub b_g: Var,
    pub w_int: Var,
    pub mu: Var,
    pub log_phi: Var,
}

impl LayerVars {
    pub fn bind(bound: &Bound<'_>, layer: usize) -> Result<Self> {
        let get = |n: &str| bound.var(&layer_name(layer, n));
        let opt = |n: &str| bound.var(&layer_name(layer, n)).ok();
        Ok(LayerVars {
            w_v: get("w_v")?,
            w_k: get("w_k")?,
            w_q: opt("w_q"),
            a_q: opt("a_q"),
            a_k: opt("a_k"),
            w_g: get("w_g")?,
            b_g: get("b_g")?,
            w_int: get("w_int")?,
            mu: get("mu")?,
            log_phi: get("log_phi")?,
        })
    }
}

/// Extra inputs of one attention pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerExtras {
    /// Label-aware query embeddings (`m×d`) addressed by [`QuerySource::Override`].
    pub overrides: Option<Var>,
    /// Shared `1×d` mask token for [`QuerySource::Token`] queries and token keys.
    pub token: Option<Var>,
}

pub struct LayerOutput {
    /// Intensity-modulated output, one row per query.
    pub h: Var,
    /// Plain attention pooling `s_u`, one row per query.
    pub endogenous: Var,
    /// `Q×K` intensities (absent when pinned to a constant).
    pub intensity: Option<Var>,
    /// `P×H` attention weights.
    pub attention: Var,
    pub pairs: PairIndex,
    /// Queries that had no keys.
    pub empty: Vec<usize>,
}

/// Records one encoder layer on the tape.
///
/// `h_prev` has one row per slot. Each query pools the rows named by its keys;
/// intensities are computed once per (query, cluster) and shared by all of
/// that query's keys in the cluster.
pub fn layer_forward(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    vars: &LayerVars,
    h_prev: Var,
    queries: &[QuerySpec],
    extras: LayerExtras,
) -> Result<LayerOutput> {
    let (n_slots, din) = tape.shape(h_prev);
    if din != tape.shape(vars.w_v).1 {
        return Err(Error::shape(format!(
            "layer input width {din} does not match value transform width {}",
            tape.shape(vars.w_v).1
        )));
    }
    let d = cfg.dim;
    let dh = cfg.head_dim();
    let nq = queries.len();
    let pairs = PairIndex::build(queries, n_slots, cfg.clusters)?;

    let v = tape.matmul_bt(h_prev, vars.w_v);
    let k = tape.matmul_bt(h_prev, vars.w_k);
    let q_proj = match cfg.variant {
        AttentionVariant::SelfAttention => {
            let w_q = vars.w_q.ok_or_else(|| Error::Format("SA layer without w_q".into()))?;
            tape.matmul_bt(h_prev, w_q)
        }
        _ => k,
    };
    let (v_all, k_all) = match extras.token {
        Some(tok) => (tape.concat_rows(&[v, tok]), tape.concat_rows(&[k, tok])),
        None => (v, k),
    };

    // query vectors: [projections | overrides | token]
    let n_over = extras.overrides.map_or(0, |o| tape.shape(o).0);
    let mut q_parts = vec![q_proj];
    if let Some(o) = extras.overrides {
        q_parts.push(o);
    }
    if let Some(tok) = extras.token {
        q_parts.push(tok);
    }
    let q_all = if q_parts.len() == 1 {
        q_proj
    } else {
        tape.concat_rows(&q_parts)
    };
    let mut q_rows = Vec::with_capacity(nq);
    for spec in queries {
        let row = match spec.source {
            QuerySource::Slot(s) if s < n_slots => s,
            QuerySource::Slot(s) => return Err(Error::UnknownNode(s)),
            QuerySource::Override(r) if r < n_over => n_slots + r,
            QuerySource::Override(r) => {
                return Err(Error::invalid(format!("query override row {r} out of range")))
            }
            QuerySource::Token if extras.token.is_some() => n_slots + n_over,
            QuerySource::Token => return Err(Error::invalid("token query without a mask token")),
        };
        q_rows.push(row);
    }
    let mut qvec = tape.gather_rows(q_all, Rc::new(q_rows));
    let mut kp = tape.gather_rows(k_all, pairs.key_row.clone());
    if cfg.temporal_encoding {
        let mut q_te = Array2::zeros((nq, d));
        for (i, spec) in queries.iter().enumerate() {
            q_te.row_mut(i).assign(&temporal_encoding(spec.time / cfg.time_unit, d));
        }
        let mut k_te = Array2::zeros((pairs.len(), d));
        for (p, &t) in pairs.key_times.iter().enumerate() {
            k_te.row_mut(p).assign(&temporal_encoding(t / cfg.time_unit, d));
        }
        let q_te = tape.constant(q_te);
        let k_te = tape.constant(k_te);
        qvec = tape.add(qvec, q_te);
        kp = tape.add(kp, k_te);
    }
    let qp = tape.gather_rows(qvec, pairs.query_of_pair.clone());

    let scores = match cfg.variant {
        AttentionVariant::SelfAttention => {
            let prod = tape.mul(qp, kp);
            let dots = tape.block_sum(prod, dh);
            tape.scale(dots, 1.0 / (dh as f64).sqrt())
        }
        AttentionVariant::Gat | AttentionVariant::GatV2 => {
            let a_q = vars.a_q.ok_or_else(|| Error::Format("GAT layer without a_q".into()))?;
            let a_k = vars.a_k.ok_or_else(|| Error::Format("GAT layer without a_k".into()))?;
            let (qin, kin) = if cfg.variant == AttentionVariant::GatV2 {
                (tape.leaky_relu(qp, cfg.slope), tape.leaky_relu(kp, cfg.slope))
            } else {
                (qp, kp)
            };
            let qa = tape.mul_row(qin, a_q);
            let qs = tape.block_sum(qa, dh);
            let ka = tape.mul_row(kin, a_k);
            let ks = tape.block_sum(ka, dh);
            let sum = tape.add(qs, ks);
            if cfg.variant == AttentionVariant::Gat {
                tape.leaky_relu(sum, cfg.slope)
            } else {
                sum
            }
        }
    };

    let alpha = tape.segment_softmax(scores, pairs.query_of_pair.clone(), nq);
    let vp = tape.gather_rows(v_all, pairs.key_row.clone());
    let alpha_x = tape.block_expand(alpha, dh);
    let weighted = tape.mul(alpha_x, vp);
    let endogenous = tape.segment_sum(weighted, pairs.query_of_pair.clone(), nq);

    let (h, intensity) = match cfg.intensity {
        IntensityMode::Constant(c) => {
            let lam = tape.constant(Array2::from_elem((pairs.len(), 1), c));
            let mod_alpha = tape.mul_col(alpha, lam);
            let mx = tape.block_expand(mod_alpha, dh);
            let w = tape.mul(mx, vp);
            (tape.segment_sum(w, pairs.query_of_pair.clone(), nq), None)
        }
        IntensityMode::Learned => {
            let mut dt = Array2::zeros((nq, 1));
            for (i, spec) in queries.iter().enumerate() {
                if spec.time < spec.last_event {
                    return Err(Error::TimeOrder {
                        t: spec.time,
                        last: spec.last_event,
                    });
                }
                dt[[i, 0]] = (spec.time - spec.last_event) / cfg.time_unit;
            }
            let lam = intensity_from_state(tape, cfg, vars, endogenous, dt);
            let lam_pair = tape.pick(lam, pairs.cluster_at.clone());
            let mod_alpha = tape.mul_col(alpha, lam_pair);
            let mx = tape.block_expand(mod_alpha, dh);
            let w = tape.mul(mx, vp);
            (tape.segment_sum(w, pairs.query_of_pair.clone(), nq), Some(lam))
        }
    };

    let empty = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| q.keys.is_empty())
        .map(|(i, _)| i)
        .collect();
    Ok(LayerOutput {
        h,
        endogenous,
        intensity,
        attention: alpha,
        pairs,
        empty,
    })
}

/// `Q×K` intensities from the endogenous states `s` (`Q×d`) and elapsed
/// times `dt` (`Q×1`, already in model units).
pub fn intensity_from_state(tape: &mut Tape, cfg: &EncoderConfig, vars: &LayerVars, s: Var, dt: Array2<f64>) -> Var {
    let endo = tape.matmul_bt(s, vars.w_g);
    let dt = tape.constant(dt);
    let exo = tape.matmul(dt, vars.b_g);
    let pre = tape.add(endo, exo);
    let g = tape.leaky_relu(pre, cfg.slope);
    let gw = tape.mul_row(g, vars.w_int);
    let z = tape.block_sum(gw, cfg.dim);
    let z = tape.add_row(z, vars.mu);
    tape.scaled_softplus(z, vars.log_phi)
}

/// Runs every layer over a slot graph where query `i` belongs to slot `i`.
/// Returns the per-layer outputs (last one is the final embedding).
pub fn encoder_forward(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    layers: &[LayerVars],
    h0: Var,
    queries: &[QuerySpec],
    extras: LayerExtras,
) -> Result<Vec<LayerOutput>> {
    if tape.shape(h0).0 != queries.len() {
        return Err(Error::shape(format!(
            "{} slots but {} queries",
            tape.shape(h0).0,
            queries.len()
        )));
    }
    let mut outs: Vec<LayerOutput> = Vec::with_capacity(layers.len());
    let mut h = h0;
    for vars in layers {
        let out = layer_forward(tape, cfg, vars, h, queries, extras)?;
        h = out.h;
        outs.push(out);
    }
    Ok(outs)
}

/// Convenience wrapper: one layer on plain arrays, returning `(h, s, λ)`.
pub fn layer_forward_values(
    cfg: &EncoderConfig,
    store: &ParamStore,
    layer: usize,
    h_prev: &Array2<f64>,
    queries: &[QuerySpec],
) -> Result<(Array2<f64>, Array2<f64>, Option<Array2<f64>>)> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let vars = LayerVars::bind(&bound, layer)?;
    let h = tape.constant(h_prev.clone());
    let out = layer_forward(&mut tape, cfg, &vars, h, queries, LayerExtras::default())?;
    Ok((
        tape.value(out.h).clone(),
        tape.value(out.endogenous).clone(),
        out.intensity.map(|l| tape.value(l).clone()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_concatenates_cluster_encoding() {
        let xf = Array2::zeros((3, 2));
        let xc = crate::cluster::one_hot(&[0, 3, 1], 4);
        let h0 = encode_input(&xf, &xc).unwrap();
        assert_eq!(h0.ncols(), 6);
        assert_eq!(h0[[1, 2 + 3]], 1.0);
        assert_eq!(h0.row(1).sum(), 1.0);
        assert!(encode_input(&Array2::zeros((2, 2)), &xc).is_err());
    }

    #[test]
    fn identity_value_transform() {
        let h = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(values(&h, &Array2::eye(2)).unwrap(), h);
    }

    #[test]
    fn sa_unit_vectors() {
        let q = array![1.0, 0.0, 0.0, 0.0];
        let k = array![[1.0, 0.0, 0.0, 0.0]];
        let e = attention_scores(AttentionVariant::SelfAttention, q.view(), k.view(), None, 0.2);
        assert!((e[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gat_zero_attention_vector_is_uniform() {
        let q = array![1.0, -2.0];
        let k = array![[3.0, 1.0], [0.0, 5.0], [-1.0, -1.0]];
        let z = Array1::zeros(2);
        for v in [AttentionVariant::Gat, AttentionVariant::GatV2] {
            let e = attention_scores(v, q.view(), k.view(), Some((z.view(), z.view())), 0.2);
            assert!(e.iter().all(|x| *x == 0.0));
            let w = softmax(&e);
            assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn endogenous_single_and_symmetric() {
        let v = array![[1.0, 2.0]];
        let (s, ok) = endogenous_encode(&[123.0], v.view());
        assert!(ok);
        assert_eq!(s, array![1.0, 2.0]);
        let v2 = array![[1.0, 2.0], [3.0, -2.0]];
        let (s, _) = endogenous_encode(&[0.7, 0.7], v2.view());
        assert_eq!(s, array![2.0, 0.0]);
        let (s, ok) = endogenous_encode(&[], Array2::<f64>::zeros((0, 2)).view());
        assert!(!ok);
        assert_eq!(s, array![0.0, 0.0]);
    }

    fn zero_cluster(d: usize) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        (Array2::zeros((d, d)), Array1::zeros(d), Array1::zeros(d))
    }

    #[test]
    fn softplus_values() {
        let (wg, bg, w) = zero_cluster(3);
        let p = ClusterIntensity {
            w_g: wg.view(),
            b_g: bg.view(),
            w: w.view(),
            mu: 0.0,
            phi: 1.0,
        };
        let s = Array1::from_vec(vec![0.3, -1.0, 2.0]);
        let lam = conditional_intensity(s.view(), 5.0, 1.0, &p, 0.2, 1.0).unwrap();
        assert!((lam - std::f64::consts::LN_2).abs() < 1e-12);

        let big = ClusterIntensity { mu: 20.0, ..p };
        let lam = conditional_intensity(s.view(), 5.0, 1.0, &big, 0.2, 1.0).unwrap();
        assert!((lam - 20.0).abs() < 1e-8);

        // x = -5, phi = 0.5: 0.5 * ln(1 + e^-10)
        let neg = ClusterIntensity { mu: -5.0, phi: 0.5, ..p };
        let lam = conditional_intensity(s.view(), 5.0, 1.0, &neg, 0.2, 1.0).unwrap();
        assert!((lam - 2.2699449608432323e-5).abs() < 1e-17);

        assert!(matches!(
            conditional_intensity(s.view(), 0.5, 1.0, &p, 0.2, 1.0),
            Err(Error::TimeOrder { .. })
        ));
    }

    #[test]
    fn softplus_is_stable_far_out() {
        assert_eq!(scaled_softplus(1e6, 1.0), 1e6);
        assert!(scaled_softplus(-1e6, 1.0) >= 0.0);
        assert!(scaled_softplus(-700.0, 1.0) > 0.0);
    }

    fn small_cfg(variant: AttentionVariant) -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            dim: 4,
            variant,
            clusters: 2,
            input_dim: 3,
            slope: 0.2,
            time_unit: 1.0,
            intensity: IntensityMode::Learned,
            temporal_encoding: false,
        }
    }

    #[test]
    fn single_neighbor_scaled_by_intensity() {
        let mut cfg = small_cfg(AttentionVariant::SelfAttention);
        cfg.intensity = IntensityMode::Constant(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        init_encoder_params(&cfg, &mut rng, &mut store);
        let h = array![[1.0, 0.5, -1.0], [0.2, 0.1, 0.3]];
        let q = vec![
            QuerySpec {
                source: QuerySource::Slot(0),
                time: 2.0,
                last_event: 1.0,
                keys: vec![KeyRef::new(1, 1.0, 0)],
            },
            QuerySpec {
                source: QuerySource::Slot(1),
                time: 2.0,
                last_event: 1.0,
                keys: vec![],
            },
        ];
        let (out, _, _) = layer_forward_values(&cfg, &store, 0, &h, &q).unwrap();
        let v1 = h.row(1).dot(&store.get("layer0.w_v").unwrap().t());
        for c in 0..4 {
            assert!((out[[0, c]] - 2.0 * v1[c]).abs() < 1e-14);
            assert_eq!(out[[1, c]], 0.0);
        }
    }
}

//! Next-item prediction over per-user event sequences.
//!
//! Every position of a user's sequence attends to every unmasked position.
//! Training masks a share of positions, scores them with the shared
//! label-aware embedding `q(1)` and applies softmax cross-entropy over all
//! items at the masked positions. Inference appends a `q(1)` query at the
//! requested future time.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{evaluate_ranking, MetricReport};
use super::program::{run_program, Program, TppProgram};
use super::{cross_entropy, head, total_objective, BatchOut, Model, StepContext, Task, TaskKind};
use crate::cam::{MaskPlan, MaskingMode};
use crate::dyngraph::Event;
use crate::encoder::{KeyRef, QuerySource, QuerySpec};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::seed::indexed_seed;
use crate::tape::Tape;

/// One user's interactions in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub user: usize,
    pub items: Vec<usize>,
    pub times: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Keeps the last `max_len` interactions.
    pub fn tail(&self, max_len: usize) -> Sequence {
        let s = self.len().saturating_sub(max_len);
        Sequence {
            user: self.user,
            items: self.items[s..].to_vec(),
            times: self.times[s..].to_vec(),
        }
    }

    /// Splits off the last interaction as `(history, item, time)`.
    pub fn holdout(&self) -> Option<(Sequence, usize, f64)> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        Some((
            Sequence {
                user: self.user,
                items: self.items[..n - 1].to_vec(),
                times: self.times[..n - 1].to_vec(),
            },
            self.items[n - 1],
            self.times[n - 1],
        ))
    }
}

/// Groups `(user, item, t)` events into per-user sequences; items are mapped
/// through `item_index`. Users are returned in ascending id order.
pub fn sequences_from_events(events: &[Event], item_index: &BTreeMap<usize, usize>) -> Result<Vec<Sequence>> {
    let mut by_user: BTreeMap<usize, Sequence> = BTreeMap::new();
    for e in events {
        let item = *item_index.get(&e.v).ok_or(Error::UnknownNode(e.v))?;
        let s = by_user.entry(e.u).or_insert_with(|| Sequence {
            user: e.u,
            items: Vec::new(),
            times: Vec::new(),
        });
        s.items.push(item);
        s.times.push(e.t);
    }
    Ok(by_user.into_values().collect())
}

/// A held-out interaction: predict `target` at `time` from `history`.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub history: Sequence,
    pub target: usize,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct LinkTask {
    /// Layer-0 input per item (features followed by cluster one-hot).
    pub item_inputs: Array2<f64>,
    pub item_clusters: Vec<usize>,
    pub train: Vec<Sequence>,
    pub valid: Vec<Holdout>,
    pub test: Vec<Holdout>,
    pub max_len: usize,
    pub ks: Vec<usize>,
    /// Cutoff used for the validation metric (HR at this K).
    pub select_k: usize,
}

struct Built {
    program: Program,
    /// `(slot, item)` of every supervised position.
    targets: Vec<(usize, usize)>,
    /// Slot of every appended prediction query.
    appended: Vec<usize>,
}

impl LinkTask {
    /// Shuffles users 8:1:1 into train, validation and test. Training users
    /// contribute their whole sequence; validation and test users contribute
    /// a holdout of their last interaction. Users with fewer than two
    /// interactions are dropped from the evaluation splits.
    pub fn split_by_user(
        mut sequences: Vec<Sequence>,
        item_inputs: Array2<f64>,
        item_clusters: Vec<usize>,
        max_len: usize,
        ks: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if item_clusters.len() != item_inputs.nrows() {
            return Err(Error::shape(format!(
                "{} cluster ids for {} items",
                item_clusters.len(),
                item_inputs.nrows()
            )));
        }
        if max_len == 0 || ks.is_empty() {
            return Err(Error::invalid("max_len and the cutoff list must be nonempty"));
        }
        if let Some(bad) = sequences.iter().flat_map(|s| &s.items).find(|&&i| i >= item_inputs.nrows()) {
            return Err(Error::UnknownNode(*bad));
        }
        sequences.retain(|s| !s.is_empty());
        sequences.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = sequences.len();
        let a = (n as f64 * 0.8).round() as usize;
        let b = (n as f64 * 0.9).round() as usize;
        let holdouts = |part: &[Sequence]| -> Vec<Holdout> {
            part.iter()
                .filter_map(|s| s.holdout())
                .map(|(history, target, time)| Holdout { history, target, time })
                .collect()
        };
        let valid = holdouts(&sequences[a..b]);
        let test = holdouts(&sequences[b..]);
        sequences.truncate(a);
        let select_k = ks[0];
        Ok(LinkTask {
            item_inputs,
            item_clusters,
            train: sequences,
            valid,
            test,
            max_len,
            ks,
            select_k,
        })
    }

    pub fn num_items(&self) -> usize {
        self.item_inputs.nrows()
    }

    fn cluster(&self, item: usize) -> usize {
        self.item_clusters.get(item).copied().unwrap_or(0)
    }

    /// Builds one block per sequence. `plans[i]` masks sequence `i`;
    /// `queries[i]` appends a label-aware prediction query at that time.
    fn build(
        &self,
        seqs: &[Sequence],
        plans: &[Option<MaskPlan>],
        queries: &[Option<f64>],
        mode: MaskingMode,
        ctx: Option<&StepContext>,
        layers: usize,
    ) -> Result<Built> {
        let din = self.item_inputs.ncols();
        let total: usize = seqs.iter().map(|s| s.len()).sum::<usize>() + queries.iter().flatten().count();
        let mut h0 = Array2::zeros((total, din));
        let mut specs: Vec<QuerySpec> = Vec::with_capacity(total);
        let mut label_rows = 0usize;
        let mut targets = Vec::new();
        let mut appended = Vec::new();
        let mut tpp = TppProgram::default();
        let mut token = false;
        for (si, seq) in seqs.iter().enumerate() {
            let offset = specs.len();
            let n = seq.len();
            let masked: &[usize] = plans[si].as_ref().map_or(&[], |p| p.masked_queries.as_slice());
            let is_masked = |p: usize| masked.binary_search(&p).is_ok();
            for p in 0..n {
                h0.row_mut(offset + p).assign(&self.item_inputs.row(seq.items[p]));
            }
            let visible_keys = |before: Option<f64>| -> Vec<KeyRef> {
                (0..n)
                    .filter(|&j| before.is_none_or(|t| seq.times[j] < t))
                    .filter_map(|j| {
                        let key = KeyRef::new(offset + j, seq.times[j], self.cluster(seq.items[j]));
                        if !is_masked(j) {
                            Some(key)
                        } else if mode == MaskingMode::SpecialToken && before.is_none() {
                            Some(KeyRef { token: true, ..key })
                        } else {
                            None
                        }
                    })
                    .collect()
            };
            let all_keys = visible_keys(None);
            for p in 0..n {
                let source = if is_masked(p) {
                    targets.push((offset + p, seq.items[p]));
                    match mode {
                        MaskingMode::LabelAware => {
                            label_rows += 1;
                            QuerySource::Override(label_rows - 1)
                        }
                        MaskingMode::SpecialToken => {
                            token = true;
                            QuerySource::Token
                        }
                    }
                } else {
                    QuerySource::Slot(offset + p)
                };
                specs.push(QuerySpec {
                    source,
                    time: seq.times[p],
                    last_event: if p == 0 { seq.times[0] } else { seq.times[p - 1] },
                    keys: all_keys.clone(),
                });
            }
            if mode == MaskingMode::SpecialToken && !masked.is_empty() {
                token = true;
            }
            if let Some(tq) = queries[si] {
                let last = seq.times.last().copied().unwrap_or(tq);
                if tq < last {
                    return Err(Error::TimeOrder { t: tq, last });
                }
                label_rows += 1;
                appended.push(specs.len());
                specs.push(QuerySpec {
                    source: QuerySource::Override(label_rows - 1),
                    time: tq,
                    last_event: last,
                    keys: all_keys.clone(),
                });
            }
            if let Some(ctx) = ctx.filter(|c| c.gamma > 0.0) {
                let start = n.saturating_sub(ctx.tpp_max_events);
                let events: Vec<(usize, f64)> =
                    (start..n).map(|p| (self.cluster(seq.items[p]), seq.times[p])).collect();
                tpp.push_node(&events, ctx.integrator, |tau| {
                    let before = seq.times.partition_point(|&t| t < tau);
                    let own = offset + before.saturating_sub(1);
                    Ok(QuerySpec {
                        source: QuerySource::Slot(own),
                        time: tau,
                        last_event: if before == 0 { tau } else { seq.times[before - 1] },
                        keys: visible_keys(Some(tau)),
                    })
                })?;
            }
        }
        Ok(Built {
            program: Program {
                h0,
                layers: vec![specs; layers],
                labels: (label_rows > 0).then(|| Array2::ones((label_rows, 1))),
                token,
                tpp: (tpp.nodes > 0).then_some(tpp),
            },
            targets,
            appended,
        })
    }

    /// Item logits for each holdout, one row per holdout.
    pub fn score(&self, model: &Model, holdouts: &[Holdout]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((holdouts.len(), self.num_items()));
        for (c, chunk) in holdouts.chunks(256).enumerate() {
            let seqs: Vec<Sequence> = chunk.iter().map(|h| h.history.tail(self.max_len)).collect();
            let plans = vec![None; seqs.len()];
            let queries: Vec<Option<f64>> = chunk.iter().map(|h| Some(h.time)).collect();
            let built = self.build(&seqs, &plans, &queries, MaskingMode::LabelAware, None, model.config.encoder.layers)?;
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let fwd = run_program(&mut tape, &model.config.encoder, &bound, &built.program)?;
            let rows = tape.gather_rows(fwd.h, std::rc::Rc::new(built.appended.clone()));
            let logits = head(&mut tape, &bound, rows)?;
            let v = tape.value(logits);
            for (i, row) in v.rows().into_iter().enumerate() {
                out.row_mut(c * 256 + i).assign(&row);
            }
        }
        Ok(out)
    }

    /// Softmax distribution over items for a user history at time `t`.
    pub fn predict(&self, model: &Model, history: &Sequence, t: f64) -> Result<Array1<f64>> {
        let h = Holdout {
            history: history.clone(),
            target: 0,
            time: t,
        };
        let logits = self.score(model, &[h])?;
        let row = logits.row(0);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = row.mapv(|x| (x - m).exp());
        let z = e.sum();
        Ok(e / z)
    }

    pub fn evaluate(&self, model: &Model, holdouts: &[Holdout]) -> Result<MetricReport> {
        if holdouts.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let scores = self.score(model, holdouts)?;
        let targets: Vec<usize> = holdouts.iter().map(|h| h.target).collect();
        evaluate_ranking(&scores, &targets, &self.ks)
    }

    /// Item counts over the training sequences.
    pub fn popularity(&self) -> Array1<f64> {
        let mut counts = Array1::zeros(self.num_items());
        for s in &self.train {
            for &i in &s.items {
                counts[i] += 1.0;
            }
        }
        counts
    }

    /// Ranking metrics of the popularity baseline.
    pub fn evaluate_popularity(&self, holdouts: &[Holdout]) -> Result<MetricReport> {
        let pop = self.popularity();
        let mut scores = Array2::zeros((holdouts.len(), self.num_items()));
        for mut row in scores.rows_mut() {
            row.assign(&pop);
        }
        let targets: Vec<usize> = holdouts.iter().map(|h| h.target).collect();
        evaluate_ranking(&scores, &targets, &self.ks)
    }
}

impl Task for LinkTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Link
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
        let seqs: Vec<Sequence> = batch.iter().map(|&i| self.train[i].tail(self.max_len)).collect();
        let plans = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ratio = if ctx.mask_ratio > 0.0 { ctx.mask_ratio } else { f64::MIN_POSITIVE };
                MaskPlan::for_sequence(s.len(), ratio, indexed_seed(ctx.seed, "mask", i as u64)).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        let queries = vec![None; seqs.len()];
        let built = self.build(&seqs, &plans, &queries, ctx.masking, Some(ctx), model.config.encoder.layers)?;
        if built.targets.is_empty() {
            return Err(Error::invalid("batch has no maskable positions"));
        }
        let fwd = run_program(tape, &model.config.encoder, bound, &built.program)?;
        let slots: Vec<usize> = built.targets.iter().map(|t| t.0).collect();
        let items: Vec<usize> = built.targets.iter().map(|t| t.1).collect();
        let rows = tape.gather_rows(fwd.h, std::rc::Rc::new(slots));
        let logits = head(tape, bound, rows)?;
        let loss = cross_entropy(tape, logits, &items);
        let objective = total_objective(tape, loss, fwd.tpp, ctx.gamma);
        Ok(BatchOut {
            objective,
            loss,
            tpp: fwd.tpp,
        })
    }

    fn validation_metric(&self, model: &Model) -> Result<f64> {
        let r = self.evaluate(model, &self.valid)?;
        r.get(&format!("hr@{}", self.select_k))
            .ok_or_else(|| Error::invalid(format!("HR@{} is not among the reported cutoffs", self.select_k)))
    }

    fn higher_is_better(&self) -> bool {
        true
    }

    fn evaluate_test(&self, model: &Model) -> Result<MetricReport> {
        self.evaluate(model, &self.test)
    }
}

//! Multi-horizon sensor reading forecasts on a road graph.
//!
//! A sample is a forecast origin `t_now`: each sensor's input is its last
//! `window` normalized readings, only events up to `t_now` are visible, and
//! the embedding is queried at `t_now + h` for every horizon `h`. Readings are
//! z-scored per sensor with training-window statistics; metrics are reported
//! in the original units.

use ndarray::{s, Array1, Array2};

use super::metrics::{evaluate_regression, MetricReport};
use super::program::{run_program, stack_inputs, GroupMask, Program, Root, TppProgram, TreeBuilder};
use super::{head, squared_error, total_objective, BatchOut, Model, StepContext, Task, TaskKind};
use crate::cam::{MaskPlan, MaskingMode};
use crate::dyngraph::{
    adjacency_lists, derive_congestion_events_with, DynamicGraph, HourlyStats, Readings,
};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::seed::indexed_seed;
use crate::tape::Tape;

pub const TRAIN_SHARE: f64 = 0.7;
pub const VALID_SHARE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct TrafficTask {
    /// Road graph with congestion events.
    pub graph: DynamicGraph,
    pub clusters: Vec<usize>,
    pub cluster_count: usize,
    pub timestamps: Vec<f64>,
    /// Normalized readings, `T × sensors`.
    pub z: Array2<f64>,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub window: usize,
    /// Forecast horizons in steps.
    pub horizons: Vec<usize>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub include_self: bool,
}

/// Chronological split of the time axis.
pub fn split_points(len: usize) -> (usize, usize) {
    let a = (len as f64 * TRAIN_SHARE).round() as usize;
    let b = (len as f64 * (TRAIN_SHARE + VALID_SHARE)).round() as usize;
    (a, b)
}

impl TrafficTask {
    /// Builds the task: splits time 70/10/20, fits normalization and hourly
    /// congestion statistics on the training window, and derives congestion
    /// events over the whole series.
    pub fn from_readings(
        readings: &Readings,
        road_edges: &[(usize, usize)],
        clusters: Vec<usize>,
        cluster_count: usize,
        window: usize,
        horizons: Vec<usize>,
    ) -> Result<Self> {
        let t = readings.len();
        let p = readings.num_sensors();
        if clusters.len() != p {
            return Err(Error::shape(format!("{} cluster ids for {p} sensors", clusters.len())));
        }
        if window == 0 || horizons.is_empty() || horizons.contains(&0) {
            return Err(Error::invalid("window and horizons must be positive"));
        }
        let (a, b) = split_points(t);
        let train_part = readings.slice(0, a);
        let mean = train_part.values.mean_axis(ndarray::Axis(0)).ok_or(Error::EmptyEvaluation)?;
        let std = train_part
            .values
            .std_axis(ndarray::Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let z = (&readings.values - &mean) / &std;
        let adj = adjacency_lists(p, road_edges)?;
        let stats = HourlyStats::fit(&train_part);
        let events = derive_congestion_events_with(readings, &adj, &stats)?;
        let t0 = readings.timestamps[0];
        let graph = DynamicGraph::new(p, road_edges.to_vec(), events, Array2::zeros((p, 0)), Some(t0))?;
        let max_h = *horizons.iter().max().expect("nonempty horizons");
        let samples = |lo: usize, hi: usize| -> Vec<usize> {
            (lo.max(window - 1)..hi.saturating_sub(max_h)).collect()
        };
        Ok(TrafficTask {
            graph,
            clusters,
            cluster_count,
            timestamps: readings.timestamps.clone(),
            z,
            mean,
            std,
            window,
            train: samples(0, a),
            valid: samples(a, b),
            test: samples(b, t),
            horizons,
            include_self: true,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.window + self.cluster_count
    }

    fn cadence(&self) -> f64 {
        if self.timestamps.len() < 2 {
            1.0
        } else {
            self.timestamps[1] - self.timestamps[0]
        }
    }

    fn cutoff(&self, i: usize) -> f64 {
        self.timestamps[i] + 0.5 * self.cadence()
    }

    fn sample_of(&self, cutoff: f64) -> usize {
        self.timestamps.partition_point(|&t| t < cutoff).saturating_sub(1)
    }

    fn input(&self, node: usize, i: usize) -> Array1<f64> {
        let mut x = Array1::zeros(self.input_dim());
        let start = (i + 1).saturating_sub(self.window);
        let hist = self.z.slice(s![start..=i, node]);
        let pad = self.window - hist.len();
        x.slice_mut(s![pad..self.window]).assign(&hist);
        x[self.window + self.clusters[node]] = 1.0;
        x
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

    /// Roots ordered sample-major, then horizon, then sensor.
    fn roots(&self, samples: &[usize], grouped: bool) -> Vec<Root> {
        let mut roots = Vec::new();
        for (g, &i) in samples.iter().enumerate() {
            for &h in &self.horizons {
                for v in 0..self.graph.num_nodes() {
                    roots.push(Root {
                        node: v,
                        time: self.timestamps[i + h],
                        cutoff: self.cutoff(i),
                        group: grouped.then_some(g),
                    });
                }
            }
        }
        roots
    }

    fn targets(&self, samples: &[usize]) -> Array2<f64> {
        let p = self.graph.num_nodes();
        let mut y = Array2::zeros((samples.len() * self.horizons.len() * p, 1));
        let mut r = 0;
        for &i in samples {
            for &h in &self.horizons {
                for v in 0..p {
                    y[[r, 0]] = self.z[[i + h, v]];
                    r += 1;
                }
            }
        }
        y
    }

    fn program(&self, model: &Model, samples: &[usize], ctx: Option<&StepContext>) -> Result<Program> {
        let p = self.graph.num_nodes();
        let layers = model.config.encoder.layers;
        let masking = ctx.filter(|c| c.mask_ratio > 0.0);
        let mut masks = Vec::new();
        let mut labels_rows: Vec<Array1<f64>> = Vec::new();
        if let Some(ctx) = masking {
            let plain = self.builder(1, &[], MaskingMode::LabelAware);
            for (g, &i) in samples.iter().enumerate() {
                let c = self.cutoff(i);
                let base = (0..p)
                    .map(|v| plain.node_query(v, c, c, None))
                    .collect::<Result<Vec<_>>>()?;
                let plan = MaskPlan::for_nodes(&base, ctx.mask_ratio, indexed_seed(ctx.seed, "mask", g as u64), None)?;
                let offset = labels_rows.len();
                for &v in &plan.masked_queries {
                    labels_rows.push(self.horizons.iter().map(|&h| self.z[[i + h, v]]).collect());
                }
                masks.push(GroupMask {
                    plan,
                    label_offset: offset,
                });
            }
        }
        let mode = masking.map_or(MaskingMode::LabelAware, |c| c.masking);
        let b = self.builder(layers, &masks, mode);
        let roots = self.roots(samples, masking.is_some());
        let tree = b.build(&roots)?;
        let mut tpp = TppProgram::default();
        if let Some(ctx) = ctx.filter(|c| c.gamma > 0.0) {
            let feed = tree.feed_index();
            // one likelihood per (sample, sensor), using the first horizon's root
            for g in 0..samples.len() {
                for v in 0..p {
                    let r = &roots[g * self.horizons.len() * p + v];
                    b.tpp_for_root(&mut tpp, r, &feed, ctx.tpp_max_events, ctx.integrator)?;
                }
            }
        }
        let h0 = stack_inputs(tree.h0_slots(), self.input_dim(), |r| {
            Ok(self.input(r.node, self.sample_of(r.cutoff)))
        })?;
        let labels = (!labels_rows.is_empty()).then(|| {
            let mut y = Array2::zeros((labels_rows.len(), self.horizons.len()));
            for (j, row) in labels_rows.iter().enumerate() {
                y.row_mut(j).assign(row);
            }
            y
        });
        Ok(Program {
            h0,
            layers: tree.layers,
            labels,
            token: masking.is_some() && mode == MaskingMode::SpecialToken,
            tpp: (tpp.nodes > 0).then_some(tpp),
        })
    }

    /// Normalized forecasts, one row per (sample, horizon, sensor).
    pub fn forecast(&self, model: &Model, samples: &[usize]) -> Result<Array1<f64>> {
        let mut out = Vec::new();
        for chunk in samples.chunks(16) {
            let program = self.program(model, chunk, None)?;
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let fwd = run_program(&mut tape, &model.config.encoder, &bound, &program)?;
            let pred = head(&mut tape, &bound, fwd.h)?;
            out.extend(tape.value(pred).column(0).iter().copied());
        }
        Ok(Array1::from_vec(out))
    }

    /// Metrics in original units, overall and per horizon.
    pub fn evaluate(&self, model: &Model, samples: &[usize]) -> Result<MetricReport> {
        if samples.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let p = self.graph.num_nodes();
        let pred = self.forecast(model, samples)?;
        let truth = self.targets(samples);
        let nh = self.horizons.len();
        let mut all_p = Vec::new();
        let mut all_t = Vec::new();
        let mut per_h: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); nh];
        for (r, (&zp, &zt)) in pred.iter().zip(truth.column(0)).enumerate() {
            let v = r % p;
            let h = (r / p) % nh;
            let yp = zp * self.std[v] + self.mean[v];
            let yt = zt * self.std[v] + self.mean[v];
            all_p.push(yp);
            all_t.push(yt);
            per_h[h].0.push(yp);
            per_h[h].1.push(yt);
        }
        let mut report = evaluate_regression(&all_p, &all_t)?;
        for (h, (pp, tt)) in self.horizons.iter().zip(&per_h) {
            report.extend_prefixed(&format!("h{h}_"), &evaluate_regression(pp, tt)?);
        }
        Ok(report)
    }
}

impl Task for TrafficTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Traffic
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
        let samples: Vec<usize> = batch.iter().map(|&i| self.train[i]).collect();
        let program = self.program(model, &samples, Some(ctx))?;
        let fwd = run_program(tape, &model.config.encoder, bound, &program)?;
        let pred = head(tape, bound, fwd.h)?;
        let loss = squared_error(tape, pred, self.targets(&samples));
        let objective = total_objective(tape, loss, fwd.tpp, ctx.gamma);
        Ok(BatchOut {
            objective,
            loss,
            tpp: fwd.tpp,
        })
    }

    fn validation_metric(&self, model: &Model) -> Result<f64> {
        Ok(self.evaluate(model, &self.valid)?.get("rmse").unwrap_or(f64::NAN))
    }

    fn higher_is_better(&self) -> bool {
        false
    }

    fn evaluate_test(&self, model: &Model) -> Result<MetricReport> {
        self.evaluate(model, &self.test)
    }
}

use ndarray::Array2;

use ctdg::dyngraph::DynamicGraph;
use ctdg::learn::link::Sequence;
use ctdg::learn::metrics::evaluate_ranking;
use ctdg::learn::node::{latest_event_times, NodeTask};
use ctdg::learn::train::TrainConfig;
use ctdg::learn::{train, total_objective, Model, ModelConfig, Task, HEAD_BIAS, HEAD_WEIGHT};
use ctdg::synth::{tiny_link_task, tiny_model_config, tiny_traffic_task, two_communities, HOUR};
use ctdg::tape::Tape;
use ctdg::tpple::Integrator;

fn separable_task() -> (NodeTask, ModelConfig) {
    let data = two_communities(60, 4, 3.0, 4, 7);
    let graph = DynamicGraph::new(60, Vec::new(), data.events, data.features, Some(0.0)).unwrap();
    let query_time = latest_event_times(&graph, 100.0);
    let clusters = data.labels.clone();
    let task = NodeTask::new(graph, clusters, 2, data.labels, 2, query_time).unwrap();
    let mut cfg = tiny_model_config(6, 2, 2, 2);
    cfg.encoder.dim = 8;
    cfg.encoder.layers = 1;
    cfg.encoder.time_unit = 10.0;
    (task, cfg)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.02,
        batch_size: 8,
        gamma: 0.01,
        tpp_max_events: 8,
        integrator: Integrator::Trapezoid { refine: 1 },
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let (task, cfg) = separable_task();
    let init = Model::init(cfg, 1).unwrap();
    let out = train(&task, init.clone(), &quick(0)).unwrap();
    assert_eq!(out.model, init);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn separable_nodes_are_learned() {
    let (task, cfg) = separable_task();
    // nearest-centroid on raw features already separates the communities
    let feats = task.graph.features();
    let mut centroid = Array2::<f64>::zeros((2, feats.ncols()));
    for (u, &y) in task.labels.iter().enumerate() {
        centroid.row_mut(y).scaled_add(1.0 / 30.0, &feats.row(u));
    }
    let oracle_hits = (0..60)
        .filter(|&u| {
            let d0 = (&feats.row(u) - &centroid.row(0)).mapv(|x| x * x).sum();
            let d1 = (&feats.row(u) - &centroid.row(1)).mapv(|x| x * x).sum();
            usize::from(d1 < d0) == task.labels[u]
        })
        .count();
    assert!(oracle_hits as f64 / 60.0 >= 0.99);

    let init = Model::init(cfg, 1).unwrap();
    let out = train(&task, init, &quick(50)).unwrap();
    assert!(out.diverged.is_none());
    let report = task.evaluate(&out.model, &task.train).unwrap();
    assert!(report.get("accuracy").unwrap() >= 0.95, "{report:?}");
}

#[test]
fn learning_rate_steps_every_ten_epochs() {
    let (task, cfg) = separable_task();
    let mut tc = quick(31);
    tc.patience = 100;
    tc.batch_size = 64;
    let out = train(&task, Model::init(cfg, 1).unwrap(), &tc).unwrap();
    let lr: Vec<f64> = out.log.iter().map(|r| r.lr).collect();
    assert_eq!(lr.len(), 32);
    for e in 1..=31 {
        let expect = 0.02 * 0.9f64.powi((e / 10) as i32);
        assert!((lr[e] - expect).abs() < 1e-15, "epoch {e}: {}", lr[e]);
    }
    assert!(lr[9] == lr[1] && lr[10] < lr[9] && lr[20] < lr[19] && lr[30] < lr[29]);
}

#[test]
fn training_is_deterministic_and_never_worse_than_start() {
    let (task, cfg) = separable_task();
    let a = train(&task, Model::init(cfg.clone(), 2).unwrap(), &quick(4)).unwrap();
    let b = train(&task, Model::init(cfg, 2).unwrap(), &quick(4)).unwrap();
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.model, b.model);
    assert!(a.best_metric >= a.log[0].val_metric);
    assert_eq!(task.validation_metric(&a.model).unwrap(), a.best_metric);
}

#[test]
fn divergence_returns_finite_model() {
    let (task, cfg) = separable_task();
    let mut tc = quick(5);
    tc.lr = 1e200;
    let out = train(&task, Model::init(cfg, 2).unwrap(), &tc).unwrap();
    assert!(out.model.params.all_finite());
    if let Some(msg) = &out.diverged {
        assert!(msg.contains("non-finite"));
    }
}

#[test]
fn link_prediction_is_a_time_conditioned_distribution() {
    let (task, cfg) = tiny_link_task(3);
    let model = Model::init(cfg, 4).unwrap();
    let seq: &Sequence = &task.train[0];
    let last = *seq.times.last().unwrap();
    let p1 = task.predict(&model, seq, last + HOUR).unwrap();
    let p2 = task.predict(&model, seq, last + 30.0 * HOUR).unwrap();
    assert!((p1.sum() - 1.0).abs() < 1e-9 && (p2.sum() - 1.0).abs() < 1e-9);
    let gap = p1.iter().zip(p2.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-9, "predictions ignore the query time");
    assert!(task.predict(&model, seq, last - 1.0).is_err());
}

#[test]
fn zero_head_weights_give_bias() {
    let (task, cfg) = tiny_traffic_task(1);
    let mut model = Model::init(cfg, 0).unwrap();
    model.params.get_mut(HEAD_WEIGHT).unwrap().fill(0.0);
    model.params.get_mut(HEAD_BIAS).unwrap().fill(0.25);
    let f = task.forecast(&model, &task.valid[..3]).unwrap();
    assert!(f.iter().all(|&x| x == 0.25));
}

#[test]
fn objective_combines_loss_and_likelihood() {
    let mut tape = Tape::new();
    let loss = tape.constant(Array2::from_elem((1, 1), 1.0));
    let r = tape.constant(Array2::from_elem((1, 1), -2.0));
    let total = total_objective(&mut tape, loss, Some(r), 1.0);
    assert_eq!(tape.scalar(total), 3.0);
    let plain = total_objective(&mut tape, loss, Some(r), 0.0);
    assert_eq!(tape.scalar(plain), 1.0);
}

#[test]
fn uniform_logits_cost_log_classes() {
    let mut tape = Tape::new();
    let logits = tape.constant(Array2::zeros((4, 3)));
    let l = ctdg::learn::cross_entropy(&mut tape, logits, &[0, 1, 2, 0]);
    assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn ranking_ignores_logit_temperature() {
    let scores = Array2::from_shape_fn((5, 20), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
    let targets = [0, 3, 7, 11, 19];
    let a = evaluate_ranking(&scores, &targets, &[5, 10]).unwrap();
    let b = evaluate_ranking(&scores.mapv(|x| x * 3.7), &targets, &[5, 10]).unwrap();
    assert_eq!(a.get("hr@5"), b.get("hr@5"));
    assert_eq!(a.get("hr@10"), b.get("hr@10"));
}

#[test]
fn model_checkpoint_round_trip() {
    let (_, cfg) = tiny_link_task(0);
    let model = Model::init(cfg.clone(), 9).unwrap();
    let ck = model.to_checkpoint("tiny");
    let bytes = ck.to_bytes();
    let back = ctdg::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(Model::from_checkpoint(cfg, &back).unwrap(), model);
}

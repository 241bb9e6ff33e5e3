//! Spectral interpretation: build a graph basis, perturb predictions in a
//! frequency band and measure how the task metric moves.
//!
//! Prediction and reference files are signal matrices: a CSV with header
//! `example,<node id>,<node id>,...` and one row per example. Rows are
//! perturbed independently as graph signals. Columns for nodes outside the
//! basis pass through unchanged.
//!
//! Truth layouts by metric family:
//! - ranking: `example,target` with the target node id, scored over the
//!   prediction row;
//! - regression: a signal matrix with the same examples and nodes;
//! - classification: `node,label`; prediction rows are per-class scores and
//!   the predicted class of a node is the arg-max over rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use ctdg::learn::metrics::{evaluate_classification, evaluate_ranking, evaluate_regression};
use ctdg::learn::{MetricReport, TaskKind};
use ctdg_spectral::{exact_basis, gft, inter_perturb, intra_perturb, io, nystrom_eig, Band, Direction, NormalizedLaplacian, SpectralBasis, SpectralError};

use crate::config::{BasisMethod, MetricKind, PerturbMode, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{self, Dataset, Prepared};

/// Rows of graph signals keyed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub examples: Vec<String>,
    pub nodes: Vec<usize>,
    /// `examples × nodes`.
    pub values: Array2<f64>,
}

impl SignalMatrix {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("`{}`: {e}", path.display())))?;
        let bad = |line: usize, msg: &str| CliError::invalid(format!("{}:{line}: {msg}", path.display()));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty signal file"))?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("example") {
            return Err(bad(1, "header must start with `example`"));
        }
        let nodes: Vec<usize> = cols
            .map(|c| c.trim().parse().map_err(|_| bad(1, &format!("column `{c}` is not a node id"))))
            .collect::<Result<_>>()?;
        let mut examples = Vec::new();
        let mut flat = Vec::new();
        for (i, line) in lines {
            let mut cells = line.split(',');
            examples.push(cells.next().unwrap_or_default().trim().to_string());
            let before = flat.len();
            for c in cells {
                flat.push(c.trim().parse::<f64>().map_err(|_| bad(i + 1, &format!("`{c}` is not a number")))?);
            }
            if flat.len() - before != nodes.len() {
                return Err(bad(i + 1, &format!("expected {} values", nodes.len())));
            }
        }
        let values = Array2::from_shape_vec((examples.len(), nodes.len()), flat).expect("row lengths checked");
        Ok(SignalMatrix { examples, nodes, values })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("example");
        for v in &self.nodes {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
        for (e, row) in self.examples.iter().zip(self.values.rows()) {
            s.push_str(e);
            for x in row {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_csv())?)
    }

    fn column_of(&self) -> BTreeMap<usize, usize> {
        self.nodes.iter().enumerate().map(|(c, &v)| (v, c)).collect()
    }
}

/// Ground truth matching one of the metric families.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// Target node id per example.
    Ranking(Vec<(String, usize)>),
    Regression(SignalMatrix),
    /// `(node, label)` pairs.
    Classification(Vec<(usize, usize)>),
}

fn read_pairs(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("`{}`: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::invalid(format!("{}:{}: bad row `{line}`", path.display(), i + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        out.push((a.trim().to_string(), b.trim().parse().map_err(|_| bad())?));
    }
    Ok(out)
}

impl Truth {
    pub fn read(path: &Path, kind: MetricKind) -> Result<Self> {
        Ok(match kind {
            MetricKind::Ranking => Truth::Ranking(read_pairs(path)?),
            MetricKind::Regression => Truth::Regression(SignalMatrix::read(path)?),
            MetricKind::Classification => Truth::Classification(
                read_pairs(path)?
                    .into_iter()
                    .map(|(n, y)| {
                        n.parse()
                            .map(|n| (n, y))
                            .map_err(|_| CliError::invalid(format!("{}: node `{n}` is not an id", path.display())))
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = match self {
            Truth::Ranking(rows) => rows.iter().fold(String::from("example,target\n"), |mut s, (e, t)| {
                let _ = writeln!(s, "{e},{t}");
                s
            }),
            Truth::Regression(m) => m.to_csv(),
            Truth::Classification(rows) => rows.iter().fold(String::from("node,label\n"), |mut s, (n, y)| {
                let _ = writeln!(s, "{n},{y}");
                s
            }),
        };
        Ok(fs::write(path, text)?)
    }

    /// Scores `pred` against this truth.
    pub fn evaluate(&self, pred: &SignalMatrix, ks: &[usize]) -> Result<MetricReport> {
        let col = pred.column_of();
        match self {
            Truth::Ranking(rows) => {
                let row_of: BTreeMap<&str, usize> = pred.examples.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
                let mut scores = Array2::zeros((rows.len(), pred.nodes.len()));
                let mut targets = Vec::with_capacity(rows.len());
                for (i, (e, t)) in rows.iter().enumerate() {
                    let r = *row_of.get(e.as_str()).ok_or_else(|| CliError::invalid(format!("truth example `{e}` has no prediction row")))?;
                    scores.row_mut(i).assign(&pred.values.row(r));
                    targets.push(*col.get(t).ok_or_else(|| CliError::invalid(format!("truth target {t} is not a prediction column")))?);
                }
                Ok(evaluate_ranking(&scores, &targets, ks)?)
            }
            Truth::Regression(truth) => {
                if truth.examples != pred.examples {
                    return Err(CliError::invalid("truth and predictions list different examples"));
                }
                let mut p = Vec::new();
                let mut t = Vec::new();
                for (c, v) in truth.nodes.iter().enumerate() {
                    let pc = *col.get(v).ok_or_else(|| CliError::invalid(format!("truth node {v} is not a prediction column")))?;
                    p.extend(pred.values.column(pc).iter().copied());
                    t.extend(truth.values.column(c).iter().copied());
                }
                Ok(evaluate_regression(&p, &t)?)
            }
            Truth::Classification(rows) => {
                let classes = pred.examples.len();
                let mut predicted = Vec::with_capacity(rows.len());
                let mut truth = Vec::with_capacity(rows.len());
                for &(v, y) in rows {
                    let c = *col.get(&v).ok_or_else(|| CliError::invalid(format!("truth node {v} is not a prediction column")))?;
                    let scores = pred.values.column(c);
                    let best = (0..classes).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
                    predicted.push(best);
                    truth.push(y);
                }
                Ok(evaluate_classification(&predicted, &truth, classes)?)
            }
        }
    }
}

/// Graph whose spectrum the predictions are analyzed in, as node ids plus
/// edges between positions in that id list.
pub fn analysis_graph(cfg: &RunConfig, data: &Dataset) -> (Vec<usize>, Vec<(usize, usize)>) {
    let (ids, raw): (Vec<usize>, Vec<(usize, usize)>) = match (cfg.task, data) {
        (TaskKind::Link, Dataset::Graph { graph, .. }) => {
            // items bought consecutively by the same user are linked
            let mut last: BTreeMap<usize, usize> = BTreeMap::new();
            let mut edges = Vec::new();
            for e in graph.events() {
                if let Some(prev) = last.insert(e.u, e.v) {
                    edges.push((prev, e.v));
                }
            }
            (pipeline::item_nodes(graph), edges)
        }
        (_, Dataset::Graph { graph, .. }) => {
            let edges = graph.initial_edges().iter().copied().chain(graph.events().iter().map(|e| (e.u, e.v))).collect();
            ((0..graph.num_nodes()).collect(), edges)
        }
        (_, Dataset::Traffic { readings, roads }) => ((0..readings.num_sensors()).collect(), roads.clone()),
    };
    let pos: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let edges = raw.iter().filter_map(|(u, v)| Some((*pos.get(u)?, *pos.get(v)?))).collect();
    (ids, edges)
}

/// Builds the basis from the configured graph; `nodes` of the result are
/// dataset node ids.
pub fn build_basis(cfg: &RunConfig, data: &Dataset) -> Result<SpectralBasis> {
    let (ids, edges) = analysis_graph(cfg, data);
    let lap = NormalizedLaplacian::from_edges(ids.len(), &edges, cfg.spectral.strict)?;
    let mut basis = match cfg.spectral.method {
        BasisMethod::Nystrom => nystrom_eig(&lap, &cfg.nystrom_config()?)?,
        BasisMethod::Exact => exact_basis(&lap, cfg.spectral.r.min(lap.n()), cfg.spectral.end.parse()?)?,
    };
    for v in basis.nodes.iter_mut() {
        *v = ids[*v];
    }
    Ok(basis)
}

pub fn select_band(cfg: &RunConfig, basis: &SpectralBasis) -> Result<Band> {
    match (&cfg.interpret.band, cfg.interpret.freq_above) {
        (Some(b), _) => Band::parse_range(b, basis.rank()).map_err(|e| match e {
            SpectralError::Config(m) => CliError::invalid(format!("interpret.band: {m}")),
            other => other.into(),
        }),
        (None, Some(f)) => Ok(Band::above(basis, f)),
        (None, None) => Err(CliError::invalid("interpret.band: set a band (`--band a..b`) or a cutoff (`--freq-above`)")),
    }
}

/// Columns of `m` holding the basis nodes, in basis order.
fn basis_columns(m: &SpectralBasis, s: &SignalMatrix, what: &str) -> Result<Vec<usize>> {
    let col = s.column_of();
    m.nodes
        .iter()
        .map(|v| col.get(v).copied().ok_or_else(|| CliError::invalid(format!("{what} has no column for basis node {v}"))))
        .collect()
}

fn gather(s: &SignalMatrix, row: usize, cols: &[usize]) -> Vec<f64> {
    cols.iter().map(|&c| s.values[[row, c]]).collect()
}

/// Applies the band perturbation to every row. `reference` donates its
/// band content in inter mode.
pub fn perturb(basis: &SpectralBasis, band: &Band, mode: PerturbMode, pred: &SignalMatrix, reference: Option<&SignalMatrix>) -> Result<SignalMatrix> {
    let cols = basis_columns(basis, pred, "predictions")?;
    let donor = match (mode, reference) {
        (PerturbMode::Inter, Some(r)) => {
            if r.examples != pred.examples {
                return Err(CliError::invalid("reference and predictions list different examples"));
            }
            Some((r, basis_columns(basis, r, "reference")?))
        }
        (PerturbMode::Inter, None) => return Err(CliError::invalid("interpret.mode: inter needs --reference")),
        (PerturbMode::Intra, _) => None,
    };
    let mut out = pred.clone();
    for i in 0..pred.examples.len() {
        let y = gather(pred, i, &cols);
        let z = match &donor {
            Some((r, rc)) => inter_perturb(basis, &gather(r, i, rc), &y, band)?,
            None => intra_perturb(basis, &y, band)?,
        };
        for (&c, x) in cols.iter().zip(z) {
            out.values[[i, c]] = x;
        }
    }
    Ok(out)
}

/// Mean over rows of the ℓ2-normalized magnitude of the transform.
pub fn mean_spectrum(basis: &SpectralBasis, s: &SignalMatrix) -> Result<Vec<f64>> {
    let cols = basis_columns(basis, s, "signal")?;
    let mut acc = vec![0.0; basis.rank()];
    for i in 0..s.examples.len() {
        let f = gft(basis, &gather(s, i, &cols), Direction::Forward)?;
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (a, x) in acc.iter_mut().zip(&f) {
                *a += x.abs() / norm;
            }
        }
    }
    let rows = s.examples.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / rows).collect())
}

/// Test-split predictions and truth of a checkpoint in the signal layouts.
pub fn export(cfg: &RunConfig, checkpoint: &Path) -> Result<(SignalMatrix, Truth)> {
    let data = pipeline::ingest(cfg)?;
    let clusters = pipeline::cluster(cfg, &data)?;
    let (prepared, mc) = pipeline::prepare(cfg, &data, &clusters)?;
    let model = pipeline::load_model(checkpoint, cfg.task, &mc)?;
    Ok(match (&prepared, &data) {
        (Prepared::Link(t), Dataset::Graph { graph, .. }) => {
            let items = pipeline::item_nodes(graph);
            let values = t.score(&model, &t.test)?;
            let examples: Vec<String> = (0..t.test.len()).map(|i| i.to_string()).collect();
            let truth = examples.iter().cloned().zip(t.test.iter().map(|h| items[h.target])).collect();
            (SignalMatrix { examples, nodes: items, values }, Truth::Ranking(truth))
        }
        (Prepared::Node(t), _) => {
            // scores for every node so the whole graph signal is available
            let all: Vec<usize> = (0..t.labels.len()).collect();
            let logits = t.logits(&model, &all)?;
            let examples = (0..t.classes).map(|c| c.to_string()).collect();
            let truth = t.test.iter().map(|&v| (v, t.labels[v])).collect();
            (
                SignalMatrix { examples, nodes: all, values: logits.t().to_owned() },
                Truth::Classification(truth),
            )
        }
        (Prepared::Traffic(t), _) => {
            let p = t.mean.len();
            let z = t.forecast(&model, &t.test)?;
            let rows = t.test.len() * t.horizons.len();
            let mut examples = Vec::with_capacity(rows);
            let mut pred = Array2::zeros((rows, p));
            let mut truth = Array2::zeros((rows, p));
            let mut r = 0;
            for &i in &t.test {
                for &h in &t.horizons {
                    examples.push(format!("{i}+{h}"));
                    for v in 0..p {
                        pred[[r, v]] = z[r * p + v] * t.std[v] + t.mean[v];
                        truth[[r, v]] = t.z[[i + h, v]] * t.std[v] + t.mean[v];
                    }
                    r += 1;
                }
            }
            let nodes: Vec<usize> = (0..p).collect();
            (
                SignalMatrix { examples: examples.clone(), nodes: nodes.clone(), values: pred },
                Truth::Regression(SignalMatrix { examples, nodes, values: truth }),
            )
        }
        _ => unreachable!("prepare matches the dataset to the task"),
    })
}

/// Inputs of one interpretation run.
#[derive(Debug, Clone, Default)]
pub struct InterpretArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub reference: Option<&'a Path>,
    pub truth: Option<&'a Path>,
}

/// Writes `perturbed.csv`, `metrics.csv` (metric, original, perturbed,
/// delta), `spectrum.csv` and, for checkpoints, the exported
/// `predictions.csv` and `truth.csv`. The basis goes to `basis.ckpt` unless
/// it was loaded from `spectral.basis`.
pub fn cmd_interpret(cfg: &RunConfig, args: &InterpretArgs) -> Result<Vec<(String, f64, f64)>> {
    let data = pipeline::ingest(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("resolved_config.toml"), cfg.to_toml())?;
    let (pred, truth) = match (args.checkpoint, args.predictions) {
        (Some(ck), None) => {
            let (p, t) = export(cfg, ck)?;
            p.write(&cfg.out.join("predictions.csv"))?;
            t.write(&cfg.out.join("truth.csv"))?;
            (p, Some(t))
        }
        (None, Some(path)) => {
            let p = SignalMatrix::read(path)?;
            let truth = match args.truth {
                Some(tp) => {
                    let kind = cfg.interpret.metric.unwrap_or(match cfg.task {
                        TaskKind::Link => MetricKind::Ranking,
                        TaskKind::Node => MetricKind::Classification,
                        TaskKind::Traffic => MetricKind::Regression,
                    });
                    Some(Truth::read(tp, kind)?)
                }
                None => None,
            };
            (p, truth)
        }
        _ => return Err(CliError::Usage("interpret needs exactly one of --checkpoint and --predictions".into())),
    };
    let basis = match &cfg.spectral.basis {
        Some(p) => io::load(p)?,
        None => {
            let b = build_basis(cfg, &data)?;
            io::save(&b, cfg.out.join("basis.ckpt"))?;
            b
        }
    };
    let band = select_band(cfg, &basis)?;
    let reference = args.reference.map(SignalMatrix::read).transpose()?;
    let perturbed = perturb(&basis, &band, cfg.interpret.mode, &pred, reference.as_ref())?;
    perturbed.write(&cfg.out.join("perturbed.csv"))?;

    let mut rows = Vec::new();
    if let Some(t) = &truth {
        let before = t.evaluate(&pred, &cfg.link.ks)?;
        let after = t.evaluate(&perturbed, &cfg.link.ks)?;
        for ((name, a), (_, b)) in before.entries().iter().zip(after.entries()) {
            rows.push((name.clone(), *a, *b));
        }
    }
    let mut s = String::from("metric,original,perturbed,delta\n");
    for (name, a, b) in &rows {
        let _ = writeln!(s, "{name},{a},{b},{}", b - a);
    }
    fs::write(cfg.out.join("metrics.csv"), s)?;

    let orig = mean_spectrum(&basis, &pred)?;
    let pert = mean_spectrum(&basis, &perturbed)?;
    let mut s = String::from("index,eigenvalue,in_band,original,perturbed\n");
    for (l, lambda) in basis.eigenvalues.iter().enumerate() {
        let in_band = band.indices().binary_search(&l).is_ok();
        let _ = writeln!(s, "{l},{lambda},{},{},{}", in_band as u8, orig[l], pert[l]);
    }
    fs::write(cfg.out.join("spectrum.csv"), s)?;
    Ok(rows)
}

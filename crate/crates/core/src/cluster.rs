//! Weighted K-means (linear-kernel weighted kernel K-means) over node
//! features, with inductive assignment of unseen nodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 8;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Weighted within-cluster squared distance after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Nearest centroid; ties go to the smallest cluster id.
    pub fn assign(&self, x: ArrayView1<f64>) -> Result<usize> {
        if x.len() != self.centroids.ncols() {
            return Err(Error::shape(format!(
                "feature vector has {} entries, centroids have {}",
                x.len(),
                self.centroids.ncols()
            )));
        }
        Ok(nearest(&self.centroids, x).0)
    }

    /// One-hot `N×K` cluster indicator matrix.
    pub fn one_hot(&self) -> Array2<f64> {
        one_hot(&self.assignment, self.k())
    }

    pub fn objective(&self, x: &Array2<f64>, weights: &[f64]) -> f64 {
        objective(x, weights, &self.centroids, &self.assignment)
    }

    /// Writes `assignment.csv` (one id per line) and `centroids.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut a = String::from("node,cluster\n");
        for (i, c) in self.assignment.iter().enumerate() {
            let _ = writeln!(a, "{i},{c}");
        }
        fs::write(dir.join("assignment.csv"), a)?;
        crate::dyngraph::write_features_csv(dir.join("centroids.csv"), &self.centroids)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let centroids = crate::dyngraph::load_features(dir.join("centroids.csv"))?;
        let text = fs::read_to_string(dir.join("assignment.csv"))?;
        let mut assignment = Vec::new();
        for (idx, line) in text.lines().enumerate().skip(1) {
            let cluster = line
                .split(',')
                .nth(1)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .filter(|&c| c < centroids.nrows())
                .ok_or_else(|| Error::Parse {
                    path: dir.join("assignment.csv"),
                    line: idx + 1,
                    message: format!("bad assignment row `{line}`"),
                })?;
            assignment.push(cluster);
        }
        Ok(ClusterModel {
            centroids,
            assignment,
            objective_trace: Vec::new(),
        })
    }
}

pub fn one_hot(assignment: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((assignment.len(), k));
    for (i, &c) in assignment.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn objective(x: &Array2<f64>, weights: &[f64], centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| weights[i] * sq_dist(x.row(i), centroids.row(k)))
        .sum()
}

/// Fits `k` clusters to the rows of `x`.
///
/// Seeding: the first centroid is a seeded random row, each further centroid
/// is the row with the largest weighted distance to its nearest chosen
/// centroid. Lloyd iterations run until the assignment stops changing or
/// [`MAX_ITERATIONS`] is hit. A cluster left empty by an update is re-seeded
/// at the row farthest from its current centroid.
pub fn fit_clusters(x: &Array2<f64>, k: usize, weights: &[f64], seed: u64) -> Result<ClusterModel> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cluster count {k} must be in 1..={n}")));
    }
    if weights.len() != n {
        return Err(Error::shape(format!("{} weights for {} rows", weights.len(), n)));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("cluster weights must be positive and finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let mut best = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let score = weights[i] * min_d[i];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (next, _) = best.expect("k <= n leaves a candidate");
        chosen.push(next);
        for i in 0..n {
            min_d[i] = min_d[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, x.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&x.row(i));
    }

    let mut assignment: Vec<usize> = (0..n).map(|i| nearest(&centroids, x.row(i)).0).collect();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        update_centroids(x, weights, &mut centroids, &mut assignment);
        trace.push(objective(x, weights, &centroids, &assignment));
        let next: Vec<usize> = (0..n).map(|i| nearest(&centroids, x.row(i)).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(ClusterModel {
        centroids,
        assignment,
        objective_trace: trace,
    })
}

fn update_centroids(x: &Array2<f64>, weights: &[f64], centroids: &mut Array2<f64>, assignment: &mut [usize]) {
    let k = centroids.nrows();
    loop {
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut mass = Array1::<f64>::zeros(k);
        for (i, &c) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row.scaled_add(weights[i], &x.row(i));
            mass[c] += weights[i];
        }
        let empty = (0..k).find(|&c| mass[c] == 0.0);
        match empty {
            None => {
                for c in 0..k {
                    let row = sums.row(c).mapv(|v| v / mass[c]);
                    centroids.row_mut(c).assign(&row);
                }
                return;
            }
            Some(c) => {
                // move the farthest point (from its own centroid) into the empty cluster
                let far = (0..assignment.len())
                    .filter(|&i| mass[assignment[i]] > weights[i])
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(assignment[a]));
                        let db = sq_dist(x.row(b), centroids.row(assignment[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                let Some(far) = far else {
                    return;
                };
                log::debug!("re-seeding empty cluster {c} at row {far}");
                assignment[far] = c;
                centroids.row_mut(c).assign(&x.row(far));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [[-4.0, 0.0], [4.0, 1.0]];
        let mut x = Array2::zeros((2 * n_per, 2));
        let mut labels = Vec::new();
        for b in 0..2 {
            for i in 0..n_per {
                let r = b * n_per + i;
                x[[r, 0]] = centers[b][0] + noise.sample(&mut rng);
                x[[r, 1]] = centers[b][1] + noise.sample(&mut rng);
                labels.push(b);
            }
        }
        (x, labels)
    }

    #[test]
    fn single_cluster_is_weighted_mean() {
        let x = array![[0.0, 0.0], [2.0, 4.0], [4.0, 8.0]];
        let w = [1.0, 1.0, 2.0];
        let m = fit_clusters(&x, 1, &w, 3).unwrap();
        assert_eq!(m.assignment, vec![0, 0, 0]);
        assert!((m.centroids[[0, 0]] - 2.5).abs() < 1e-12);
        assert!((m.centroids[[0, 1]] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let x = array![[0.0], [1.0], [5.0], [9.0]];
        let w = [1.0; 4];
        let m = fit_clusters(&x, 4, &w, 0).unwrap();
        let mut ids = m.assignment.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert_eq!(m.objective(&x, &w), 0.0);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (x, labels) = blobs(40, 11);
        let w = vec![1.0; x.nrows()];
        let m = fit_clusters(&x, 2, &w, 5).unwrap();
        let first = m.assignment[0];
        for (a, l) in m.assignment.iter().zip(&labels) {
            assert_eq!(*a == first, *l == labels[0]);
        }
        // every single-point relabeling increases the objective
        let base = m.objective(&x, &w);
        for i in 0..x.nrows() {
            let mut alt = m.assignment.clone();
            alt[i] = 1 - alt[i];
            assert!(objective(&x, &w, &m.centroids, &alt) > base);
        }
    }

    #[test]
    fn assign_ties_go_to_lowest_id() {
        let m = ClusterModel {
            centroids: array![[-1.0, 0.0], [1.0, 0.0], [5.0, 5.0]],
            assignment: vec![],
            objective_trace: vec![],
        };
        assert_eq!(m.assign(array![0.0, 3.0].view()).unwrap(), 0);
        assert_eq!(m.assign(array![5.0, 5.0].view()).unwrap(), 2);
        assert!(m.assign(array![0.0].view()).is_err());
    }

    #[test]
    fn held_out_points_follow_blob() {
        let (x, _) = blobs(30, 2);
        let w = vec![1.0; x.nrows()];
        let m = fit_clusters(&x, 2, &w, 9).unwrap();
        let (probe, _) = blobs(5, 77);
        for r in probe.rows() {
            let brute = (0..2)
                .map(|k| (k, sq_dist(r, m.centroids.row(k))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            assert_eq!(m.assign(r).unwrap(), brute);
        }
    }

    #[test]
    fn invalid_inputs() {
        let x = array![[0.0], [1.0]];
        assert!(fit_clusters(&x, 0, &[1.0, 1.0], 0).is_err());
        assert!(fit_clusters(&x, 3, &[1.0, 1.0], 0).is_err());
        assert!(fit_clusters(&x, 1, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn duplicate_points_fill_every_cluster() {
        // identical rows leave clusters empty after the first update
        let x = array![[0.0], [0.0], [0.0], [10.0]];
        let m = fit_clusters(&x, 3, &[1.0; 4], 1).unwrap();
        assert!(m.assignment.iter().all(|&c| c < 3));
    }

    #[test]
    fn save_and_load() {
        let (x, _) = blobs(5, 3);
        let m = fit_clusters(&x, 2, &vec![1.0; 10], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = ClusterModel::load(dir.path()).unwrap();
        assert_eq!(back.assignment, m.assignment);
        assert_eq!(back.centroids, m.centroids);
    }
}

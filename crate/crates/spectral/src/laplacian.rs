use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Result, SpectralError};

/// Sparse `L = I − D^{-1/2} A D^{-1/2}` of an unweighted undirected graph,
/// stored as compressed rows of the off-diagonal part.
///
/// Isolated nodes have no defined normalization. In strict mode they are an
/// error; otherwise they are dropped and `nodes` maps retained positions back
/// to the input ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    nodes: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedLaplacian {
    /// Builds from an edge list over ids `0..n`. Duplicate and reversed
    /// edges collapse; self loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], strict: bool) -> Result<Self> {
        let mut adj = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(SpectralError::Shape(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let mut nodes = Vec::with_capacity(n);
        for (u, nb) in adj.iter().enumerate() {
            if nb.is_empty() {
                if strict {
                    return Err(SpectralError::IsolatedNode(u));
                }
            } else {
                nodes.push(u);
            }
        }
        if nodes.len() < n {
            log::warn!("dropped {} isolated nodes from the Laplacian", n - nodes.len());
        }
        if nodes.is_empty() {
            return Err(SpectralError::Config("graph has no edges".into()));
        }
        // isolated nodes are never neighbors, so position lookups are total
        let mut pos = vec![usize::MAX; n];
        for (i, &u) in nodes.iter().enumerate() {
            pos[u] = i;
        }
        let inv_sqrt: Vec<f64> = adj.iter().map(|nb| 1.0 / (nb.len() as f64).sqrt()).collect();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &u in &nodes {
            for &v in &adj[u] {
                cols.push(pos[v]);
                // operands in a fixed order keep the matrix bitwise symmetric
                let (a, b) = if u < v { (u, v) } else { (v, u) };
                vals.push(-(inv_sqrt[a] * inv_sqrt[b]));
            }
            row_ptr.push(cols.len());
        }
        Ok(NormalizedLaplacian { nodes, row_ptr, cols, vals })
    }

    /// Number of retained nodes.
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Input ids of the retained nodes, in row order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// `L_ii`, which is 1 for every retained node.
    pub fn diag(&self, _i: usize) -> f64 {
        1.0
    }

    /// Off-diagonal entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.vals.len() + self.n()
    }

    /// `L x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| x[i] + self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Restricts a signal over the input ids to the retained nodes.
    pub fn restrict(&self, signal: &[f64]) -> Result<Vec<f64>> {
        match self.nodes.last() {
            Some(&last) if last >= signal.len() => {
                Err(SpectralError::Shape(format!("signal of length {} misses node {last}", signal.len())))
            }
            _ => Ok(self.nodes.iter().map(|&u| signal[u]).collect()),
        }
    }
}

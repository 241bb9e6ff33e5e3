//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are `1x1`. The op set
//! is small and specialized for graph attention: row gathers, segment
//! softmax/sum keyed by query, and per-head reductions, so one encoder layer
//! records a constant number of nodes regardless of graph size.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// a · b
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// m×n + 1×n
    AddRow(Var, Var),
    /// m×n ∘ 1×n
    MulRow(Var, Var),
    /// m×n ∘ m×1
    MulCol(Var, Var),
    Scale(Var, f64),
    /// m×n + 1×1
    AddScalar(Var, Var),
    LeakyRelu(Var, f64),
    Log(Var),
    Square(Var),
    /// φ·log(1 + exp(x/φ)) with φ = exp(log_phi), log_phi is 1×n
    ScaledSoftplus(Var, Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// rows summed into `n` segments
    SegmentSum(Var, Rc<Vec<usize>>),
    /// column-wise softmax within each segment
    SegmentSoftmax(Var, Rc<Vec<usize>>, usize),
    /// m×(h·w) -> m×h, summing each block of w columns
    BlockSum(Var, usize),
    /// m×h -> m×(h·w), repeating each column w times
    BlockExpand(Var, usize),
    Sum(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Rc<Vec<(usize, usize)>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros when `v` did not
    /// influence the output.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row), &[a, row])
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.shape(col).1, 1);
        let value = self.value(a) * self.value(col);
        self.push(value, Op::MulCol(a, col), &[a, col])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// `a` plus the 1×1 value `s` broadcast everywhere.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a, s), &[a, s])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a), &[a])
    }

    pub fn scaled_softplus(&mut self, x: Var, log_phi: Var) -> Var {
        let phi = self.value(log_phi).mapv(f64::exp);
        let mut value = self.value(x).clone();
        Zip::from(value.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row)
                .and(phi.row(0))
                .for_each(|v, &p| *v = p * softplus(*v / p));
        });
        self.push(value, Op::ScaledSoftplus(x, log_phi), &[x, log_phi])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, idx), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start, end), &[a])
    }

    /// Sums row `p` of `a` into output row `seg[p]`; the output has `n` rows.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<Vec<usize>>, n: usize) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((n, src.ncols()));
        for (p, &g) in seg.iter().enumerate() {
            let mut dst = value.row_mut(g);
            dst += &src.row(p);
        }
        self.push(value, Op::SegmentSum(a, seg), &[a])
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    /// Uses max subtraction per segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<Vec<usize>>, n: usize) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut max = Array2::from_elem((n, cols), f64::NEG_INFINITY);
        for (p, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let x = src[[p, c]];
                if x > max[[g, c]] {
                    max[[g, c]] = x;
                }
            }
        }
        let mut value = Array2::zeros(src.dim());
        let mut denom = Array2::<f64>::zeros((n, cols));
        for (p, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (src[[p, c]] - max[[g, c]]).exp();
                value[[p, c]] = e;
                denom[[g, c]] += e;
            }
        }
        for (p, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                value[[p, c]] /= denom[[g, c]];
            }
        }
        self.push(value, Op::SegmentSoftmax(a, seg, n), &[a])
    }

    pub fn block_sum(&mut self, a: Var, width: usize) -> Var {
        let src = self.value(a);
        let blocks = src.ncols() / width;
        let mut value = Array2::zeros((src.nrows(), blocks));
        for r in 0..src.nrows() {
            for b in 0..blocks {
                let mut acc = 0.0;
                for c in b * width..(b + 1) * width {
                    acc += src[[r, c]];
                }
                value[[r, b]] = acc;
            }
        }
        self.push(value, Op::BlockSum(a, width), &[a])
    }

    pub fn block_expand(&mut self, a: Var, width: usize) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((src.nrows(), src.ncols() * width));
        for r in 0..src.nrows() {
            for b in 0..src.ncols() {
                let x = src[[r, b]];
                for c in b * width..(b + 1) * width {
                    value[[r, c]] = x;
                }
            }
        }
        self.push(value, Op::BlockExpand(a, width), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmaxRows(a), &[a])
    }

    /// Column vector of the listed `(row, col)` entries.
    pub fn pick(&mut self, a: Var, at: Rc<Vec<(usize, usize)>>) -> Var {
        let src = self.value(a);
        let value = Array2::from_shape_fn((at.len(), 1), |(i, _)| src[at[i]]);
        self.push(value, Op::Pick(a, at), &[a])
    }

    /// Propagates adjoints from the scalar `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones(self.nodes[out.0].value.dim()));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                self.accumulate(grads, *a, g.dot(&val(*b).t()));
                self.accumulate(grads, *b, val(*a).t().dot(g));
            }
            Op::MatMulBt(a, b) => {
                self.accumulate(grads, *a, g.dot(val(*b)));
                self.accumulate(grads, *b, g.t().dot(val(*a)));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g * val(*b));
                self.accumulate(grads, *b, g * val(*a));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                self.accumulate(grads, *a, g * val(*row));
                let prod = g * val(*a);
                self.accumulate(grads, *row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                self.accumulate(grads, *a, g * val(*col));
                let prod = g * val(*a);
                self.accumulate(grads, *col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddScalar(a, sc) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *sc, Array2::from_elem((1, 1), g.sum()));
            }
            Op::LeakyRelu(a, slope) => {
                let d = Zip::from(g)
                    .and(val(*a))
                    .map_collect(|&gi, &x| if x > 0.0 { gi } else { slope * gi });
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => self.accumulate(grads, *a, g / val(*a)),
            Op::Square(a) => self.accumulate(grads, *a, g * val(*a) * 2.0),
            Op::ScaledSoftplus(x, log_phi) => {
                let xv = val(*x);
                let phi = val(*log_phi).mapv(f64::exp);
                let mut dx = Array2::zeros(xv.dim());
                let mut dlog = Array2::zeros(phi.dim());
                for r in 0..xv.nrows() {
                    for c in 0..xv.ncols() {
                        let p = phi[[0, c]];
                        let z = xv[[r, c]] / p;
                        let sig = sigmoid(z);
                        dx[[r, c]] = g[[r, c]] * sig;
                        // d/dlogφ [φ sp(x/φ)] = φ (sp(z) - z σ(z))
                        dlog[[0, c]] += g[[r, c]] * p * (softplus(z) - z * sig);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *log_phi, dlog);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut dst = d.row_mut(i);
                    dst += &g.row(r);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).nrows();
                    self.accumulate(grads, *p, g.slice(s![start..start + rows, ..]).to_owned());
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = val(*p).ncols();
                    self.accumulate(grads, *p, g.slice(s![.., start..start + cols]).to_owned());
                    start += cols;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, seg) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (p, &gi) in seg.iter().enumerate() {
                    d.row_mut(p).assign(&g.row(gi));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSoftmax(a, seg, n) => {
                let y = &node.value;
                let cols = y.ncols();
                let mut dot = Array2::<f64>::zeros((*n, cols));
                for (p, &gi) in seg.iter().enumerate() {
                    for c in 0..cols {
                        dot[[gi, c]] += y[[p, c]] * g[[p, c]];
                    }
                }
                let mut d = Array2::zeros(y.dim());
                for (p, &gi) in seg.iter().enumerate() {
                    for c in 0..cols {
                        d[[p, c]] = y[[p, c]] * (g[[p, c]] - dot[[gi, c]]);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::BlockSum(a, width) => {
                let blocks = g.ncols();
                let mut d = Array2::zeros((g.nrows(), blocks * width));
                for r in 0..g.nrows() {
                    for b in 0..blocks {
                        for c in b * width..(b + 1) * width {
                            d[[r, c]] = g[[r, b]];
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::BlockExpand(a, width) => {
                let blocks = val(*a).ncols();
                let mut d = Array2::zeros((g.nrows(), blocks));
                for r in 0..g.nrows() {
                    for b in 0..blocks {
                        let mut acc = 0.0;
                        for c in b * width..(b + 1) * width {
                            acc += g[[r, c]];
                        }
                        d[[r, b]] = acc;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let total: f64 = drow.sum();
                    Zip::from(&mut drow)
                        .and(yrow)
                        .for_each(|di, &yi| *di -= yi.exp() * total);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Pick(a, at) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (i, &(r, c)) in at.iter().enumerate() {
                    d[[r, c]] += g[[i, 0]];
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

/// log(1 + eˣ) without overflow: max(x, 0) + log1p(e^{-|x|}).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

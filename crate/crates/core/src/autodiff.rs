//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Each recorded node
//! owns its forward value and a closure mapping the upstream gradient onto
//! gradients for its parents. [`Tape::backward`] walks the nodes in reverse,
//! which is a valid topological order because parents are always recorded
//! before their children.
//!
//! Scalars are `1×1` matrices. Column vectors are `N×1`.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Matrix) -> Vec<Matrix>>;

struct Node {
    value: Matrix,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.01)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed in terms of the pre-activation input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sparse weighted matrix stored as `(row, col, weight)` triplets.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn mul_dense(&self, dense: &Matrix) -> Matrix {
        let mut out = Matrix::zeros((self.rows, dense.ncols()));
        for &(r, c, w) in &self.entries {
            let src = dense.row(c);
            let mut dst = out.row_mut(r);
            dst.scaled_add(w, &src);
        }
        out
    }

    pub fn transpose_mul_dense(&self, dense: &Matrix) -> Matrix {
        let mut out = Matrix::zeros((self.cols, dense.ncols()));
        for &(r, c, w) in &self.entries {
            let src = dense.row(r);
            let mut dst = out.row_mut(c);
            dst.scaled_add(w, &src);
        }
        out
    }
}

/// Neighbor lists for attention aggregation: `incoming[i]` holds the sources `j` of edges `j → i`.
#[derive(Debug, Clone, Default)]
pub struct Neighborhood {
    pub incoming: Vec<Vec<usize>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the differentiated root with respect to `v`; zeros when `v` did not contribute.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value,
            parents: parents.into_iter().map(|v| v.0).collect(),
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input value. Gradients are available for every leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let n = root.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::ones((1, 1)));
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimension");
        let out = av.dot(&bv);
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| vec![g.dot(&bv.t()), av.t().dot(g)])),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(out, vec![a, b], Some(Box::new(|g| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a) - self.value(b);
        self.push(out, vec![a, b], Some(Box::new(|g| vec![g.clone(), -g])))
    }

    /// Adds a `1×c` row vector to every row of an `N×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row bias shape");
        let out = self.value(a) + self.value(row);
        self.push(
            out,
            vec![a, row],
            Some(Box::new(|g| vec![g.clone(), g.sum_axis(Axis(0)).insert_axis(Axis(0))])),
        )
    }

    /// Scales each row `i` of an `N×d` matrix by the entry `w[i]` of an `N×1` column.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(w), (n, 1), "mul_col weight shape");
        let av = self.value(a).clone();
        let wv = self.value(w).clone();
        let out = &av * &wv;
        self.push(
            out,
            vec![a, w],
            Some(Box::new(move |g| {
                vec![g * &wv, (g * &av).sum_axis(Axis(1)).insert_axis(Axis(1))]
            })),
        )
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "hadamard shapes");
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = &av * &bv;
        self.push(out, vec![a, b], Some(Box::new(move |g| vec![g * &bv, g * &av])))
    }

    /// Elementwise product with a constant matrix that receives no gradient.
    pub fn mul_const(&mut self, a: Var, mask: Rc<Matrix>) -> Var {
        assert_eq!(self.shape(a), mask.dim(), "mul_const shapes");
        let out = self.value(a) * mask.as_ref();
        self.push(out, vec![a], Some(Box::new(move |g| vec![g * mask.as_ref()])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, vec![a], Some(Box::new(move |g| vec![g * c])))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, vec![a], Some(Box::new(|g| vec![g.clone()])))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return self.push(
                self.value(a).clone(),
                vec![a],
                Some(Box::new(|g| vec![g.clone()])),
            );
        }
        let x = self.value(a).clone();
        let y = x.mapv(|v| act.apply(v));
        let yc = y.clone();
        self.push(
            y,
            vec![a],
            Some(Box::new(move |g| {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(&x)
                    .and(&yc)
                    .for_each(|d, &x, &y| *d *= act.derivative(x, y));
                vec![d]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, vec![a], Some(Box::new(|g| vec![g.t().to_owned()])))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (na, ca) = self.shape(a);
        let (nb, _) = self.shape(b);
        assert_eq!(na, nb, "concat_cols row counts");
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat shapes checked");
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                vec![g.slice(s![.., ..ca]).to_owned(), g.slice(s![.., ca..]).to_owned()]
            })),
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: Rc<Vec<usize>>) -> Var {
        let av = self.value(a);
        let (n, c) = av.dim();
        let out = av.select(Axis(0), &rows);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                let mut d = Matrix::zeros((n, c));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                vec![d]
            })),
        )
    }

    /// Replaces the rows flagged in `mask` with the `1×d` `token`.
    pub fn replace_rows(&mut self, x: Var, token: Var, mask: Rc<Vec<bool>>) -> Var {
        let (n, d) = self.shape(x);
        assert_eq!(self.shape(token), (1, d), "replace_rows token shape");
        assert_eq!(mask.len(), n, "replace_rows mask length");
        let mut out = self.value(x).clone();
        let tok = self.value(token).row(0).to_owned();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).assign(&tok);
            }
        }
        self.push(
            out,
            vec![x, token],
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                let mut dt = Matrix::zeros((1, d));
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        let mut acc = dt.row_mut(0);
                        acc += &g.row(i);
                        dx.row_mut(i).fill(0.0);
                    }
                }
                vec![dx, dt]
            })),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g| vec![Matrix::from_elem(shape, g[[0, 0]])])),
        )
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn sq_sum(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let out = Matrix::from_elem((1, 1), av.iter().map(|v| v * v).sum());
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g| vec![&av * (2.0 * g[[0, 0]])])),
        )
    }

    /// Sparse-dense product `A · h` with a constant sparse `A`.
    pub fn spmm(&mut self, adj: Rc<SparseMatrix>, h: Var) -> Var {
        assert_eq!(adj.cols, self.shape(h).0, "spmm inner dimension");
        let out = adj.mul_dense(self.value(h));
        self.push(
            out,
            vec![h],
            Some(Box::new(move |g| vec![adj.transpose_mul_dense(g)])),
        )
    }

    /// Additive attention aggregation over incoming neighbors.
    ///
    /// For each node `i` with neighbors `j`, `e_ij = leaky(dst_score_i + src_score_j)`,
    /// `a_ij = softmax_j(e_ij)` and the output row is `Σ_j a_ij · msg_j`. Nodes with
    /// no neighbors receive a zero row.
    pub fn attention_aggregate(
        &mut self,
        msg: Var,
        src_score: Var,
        dst_score: Var,
        nbrs: Rc<Neighborhood>,
        slope: f64,
    ) -> Var {
        let (n, d) = self.shape(msg);
        assert_eq!(self.shape(src_score), (n, 1));
        assert_eq!(self.shape(dst_score), (n, 1));
        assert_eq!(nbrs.incoming.len(), n);
        let mv = self.value(msg).clone();
        let ss = self.value(src_score).clone();
        let ds = self.value(dst_score).clone();
        let leaky = |x: f64| if x > 0.0 { x } else { slope * x };

        // attention weights and pre-activation logits, flattened in neighbor order
        let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut logits: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut out = Matrix::zeros((n, d));
        for i in 0..n {
            let js = &nbrs.incoming[i];
            let z: Vec<f64> = js.iter().map(|&j| ds[[i, 0]] + ss[[j, 0]]).collect();
            let e: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|&v| (v - max).exp()).collect();
            let total: f64 = w.iter().sum();
            let a: Vec<f64> = w.iter().map(|&v| v / total).collect();
            for (&j, &aij) in js.iter().zip(&a) {
                let mut row = out.row_mut(i);
                row.scaled_add(aij, &mv.row(j));
            }
            alpha.push(a);
            logits.push(z);
        }

        self.push(
            out,
            vec![msg, src_score, dst_score],
            Some(Box::new(move |g| {
                let mut dmsg = Matrix::zeros((n, d));
                let mut dsrc = Matrix::zeros((n, 1));
                let mut ddst = Matrix::zeros((n, 1));
                for i in 0..n {
                    let js = &nbrs.incoming[i];
                    if js.is_empty() {
                        continue;
                    }
                    let gi = g.row(i);
                    let a = &alpha[i];
                    let da: Vec<f64> = js.iter().map(|&j| gi.dot(&mv.row(j))).collect();
                    let weighted: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for (k, &j) in js.iter().enumerate() {
                        let mut row = dmsg.row_mut(j);
                        row.scaled_add(a[k], &gi);
                        let de = a[k] * (da[k] - weighted);
                        let dz = if logits[i][k] > 0.0 { de } else { slope * de };
                        dsrc[[j, 0]] += dz;
                        ddst[[i, 0]] += dz;
                    }
                }
                vec![dmsg, dsrc, ddst]
            })),
        )
    }

    /// Student-t soft assignment of rows of `h` (`N×D`) to prototypes `c` (`K×D`).
    pub fn student_t_assign(&mut self, h: Var, c: Var, alpha: f64) -> Var {
        let hv = self.value(h).clone();
        let cv = self.value(c).clone();
        let (n, dim) = hv.dim();
        let (k, dc) = cv.dim();
        assert_eq!(dim, dc, "prototype dimension");
        let power = -(alpha + 1.0) / 2.0;
        let mut dist = Matrix::zeros((n, k));
        let mut kern = Matrix::zeros((n, k));
        for i in 0..n {
            for j in 0..k {
                let d2: f64 = hv
                    .row(i)
                    .iter()
                    .zip(cv.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dist[[i, j]] = d2;
                kern[[i, j]] = (1.0 + d2 / alpha).powf(power);
            }
        }
        let totals = kern.sum_axis(Axis(1));
        let mut q = kern.clone();
        for i in 0..n {
            let t = totals[i];
            q.row_mut(i).mapv_inplace(|v| v / t);
        }
        let qc = q.clone();
        self.push(
            q,
            vec![h, c],
            Some(Box::new(move |g| {
                let mut dh = Matrix::zeros((n, dim));
                let mut dc = Matrix::zeros((k, dim));
                for i in 0..n {
                    let gq: f64 = (0..k).map(|j| g[[i, j]] * qc[[i, j]]).sum();
                    for j in 0..k {
                        // dL/dkernel then chain through the distance
                        let dk = (g[[i, j]] - gq) / totals[i];
                        let dd = dk * kern[[i, j]] * (-(alpha + 1.0) / (2.0 * alpha))
                            / (1.0 + dist[[i, j]] / alpha);
                        for t in 0..dim {
                            let diff = hv[[i, t]] - cv[[j, t]];
                            dh[[i, t]] += 2.0 * dd * diff;
                            dc[[j, t]] -= 2.0 * dd * diff;
                        }
                    }
                }
                vec![dh, dc]
            })),
        )
    }

    /// `Σ p log(p / max(q, floor))` with a constant target `p`; entries with `p = 0` contribute 0.
    pub fn kl_div(&mut self, p: Rc<Matrix>, q: Var, floor: f64) -> Var {
        assert_eq!(p.dim(), self.shape(q), "kl shapes");
        let qv = self.value(q).clone();
        let mut total = 0.0;
        for (&pi, &qi) in p.iter().zip(qv.iter()) {
            if pi > 0.0 {
                total += pi * (pi / qi.max(floor)).ln();
            }
        }
        self.push(
            Matrix::from_elem((1, 1), total),
            vec![q],
            Some(Box::new(move |g| {
                let scale = g[[0, 0]];
                let mut d = Matrix::zeros(qv.dim());
                ndarray::Zip::from(&mut d)
                    .and(p.as_ref())
                    .and(&qv)
                    .for_each(|d, &pi, &qi| {
                        if pi > 0.0 && qi > floor {
                            *d = -scale * pi / qi;
                        }
                    });
                vec![d]
            })),
        )
    }

    /// Mean binary cross-entropy of probabilities `prob` (`N×1`) on the given `(row, label)` pairs,
    /// after clipping probabilities into `[clip, 1 − clip]`.
    pub fn bce(&mut self, prob: Var, targets: Rc<Vec<(usize, f64)>>, clip: f64) -> Var {
        let pv = self.value(prob).clone();
        assert_eq!(pv.ncols(), 1, "bce expects a column of probabilities");
        let m = targets.len() as f64;
        let mut total = 0.0;
        for &(i, y) in targets.iter() {
            let p = pv[[i, 0]].clamp(clip, 1.0 - clip);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        self.push(
            Matrix::from_elem((1, 1), total / m),
            vec![prob],
            Some(Box::new(move |g| {
                let scale = g[[0, 0]] / m;
                let mut d = Matrix::zeros(pv.dim());
                for &(i, y) in targets.iter() {
                    let p = pv[[i, 0]];
                    if p > clip && p < 1.0 - clip {
                        d[[i, 0]] += scale * (-y / p + (1.0 - y) / (1.0 - p));
                    }
                }
                vec![d]
            })),
        )
    }

    /// Column standardization scaled by `1/√N`, so that `Yᵀ Y` is the column correlation matrix.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a).clone();
        let (n, d) = x.dim();
        let nf = n as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty rows");
        let centered = &x - &mean.clone().insert_axis(Axis(0));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty rows");
        let std = var.mapv(|v| (v + eps).sqrt());
        let xhat = &centered / &std.clone().insert_axis(Axis(0));
        let out = &xhat / nf.sqrt();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                let gh = g / nf.sqrt();
                let mean_g = gh.mean_axis(Axis(0)).expect("rows");
                let mean_gx = (&gh * &xhat).mean_axis(Axis(0)).expect("rows");
                let mut dx = Matrix::zeros((n, d));
                for i in 0..n {
                    for t in 0..d {
                        dx[[i, t]] = (gh[[i, t]] - mean_g[t] - xhat[[i, t]] * mean_gx[t]) / std[t];
                    }
                }
                vec![dx]
            })),
        )
    }
}

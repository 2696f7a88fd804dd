//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records one forward evaluation. Every op pushes a node holding
//! its value; [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients. Parameters enter through [`Tape::param`] and their gradients are
//! returned indexed by [`ParamId`].

use super::mat::{dot, matmul, matmul_at, matmul_bt, Mat};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn out_len(&self, len: usize) -> usize {
        let padded = len + self.pad_left + self.pad_right;
        let span = self.dilation * (self.kernel - 1) + 1;
        if padded < span {
            0
        } else {
            (padded - span) / self.stride + 1
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Broadcast a `1×m` row over every row of an `n×m` matrix.
    AddRow(Var, Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Per-row layer normalization with learned gain and shift rows.
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    /// Time-major 1-D convolution: `x` is `L×Cin`, weight is `Cout×(K·Cin)`.
    Conv1d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cin: usize,
    },
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// `out[i] = a[idx[i]]`
    GatherRows(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat>,
    },
    /// Weighted softmax cross-entropy of a single `1×C` logit row.
    SoftmaxXent {
        logits: Var,
        target: usize,
        weight: f64,
        probs: Vec<f64>,
    },
    /// Mean absolute error against a constant target.
    L1 { pred: Var, target: Mat },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for the parameters touched by one backward pass.
pub struct Grads {
    pub by_param: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const LN_EPS: f64 = 1e-5;

fn im2col(x: &Mat, geom: &ConvGeom) -> Mat {
    let len = x.rows;
    let cin = x.cols;
    let out_len = geom.out_len(len);
    let width = geom.kernel * cin;
    let mut cols = Mat::zeros(out_len, width);
    for t in 0..out_len {
        let base = (t * geom.stride) as isize - geom.pad_left as isize;
        let row = &mut cols.data[t * width..(t + 1) * width];
        for k in 0..geom.kernel {
            let src = base + (k * geom.dilation) as isize;
            if src >= 0 && (src as usize) < len {
                row[k * cin..(k + 1) * cin].copy_from_slice(x.row(src as usize));
            }
        }
    }
    cols
}

fn col2im(dcols: &Mat, geom: &ConvGeom, len: usize, cin: usize) -> Mat {
    let mut dx = Mat::zeros(len, cin);
    for t in 0..dcols.rows {
        let base = (t * geom.stride) as isize - geom.pad_left as isize;
        let row = dcols.row(t);
        for k in 0..geom.kernel {
            let src = base + (k * geom.dilation) as isize;
            if src >= 0 && (src as usize) < len {
                let dst = dx.row_mut(src as usize);
                for (d, s) in dst.iter_mut().zip(&row[k * cin..(k + 1) * cin]) {
                    *d += s;
                }
            }
        }
    }
    dx
}

fn head_slice(m: &Mat, h: usize, dh: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, dh);
    for r in 0..m.rows {
        out.row_mut(r)
            .copy_from_slice(&m.row(r)[h * dh..(h + 1) * dh]);
    }
    out
}

fn head_scatter(dst: &mut Mat, src: &Mat, h: usize, dh: usize) {
    for r in 0..src.rows {
        let d = &mut dst.row_mut(r)[h * dh..(h + 1) * dh];
        for (a, b) in d.iter_mut().zip(src.row(r)) {
            *a += b;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBT(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        Mat {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        let x = self.value(a);
        assert_eq!(r.rows, 1, "broadcast row must have one row");
        assert_eq!(r.cols, x.cols, "broadcast row width");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (d, s) in v.row_mut(i).iter_mut().zip(&r.data) {
                *d += s;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(shift));
        let m = xv.cols;
        assert_eq!(g.cols, m, "layer norm gain width");
        let mut xhat = Mat::zeros(xv.rows, m);
        let mut out = Mat::zeros(xv.rows, m);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..m {
                let h = (row[c] - mean) * is;
                xhat.data[r * m + c] = h;
                out.data[r * m + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        )
    }

    pub fn conv1d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let cin = xv.cols;
        let wv = self.value(w);
        assert_eq!(wv.cols, geom.kernel * cin, "conv weight width");
        let cols = im2col(xv, &geom);
        let out = matmul_bt(&cols, wv);
        self.push(out, Op::Conv1d { x, w, geom, cin })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = x.rows as f64;
        out.scale(1.0 / n);
        self.push(out, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Mat::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(x.rows, end - start);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start, end))
    }

    /// Row gather, e.g. nearest-neighbour upsampling of frame features.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(idx.len(), x.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Scaled dot-product self-attention split across `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let n = qm.rows;
        let d = qm.cols;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = head_slice(qm, h, dh);
            let kh = head_slice(km, h, dh);
            let vh = head_slice(vm, h, dh);
            let mut p = matmul_bt(&qh, &kh);
            for r in 0..n {
                let row = p.row_mut(r);
                for x in row.iter_mut() {
                    *x *= scale;
                }
                softmax_in_place(row);
            }
            let oh = matmul(&p, &vh);
            head_scatter(&mut out, &oh, h, dh);
            probs.push(p);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Attention probabilities recorded by an attention node, one `n×n`
    /// matrix per head.
    pub fn attention_probs(&self, node: Var) -> Option<&[Mat]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn softmax_xent(&mut self, logits: Var, target: usize, weight: f64) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, 1, "cross-entropy expects one logit row");
        let mut probs = l.data.clone();
        softmax_in_place(&mut probs);
        let loss = -weight * probs[target].max(1e-300).ln();
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::SoftmaxXent {
                logits,
                target,
                weight,
                probs,
            },
        )
    }

    pub fn l1(&mut self, pred: Var, target: Mat) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "l1 shape mismatch");
        let n = p.len() as f64;
        let loss = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::L1 { pred, target })
    }

    /// Back-propagate from a scalar node and collect parameter gradients.
    pub fn backward(&self, loss: Var, n_params: usize) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let lv = self.value(loss);
        grads[loss.0] = Some(Mat::from_vec(lv.rows, lv.cols, vec![1.0; lv.len()]));
        let mut by_param: Vec<Option<Mat>> = (0..n_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut by_param[id.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let da = matmul_bt(&g, self.value(*b));
                    let db = matmul_at(self.value(*a), &g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = matmul(&g, self.value(*b));
                    let db = matmul_at(&g, self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = Mat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                    };
                    let db = Mat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                    };
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, s) in dr.data.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, xv) in d.data.iter_mut().zip(&x.data) {
                        if *xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, xv) in d.data.iter_mut().zip(&x.data) {
                        *dv *= gelu_grad(*xv);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, yv) in d.data.iter_mut().zip(&y.data) {
                        *dv *= 1.0 - yv * yv;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, yv) in d.data.iter_mut().zip(&y.data) {
                        *dv *= yv * (1.0 - yv);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let m = xhat.cols;
                    let mut dgain = Mat::zeros(1, m);
                    let mut dshift = Mat::zeros(1, m);
                    let mut dx = Mat::zeros(xhat.rows, m);
                    let mut dxhat = vec![0.0; m];
                    for r in 0..xhat.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        for c in 0..m {
                            dgain.data[c] += gr[c] * hr[c];
                            dshift.data[c] += gr[c];
                            dxhat[c] = gr[c] * gv.data[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / m as f64;
                        let mean_dh = dot(&dxhat, hr) / m as f64;
                        let out = dx.row_mut(r);
                        for c in 0..m {
                            out[c] = inv_std[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *shift, dshift);
                    acc(&mut grads, *x, dx);
                }
                Op::Conv1d { x, w, geom, cin } => {
                    let xv = self.value(*x);
                    let cols = im2col(xv, geom);
                    let dw = matmul_at(&g, &cols);
                    let dcols = matmul(&g, self.value(*w));
                    let dx = col2im(&dcols, geom, xv.rows, *cin);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *x, dx);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let n = x.rows as f64;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        for (dv, gv) in d.row_mut(r).iter_mut().zip(&g.data) {
                            *dv = gv / n;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let mut d = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, *p, d);
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let x = self.value(*a);
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *dv += gv;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let n = qm.rows;
                    let d = qm.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(n, d);
                    let mut dk = Mat::zeros(n, d);
                    let mut dv = Mat::zeros(n, d);
                    for (h, p) in probs.iter().enumerate() {
                        let qh = head_slice(qm, h, dh);
                        let kh = head_slice(km, h, dh);
                        let vh = head_slice(vm, h, dh);
                        let goh = head_slice(&g, h, dh);
                        let dvh = matmul_at(p, &goh);
                        let mut ds = matmul_bt(&goh, &vh);
                        for r in 0..n {
                            let pr = p.row(r);
                            let dr = ds.row_mut(r);
                            let s = dot(pr, dr);
                            for (dsv, pv) in dr.iter_mut().zip(pr) {
                                *dsv = pv * (*dsv - s) * scale;
                            }
                        }
                        let dqh = matmul(&ds, &kh);
                        let dkh = matmul_at(&ds, &qh);
                        head_scatter(&mut dq, &dqh, h, dh);
                        head_scatter(&mut dk, &dkh, h, dh);
                        head_scatter(&mut dv, &dvh, h, dh);
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    weight,
                    probs,
                } => {
                    let s = g.data[0];
                    let mut d = Mat::zeros(1, probs.len());
                    for (c, p) in probs.iter().enumerate() {
                        let y = if c == *target { 1.0 } else { 0.0 };
                        d.data[c] = s * weight * (p - y);
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::L1 { pred, target } => {
                    let p = self.value(*pred);
                    let n = p.len() as f64;
                    let s = g.data[0] / n;
                    let mut d = Mat::zeros(p.rows, p.cols);
                    for ((dv, a), b) in d.data.iter_mut().zip(&p.data).zip(&target.data) {
                        let diff = a - b;
                        *dv = if diff > 0.0 {
                            s
                        } else if diff < 0.0 {
                            -s
                        } else {
                            0.0
                        };
                    }
                    acc(&mut grads, *pred, d);
                }
            }
        }
        Grads { by_param }
    }
}

//! Reverse-mode automatic differentiation over a per-sample tape.
//!
//! Every forward computation records its inputs on a [`Tape`]; calling
//! [`Tape::backward`] walks the records in reverse and accumulates gradients
//! into every node and every referenced parameter. Reduction order is the
//! recording order, so gradients are bit-reproducible.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
}

enum Op {
    Const,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    ConcatVec(Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    PixelDot { a: Var, v: Var },
    AffineScalar { x: Var, a: Var, b: Var },
    MeanAbs(Var),
    SumSquares(Var),
    CrossEntropy { p: Var, label: [f64; 2] },
    Sum(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Probability floor used inside cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, Var>,
}

/// Result of a backward pass.
pub struct Gradients {
    /// One tensor per parameter in the store, zero where unused.
    pub params: Vec<Tensor>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to an intermediate value, `None`
    /// when no path from the loss reaches it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    /// Leaf node for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let value = self.params.tensor(id).clone();
        let v = self.push(value, Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        Tensor::from_vec(t.shape(), t.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    /// Multiplication by a constant; no gradient flows into `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    /// `w x + b` for `w: [out, in]`, `x: [in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (out, inp) = (tw.shape()[0], tw.shape()[1]);
        assert_eq!(tx.len(), inp, "dense input dimension mismatch");
        assert_eq!(tb.len(), out);
        let mut y = tb.data().to_vec();
        gemm(out, inp, 1, tw.data(), false, tx.data(), false, &mut y, 1.0);
        self.push(Tensor::from_vec(&[out], y), Op::Dense { x, w, b })
    }

    /// Zero-padded 2-D convolution of `x: [cin, h, w]` with `w: [cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (cout, k) = (tw.shape()[0], tw.shape()[2]);
        assert_eq!(tw.shape()[1], cin, "conv input channel mismatch");
        let pad = k / 2;
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
            hout: (h + 2 * pad - k) / stride + 1,
            wout: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = im2col(tx.data(), &geom);
        let hw = geom.hout * geom.wout;
        let mut out = vec![0.0; cout * hw];
        let bias = self.value(b).data();
        for (co, row) in out.chunks_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        gemm(cout, cin * k * k, hw, tw.data(), false, &cols, false, &mut out, 1.0);
        let t = Tensor::from_vec(&[cout, geom.hout, geom.wout], out);
        self.push(t, Op::Conv2d { x, w, b, geom, cols })
    }

    /// Nearest-neighbour 2x upsampling of `[c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let mut out = vec![0.0; c * 4 * h * w];
        let src = tx.data();
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::from_vec(&[c, 2 * h, 2 * w], out), Op::Upsample2x(x))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape()[1..], tb.shape()[1..], "spatial shape mismatch in concat");
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let shape = [ta.shape()[0] + tb.shape()[0], ta.shape()[1], ta.shape()[2]];
        self.push(Tensor::from_vec(&shape, data), Op::ConcatChannels(a, b))
    }

    pub fn concat_vec(&mut self, a: Var, b: Var) -> Var {
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let n = data.len();
        self.push(Tensor::from_vec(&[n], data), Op::ConcatVec(a, b))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.unary(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    /// Channel-wise maximum over all spatial positions of `[c, h, w]`.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.shape()[0];
        let plane = tx.len() / c;
        let (vals, argmax) = global_max(tx.data(), c, plane);
        self.push(Tensor::from_vec(&[c], vals), Op::GlobalMaxPool { x, argmax })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let probs = softmax(t.data());
        let shape = t.shape().to_vec();
        self.push(Tensor::from_vec(&shape, probs), Op::Softmax(x))
    }

    /// Per-position dot product of a `[c, h, w]` map with a `[c]` vector.
    pub fn pixel_dot(&mut self, a: Var, v: Var) -> Var {
        let (ta, tv) = (self.value(a), self.value(v));
        let c = ta.shape()[0];
        assert_eq!(tv.len(), c, "pixel_dot channel mismatch");
        let (h, w) = (ta.shape()[1], ta.shape()[2]);
        let mut out = vec![0.0; h * w];
        gemm(1, c, h * w, tv.data(), false, ta.data(), false, &mut out, 0.0);
        self.push(Tensor::from_vec(&[h, w], out), Op::PixelDot { a, v })
    }

    /// `a * x + b` with scalar parameters `a`, `b`.
    pub fn affine_scalar(&mut self, x: Var, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.scalar(a), self.scalar(b));
        let t = self.unary(x, |v| sa * v + sb);
        self.push(t, Op::AffineScalar { x, a, b })
    }

    pub fn mean_abs(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().map(|v| v.abs()).sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAbs(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    /// `-sum_i label_i * ln(clamp(p_i, PROB_CLAMP, 1))`.
    pub fn cross_entropy(&mut self, p: Var, label: [f64; 2]) -> Var {
        let v = cross_entropy(self.value(p).data(), label);
        self.push(Tensor::scalar(v), Op::CrossEntropy { p, label })
    }

    /// Sum of scalar nodes, in the given order.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let s = terms.iter().map(|t| self.scalar(*t)).sum();
        self.push(Tensor::scalar(s), Op::Sum(terms.to_vec()))
    }

    /// Back-propagates from scalar `loss` through every recorded node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        let mut param_grads: Vec<Tensor> = (0..self.params.len())
            .map(|i| Tensor::zeros(self.params.tensor(i).shape()))
            .collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads, &mut param_grads);
            grads[idx] = Some(g);
        }
        Gradients {
            params: param_grads,
            nodes: grads,
        }
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        param_grads: &mut [Tensor],
    ) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Const => {}
            Op::Param(id) => param_grads[*id].add_scaled(g, 1.0),
            Op::Add(a, b) => {
                acc(grads, *a, len(*a), |d| add_into(d, g, 1.0));
                acc(grads, *b, len(*b), |d| add_into(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, len(*a), |d| add_into(d, g, 1.0));
                acc(grads, *b, len(*b), |d| add_into(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(grads, *a, va.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(grads, *b, vb.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(grads, *a, len(*a), |d| add_into(d, g, *c)),
            Op::Dense { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (out, inp) = (g.len(), vx.len());
                acc(grads, *w, out * inp, |d| {
                    for o in 0..out {
                        let row = &mut d[o * inp..(o + 1) * inp];
                        for i in 0..inp {
                            row[i] += g[o] * vx[i];
                        }
                    }
                });
                acc(grads, *b, out, |d| add_into(d, g, 1.0));
                acc(grads, *x, inp, |d| gemm(inp, out, 1, vw, true, g, false, d, 1.0));
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let hw = geom.hout * geom.wout;
                let ckk = geom.cin * geom.k * geom.k;
                acc(grads, *w, geom.cout * ckk, |d| {
                    gemm(geom.cout, hw, ckk, g, false, cols, true, d, 1.0)
                });
                acc(grads, *b, geom.cout, |d| {
                    for (co, row) in g.chunks(hw).enumerate() {
                        d[co] += row.iter().sum::<f64>();
                    }
                });
                if needs_grad(&self.nodes[x.0].op) {
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(ckk, geom.cout, hw, val(*w), true, g, false, &mut dcols, 0.0);
                    acc(grads, *x, geom.cin * geom.h * geom.w, |d| col2im(&dcols, geom, d));
                }
            }
            Op::Upsample2x(x) => {
                let s = self.nodes[x.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                acc(grads, *x, c * h * w, |d| {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                d[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::ConcatChannels(a, b) | Op::ConcatVec(a, b) => {
                let na = len(*a);
                acc(grads, *a, na, |d| add_into(d, &g[..na], 1.0));
                acc(grads, *b, len(*b), |d| add_into(d, &g[na..], 1.0));
            }
            Op::LeakyRelu(x, slope) => {
                let vx = val(*x);
                acc(grads, *x, vx.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += if vx[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(grads, *x, y.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::GlobalMaxPool { x, argmax } => {
                acc(grads, *x, len(*x), |d| {
                    for (c, &pos) in argmax.iter().enumerate() {
                        d[pos] += g[c];
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                acc(grads, *x, y.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += y[i] * (g[i] - dot);
                    }
                });
            }
            Op::PixelDot { a, v } => {
                let (va, vv) = (val(*a), val(*v));
                let c = vv.len();
                let hw = g.len();
                acc(grads, *a, c * hw, |d| {
                    for ch in 0..c {
                        let row = &mut d[ch * hw..(ch + 1) * hw];
                        for p in 0..hw {
                            row[p] += vv[ch] * g[p];
                        }
                    }
                });
                acc(grads, *v, c, |d| gemm(c, hw, 1, va, false, g, false, d, 1.0));
            }
            Op::AffineScalar { x, a, b } => {
                let vx = val(*x);
                let sa = self.nodes[a.0].value.item();
                acc(grads, *x, vx.len(), |d| add_into(d, g, sa));
                acc(grads, *a, 1, |d| d[0] += vx.iter().zip(g).map(|(p, q)| p * q).sum::<f64>());
                acc(grads, *b, 1, |d| d[0] += g.iter().sum::<f64>());
            }
            Op::MeanAbs(x) => {
                let vx = val(*x);
                let scale = g[0] / vx.len() as f64;
                acc(grads, *x, vx.len(), |d| {
                    for i in 0..d.len() {
                        let s = if vx[i] > 0.0 {
                            1.0
                        } else if vx[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        d[i] += scale * s;
                    }
                });
            }
            Op::SumSquares(x) => {
                let vx = val(*x);
                acc(grads, *x, vx.len(), |d| add_into(d, vx, 2.0 * g[0]));
            }
            Op::CrossEntropy { p, label } => {
                let vp = val(*p);
                acc(grads, *p, vp.len(), |d| {
                    for i in 0..2 {
                        if vp[i] > PROB_CLAMP && vp[i] <= 1.0 {
                            d[i] -= g[0] * label[i] / vp[i];
                        }
                    }
                });
            }
            Op::Sum(terms) => {
                for t in terms {
                    acc(grads, *t, 1, |d| d[0] += g[0]);
                }
            }
        }
    }
}

fn needs_grad(op: &Op) -> bool {
    !matches!(op, Op::Const)
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(d: &mut [f64], g: &[f64], scale: f64) {
    for (a, b) in d.iter_mut().zip(g) {
        *a += scale * b;
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.hout * g.wout;
    let mut cols = vec![0.0; g.cin * g.k * g.k * hw];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = (ci * g.h + iy as usize) * g.w;
                    let dst = row + oy * g.wout;
                    for ox in 0..g.wout {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let hw = g.hout * g.wout;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = (ci * g.h + iy as usize) * g.w;
                    let src = row + oy * g.wout;
                    for ox in 0..g.wout {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[dst + ix as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(p: &[f64], label: [f64; 2]) -> f64 {
    -(0..2)
        .map(|i| label[i] * p[i].clamp(PROB_CLAMP, 1.0).ln())
        .sum::<f64>()
}

/// Per-channel maximum of a `[channels, plane]` buffer and the flat index of
/// the first maximal element in each channel.
pub fn global_max(x: &[f64], channels: usize, plane: usize) -> (Vec<f64>, Vec<usize>) {
    let mut vals = Vec::with_capacity(channels);
    let mut argmax = Vec::with_capacity(channels);
    for c in 0..channels {
        let row = &x[c * plane..(c + 1) * plane];
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        vals.push(row[best]);
        argmax.push(c * plane + best);
    }
    (vals, argmax)
}

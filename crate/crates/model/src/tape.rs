//! Reverse-mode automatic differentiation over row-major 2-D arrays.
//!
//! Every tensor is a matrix whose rows are tokens (or pixels) and whose
//! columns are channels; batches are stacked along rows. The tape records each
//! operation with whatever it needs for the backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batched multi-head attention layout: `q` has `batch * nq` rows, `k` and
/// `v` have `batch * nk` rows, all with `heads * head_dim` columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnShape<F> {
    pub batch: usize,
    pub nq: usize,
    pub nk: usize,
    pub heads: usize,
    pub scale: F,
}

/// Layout of a 2-D convolution over channels-last rows `(b, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    /// "Same" padding: the output is `ceil(size / stride)` on each axis.
    pub fn same(batch: usize, height: usize, width: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        let out_height = height.div_ceil(stride);
        let out_width = width.div_ceil(stride);
        let pad_h = ((out_height - 1) * stride + kernel).saturating_sub(height);
        let pad_w = ((out_width - 1) * stride + kernel).saturating_sub(width);
        Self {
            batch,
            height,
            width,
            channels,
            kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_height,
            out_width,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Calls `f(output_row, input_row, tap)` for every kernel tap that lands
    /// inside the image; taps in the padding are skipped.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        for b in 0..self.batch {
            for oy in 0..self.out_height {
                for ox in 0..self.out_width {
                    let row = (b * self.out_height + oy) * self.out_width + ox;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky).wrapping_sub(self.pad_top);
                        if iy >= self.height {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx).wrapping_sub(self.pad_left);
                            if ix >= self.width {
                                continue;
                            }
                            f(row, (b * self.height + iy) * self.width + ix, ky * k + kx);
                        }
                    }
                }
            }
        }
    }
}

enum Op<F> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout(Var, Array2<F>),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<F>, inv_std: Vec<F> },
    Attention { q: Var, k: Var, v: Var, shape: AttnShape<F>, weights: Vec<Array2<F>> },
    Im2Col(Var, ConvGeom),
    Tile(Var, usize),
}

struct Node<F> {
    op: Op<F>,
    /// `None` for parameters, whose values live in the store.
    value: Option<Array2<F>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    dropout: Option<(F, ChaCha8Rng)>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    /// Indexed by parameter id; `None` when the loss does not depend on it.
    pub params: Vec<Option<Array2<F>>>,
    inputs: Vec<(Var, Array2<F>)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to an input node.
    pub fn input(&self, v: Var) -> Option<&Array2<F>> {
        self.inputs.iter().find(|(u, _)| *u == v).map(|(_, g)| g)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array2<F>> {
        self.params[id.index()].as_ref()
    }
}

fn accumulate<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn softmax_rows<F: Real>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

impl<'p, F: Real> Tape<'p, F> {
    /// Tape without dropout.
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self { params, nodes: Vec::new(), dropout: None }
    }

    /// Tape that applies dropout with rate `p`, masks drawn from `seed`.
    pub fn training(params: &'p ParamStore<F>, p: F, seed: u64) -> Self {
        let dropout = (p > F::zero()).then(|| (p, ChaCha8Rng::seed_from_u64(seed)));
        Self { params, nodes: Vec::new(), dropout }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(x), _) => x,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op<F>, value: Option<Array2<F>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Array2<F>) -> Var {
        self.push(Op::Input, Some(value))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), Some(y))
    }

    /// `x + b` with the single-row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let y = self.value(x) + self.value(b);
        self.push(Op::AddRow(x, b), Some(y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), Some(y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(F::zero()));
        self.push(Op::Relu(x), Some(y))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| F::one() / (F::one() + (-v).exp()));
        self.push(Op::Sigmoid(x), Some(y))
    }

    /// Inverted dropout; the identity on an evaluation tape.
    pub fn dropout(&mut self, x: Var) -> Var {
        if self.dropout.is_none() {
            return x;
        }
        let shape = self.value(x).dim();
        let Some((p, rng)) = self.dropout.as_mut() else { unreachable!() };
        let keep = F::one() / (F::one() - *p);
        let p64 = p.as_f64();
        let mask = Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p64 { F::zero() } else { keep });
        let y = self.value(x) * &mask;
        self.push(Op::Dropout(x, mask), Some(y))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of shape `(1, d)`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = F::from_count(xv.ncols());
        let eps = F::lit(LAYER_NORM_EPS);
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / d;
            let is = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let y = &(&xhat * self.value(gamma)) + self.value(beta);
        self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, Some(y))
    }

    /// `softmax(q k^T * scale) v` per image and head; heads split the columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape<F>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / shape.heads;
        assert_eq!(dh * shape.heads, d, "width {d} not divisible into {} heads", shape.heads);
        assert_eq!(qv.nrows(), shape.batch * shape.nq);
        assert_eq!(kv.nrows(), shape.batch * shape.nk);
        assert_eq!(vv.dim(), kv.dim());
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut weights = Vec::with_capacity(shape.batch * shape.heads);
        for b in 0..shape.batch {
            let (rq, rk) = (b * shape.nq..(b + 1) * shape.nq, b * shape.nk..(b + 1) * shape.nk);
            for h in 0..shape.heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![rq.clone(), cols.clone()]);
                let ks = kv.slice(s![rk.clone(), cols.clone()]);
                let vs = vv.slice(s![rk.clone(), cols.clone()]);
                let mut a = Array2::zeros((shape.nq, shape.nk));
                general_mat_mul(shape.scale, &qs, &ks.t(), F::zero(), &mut a);
                softmax_rows(&mut a);
                general_mat_mul(F::one(), &a, &vs, F::zero(), &mut out.slice_mut(s![rq.clone(), cols]));
                weights.push(a);
            }
        }
        self.push(Op::Attention { q, k, v, shape, weights }, Some(out))
    }

    /// Attention weights of an attention node, one `(nq, nk)` matrix per
    /// `(image, head)` in image-major order.
    pub fn attention_weights(&self, v: Var) -> Option<&[Array2<F>]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Unfold convolution patches: one row per output position, columns in
    /// `(ky, kx, channel)` order; taps in the padding are zero.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), (geom.batch * geom.height * geom.width, geom.channels));
        let c = geom.channels;
        let mut out = Array2::zeros((geom.batch * geom.out_height * geom.out_width, geom.patch_len()));
        geom.for_each_tap(|row, src, tap| {
            out.slice_mut(s![row, tap * c..(tap + 1) * c]).assign(&xv.row(src));
        });
        self.push(Op::Im2Col(x, geom), Some(out))
    }

    /// Stack `times` copies of `x` along rows.
    pub fn tile(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let views: Vec<ArrayView2<F>> = (0..times).map(|_| xv.view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        self.push(Op::Tile(x, times), Some(y))
    }

    /// Propagate `seeds` (gradients of a scalar objective with respect to the
    /// given nodes) back to every parameter and input.
    pub fn backward(&self, seeds: Vec<(Var, Array2<F>)>) -> Gradients<F> {
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(v).dim(), g.dim(), "seed shape mismatch");
            top = top.max(v.0 + 1);
            accumulate(&mut grads[v.0], g);
        }
        let mut params: Vec<Option<Array2<F>>> = (0..self.params.len()).map(|_| None).collect();
        let mut inputs = Vec::new();
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => inputs.push((Var(i), g)),
                Op::Param(id) => accumulate(&mut params[id.index()], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(x, b) => {
                    accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Relu(x) => {
                    let y = node.value.as_ref().expect("value");
                    let mut g = g;
                    Zip::from(&mut g).and(y).for_each(|g, &y| {
                        if y <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    accumulate(&mut grads[x.0], g);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("value");
                    let mut g = g;
                    Zip::from(&mut g).and(y).for_each(|g, &y| *g *= y * (F::one() - y));
                    accumulate(&mut grads[x.0], g);
                }
                Op::Dropout(x, mask) => accumulate(&mut grads[x.0], g * mask),
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    accumulate(&mut grads[gamma.0], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let mut dx = g * self.value(*gamma);
                    let n = F::from_count(dx.ncols());
                    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let sum = row.sum();
                        let dot = row.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>();
                        Zip::from(&mut row).and(&xh).for_each(|r, &xh| *r = is / n * (n * *r - sum - xh * dot));
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Attention { q, k, v, shape, weights } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = qv.ncols() / shape.heads;
                    let mut gq = Array2::zeros(qv.dim());
                    let mut gk = Array2::zeros(kv.dim());
                    let mut gv = Array2::zeros(vv.dim());
                    for b in 0..shape.batch {
                        let (rq, rk) = (b * shape.nq..(b + 1) * shape.nq, b * shape.nk..(b + 1) * shape.nk);
                        for h in 0..shape.heads {
                            let cols = h * dh..(h + 1) * dh;
                            let a = &weights[b * shape.heads + h];
                            let go = g.slice(s![rq.clone(), cols.clone()]);
                            let qs = qv.slice(s![rq.clone(), cols.clone()]);
                            let ks = kv.slice(s![rk.clone(), cols.clone()]);
                            let vs = vv.slice(s![rk.clone(), cols.clone()]);
                            general_mat_mul(F::one(), &a.t(), &go, F::one(), &mut gv.slice_mut(s![rk.clone(), cols.clone()]));
                            let mut da = go.dot(&vs.t());
                            for (mut dr, ar) in da.rows_mut().into_iter().zip(a.rows()) {
                                let dot = dr.iter().zip(ar).map(|(&x, &y)| x * y).sum::<F>();
                                Zip::from(&mut dr).and(&ar).for_each(|d, &a| *d = a * (*d - dot));
                            }
                            general_mat_mul(shape.scale, &da, &ks, F::one(), &mut gq.slice_mut(s![rq.clone(), cols.clone()]));
                            general_mat_mul(shape.scale, &da.t(), &qs, F::one(), &mut gk.slice_mut(s![rk.clone(), cols]));
                        }
                    }
                    accumulate(&mut grads[q.0], gq);
                    accumulate(&mut grads[k.0], gk);
                    accumulate(&mut grads[v.0], gv);
                }
                Op::Im2Col(x, geom) => {
                    let c = geom.channels;
                    let mut gx = Array2::zeros((geom.batch * geom.height * geom.width, c));
                    geom.for_each_tap(|row, src, tap| {
                        let mut dst = gx.row_mut(src);
                        dst += &g.slice(s![row, tap * c..(tap + 1) * c]);
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Tile(x, times) => {
                    let n = g.nrows() / times;
                    let mut gx = g.slice(s![0..n, ..]).to_owned();
                    for t in 1..*times {
                        gx += &g.slice(s![t * n..(t + 1) * n, ..]);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }
        Gradients { params, inputs }
    }
}

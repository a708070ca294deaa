//! Flat parameter storage and the hand-differentiated layers of the decoder.
//! Activations are row-major `tokens × features` matrices.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// All learnable tensors in one flat buffer, addressed by id or name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    pub data: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn add(&mut self, name: &str, shape: &[usize], mut init: impl FnMut() -> f64) -> usize {
        let id = self.names.len();
        let len: usize = shape.iter().product();
        self.offsets.push(self.data.len());
        self.data.extend((0..len).map(|_| init()));
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.lookup.insert(name.to_string(), id);
        id
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let start = self.offsets[id];
        start..start + self.shapes[id].iter().product::<usize>()
    }

    pub fn get(&self, id: usize) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.data.len()
    }
}

/// Gradient buffer aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<'a> {
    pub params: &'a ParamSet,
    pub data: Vec<f64>,
}

impl<'a> Grads<'a> {
    pub fn zeros(params: &'a ParamSet) -> Self {
        Self {
            params,
            data: vec![0.0; params.num_values()],
        }
    }

    pub fn get_mut(&mut self, id: usize) -> &mut [f64] {
        let r = self.params.range(id);
        &mut self.data[r]
    }
}

pub(crate) fn normal_init(rng: &mut Rng, std: f64) -> impl FnMut() -> f64 + '_ {
    let dist = Normal::new(0.0, std).expect("finite std");
    move || dist.sample(rng)
}

/// Strided view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    /// Columns `start..start + width` of a row-major matrix with row stride `rs`.
    pub fn cols_of(data: &'a [f64], rows: usize, rs: usize, start: usize, width: usize) -> Self {
        Self {
            data: &data[start..],
            rows,
            cols: width,
            rs,
            cs: 1,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            assert!((self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len());
        }
    }
}

/// `c = beta·c + a·b` where `c` is row-major `a.rows × b.cols` with row stride `rsc`.
pub(crate) fn gemm_into(a: Mat, b: Mat, c: &mut [f64], rsc: usize, beta: f64) {
    assert_eq!(a.cols, b.rows);
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + n <= c.len());
    if k == 0 {
        for r in 0..m {
            c[r * rsc..r * rsc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: bounds of all three operands were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: Mat, b: Mat) -> Vec<f64> {
    let mut c = vec![0.0; a.rows * b.cols];
    gemm_into(a, b, &mut c, b.cols, 0.0);
    c
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Dense layer `y = x W (+ b)`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(p: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng, std: f64) -> Self {
        let w = p.add(&format!("{name}.w"), &[fan_in, fan_out], normal_init(rng, std));
        let b = bias.then(|| p.add(&format!("{name}.b"), &[fan_out], || 0.0));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, p: &ParamSet, x: &[f64], n: usize) -> Vec<f64> {
        let mut y = matmul(Mat::new(x, n, self.fan_in), Mat::new(p.get(self.w), self.fan_in, self.fan_out));
        if let Some(b) = self.b {
            let b = p.get(b);
            for row in y.chunks_mut(self.fan_out) {
                row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&self, p: &ParamSet, x: &[f64], n: usize, dy: &[f64], g: &mut Grads) -> Vec<f64> {
        self.accumulate(x, n, dy, g);
        matmul(Mat::new(dy, n, self.fan_out), Mat::new(p.get(self.w), self.fan_in, self.fan_out).t())
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: &[f64], n: usize, dy: &[f64], g: &mut Grads) {
        gemm_into(
            Mat::new(x, n, self.fan_in).t(),
            Mat::new(dy, n, self.fan_out),
            g.get_mut(self.w),
            self.fan_out,
            1.0,
        );
        if let Some(b) = self.b {
            let gb = g.get_mut(b);
            for row in dy.chunks(self.fan_out) {
                gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
    }

    /// Adds `dy Wᵀ` into `dx`.
    pub fn input_grad_into(&self, p: &ParamSet, n: usize, dy: &[f64], dx: &mut [f64]) {
        gemm_into(
            Mat::new(dy, n, self.fan_out),
            Mat::new(p.get(self.w), self.fan_in, self.fan_out).t(),
            dx,
            self.fan_in,
            1.0,
        );
    }
}

pub const RMS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct RmsNorm {
    pub gain: usize,
    pub dim: usize,
}

impl RmsNorm {
    pub fn new(p: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gain: p.add(&format!("{name}.gain"), &[dim], || 1.0),
            dim,
        }
    }

    /// Returns the normalized rows and each row's inverse RMS.
    pub fn forward(&self, p: &ParamSet, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = p.get(self.gain);
        let mut y = vec![0.0; x.len()];
        let mut inv = Vec::with_capacity(x.len() / self.dim);
        for (xr, yr) in x.chunks(self.dim).zip(y.chunks_mut(self.dim)) {
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / self.dim as f64;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            for i in 0..self.dim {
                yr[i] = xr[i] * r * g[i];
            }
            inv.push(r);
        }
        (y, inv)
    }

    pub fn backward(&self, p: &ParamSet, x: &[f64], inv: &[f64], dy: &[f64], grads: &mut Grads) -> Vec<f64> {
        let g = p.get(self.gain).to_vec();
        let d = self.dim;
        let mut dx = vec![0.0; x.len()];
        let gg = grads.get_mut(self.gain);
        for (row, r) in inv.iter().enumerate() {
            let xr = &x[row * d..(row + 1) * d];
            let dyr = &dy[row * d..(row + 1) * d];
            let mut dot = 0.0;
            for i in 0..d {
                let xhat = xr[i] * r;
                gg[i] += dyr[i] * xhat;
                dot += dyr[i] * g[i] * xhat;
            }
            let mean = dot / d as f64;
            for i in 0..d {
                let xhat = xr[i] * r;
                dx[row * d + i] = (dyr[i] * g[i] - xhat * mean) * r;
            }
        }
        dx
    }
}

/// Pre-norm multi-head self-attention with a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub norm: RmsNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    xn: Vec<f64>,
    inv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

impl Attention {
    pub fn new(p: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut Rng, out_std: f64) -> Self {
        assert!(dim % heads == 0, "hidden size must divide into heads");
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            norm: RmsNorm::new(p, &format!("{name}.norm"), dim),
            q: Linear::new(p, &format!("{name}.q"), dim, dim, false, rng, std),
            k: Linear::new(p, &format!("{name}.k"), dim, dim, false, rng, std),
            v: Linear::new(p, &format!("{name}.v"), dim, dim, false, rng, std),
            o: Linear::new(p, &format!("{name}.o"), dim, dim, false, rng, out_std),
            heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Forward pass storing the `N × N` attention maps for backpropagation.
    pub fn forward_train(&self, p: &ParamSet, x: &[f64], n: usize) -> (Vec<f64>, AttentionCache) {
        let (xn, inv) = self.norm.forward(p, x);
        let q = self.q.forward(p, &xn, n);
        let k = self.k.forward(p, &xn, n);
        let v = self.v.forward(p, &xn, n);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; self.heads * n * n];
        let mut ctx = vec![0.0; n * self.dim];
        for h in 0..self.heads {
            let pm = &mut probs[h * n * n..(h + 1) * n * n];
            gemm_into(
                Mat::cols_of(&q, n, self.dim, h * dh, dh),
                Mat::cols_of(&k, n, self.dim, h * dh, dh).t(),
                pm,
                n,
                0.0,
            );
            for row in pm.chunks_mut(n) {
                softmax_scaled(row, scale);
            }
            gemm_into(
                Mat::new(pm, n, n),
                Mat::cols_of(&v, n, self.dim, h * dh, dh),
                &mut ctx[h * dh..],
                self.dim,
                0.0,
            );
        }
        let mut y = self.o.forward(p, &ctx, n);
        y.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        (
            y,
            AttentionCache {
                xn,
                inv,
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    /// Inference forward pass: attention rows are formed one query at a time,
    /// so memory stays linear in the token count.
    pub fn forward(&self, p: &ParamSet, x: &[f64], n: usize) -> Vec<f64> {
        let (xn, _) = self.norm.forward(p, x);
        let q = self.q.forward(p, &xn, n);
        let k = self.k.forward(p, &xn, n);
        let v = self.v.forward(p, &xn, n);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = vec![0.0; n * self.dim];
        let mut row = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &q[i * self.dim + off..i * self.dim + off + dh];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[j * self.dim + off..j * self.dim + off + dh];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                }
                softmax_scaled(&mut row, scale);
                let out = &mut ctx[i * self.dim + off..i * self.dim + off + dh];
                for (j, w) in row.iter().enumerate() {
                    let vj = &v[j * self.dim + off..j * self.dim + off + dh];
                    out.iter_mut().zip(vj).for_each(|(o, vv)| *o += w * vv);
                }
            }
        }
        let mut y = self.o.forward(p, &ctx, n);
        y.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        y
    }

    pub fn backward(&self, p: &ParamSet, x: &[f64], n: usize, c: &AttentionCache, dy: &[f64], g: &mut Grads) -> Vec<f64> {
        let dctx = self.o.backward(p, &c.ctx, n, dy, g);
        let dh = self.head_dim();
        let d = self.dim;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n * n];
        for h in 0..self.heads {
            let pm = &c.probs[h * n * n..(h + 1) * n * n];
            let off = h * dh;
            // dP = dC V_hᵀ, dV_h = Pᵀ dC
            gemm_into(
                Mat::cols_of(&dctx, n, d, off, dh),
                Mat::cols_of(&c.v, n, d, off, dh).t(),
                &mut dp,
                n,
                0.0,
            );
            gemm_into(
                Mat::new(pm, n, n).t(),
                Mat::cols_of(&dctx, n, d, off, dh),
                &mut dv[off..],
                d,
                0.0,
            );
            for (prow, drow) in pm.chunks(n).zip(dp.chunks_mut(n)) {
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (dv_, pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot) * scale;
                }
            }
            gemm_into(Mat::new(&dp, n, n), Mat::cols_of(&c.k, n, d, off, dh), &mut dq[off..], d, 0.0);
            gemm_into(Mat::new(&dp, n, n).t(), Mat::cols_of(&c.q, n, d, off, dh), &mut dk[off..], d, 0.0);
        }
        let mut dxn = self.q.backward(p, &c.xn, n, &dq, g);
        self.k.accumulate(&c.xn, n, &dk, g);
        self.k.input_grad_into(p, n, &dk, &mut dxn);
        self.v.accumulate(&c.xn, n, &dv, g);
        self.v.input_grad_into(p, n, &dv, &mut dxn);
        let mut dx = self.norm.backward(p, x, &c.inv, &dxn, g);
        dx.iter_mut().zip(dy).for_each(|(a, b)| *a += b);
        dx
    }
}

fn softmax_scaled(row: &mut [f64], scale: f64) {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v * scale - m).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Pre-norm bidirectional gated linear recurrence:
/// `s_k = a_k ⊙ s_{k−1} + u_k b_kᵀ`, `y_k = s_k c_k`, scanned in both
/// directions and summed, then `out = ((y + d ⊙ u) ⊙ silu(z)) W_o`.
#[derive(Clone, Copy, Debug)]
pub struct Mixer {
    pub norm: RmsNorm,
    pub u: Linear,
    pub z: Linear,
    pub a: Linear,
    pub b: Linear,
    pub c: Linear,
    pub skip: usize,
    pub o: Linear,
    pub inner: usize,
    pub state: usize,
    pub dim: usize,
}

pub struct MixerCache {
    xn: Vec<f64>,
    inv: Vec<f64>,
    u: Vec<f64>,
    z: Vec<f64>,
    a_raw: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    y: Vec<f64>,
    gated: Vec<f64>,
    fwd_states: Vec<f64>,
    bwd_states: Vec<f64>,
}

impl Mixer {
    pub fn new(p: &mut ParamSet, name: &str, dim: usize, inner: usize, state: usize, rng: &mut Rng, out_std: f64) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let norm = RmsNorm::new(p, &format!("{name}.norm"), dim);
        let u = Linear::new(p, &format!("{name}.u"), dim, inner, false, rng, std);
        let z = Linear::new(p, &format!("{name}.z"), dim, inner, false, rng, std);
        let a = Linear::new(p, &format!("{name}.a"), dim, inner, true, rng, 0.1 * std);
        // Decay biases spread so that exp(-softplus(bias)) covers roughly 0.6..0.98.
        let ab = p.get_mut(a.b.unwrap());
        for (i, v) in ab.iter_mut().enumerate() {
            let frac = if inner > 1 { i as f64 / (inner - 1) as f64 } else { 0.5 };
            *v = -4.0 + 3.5 * frac;
        }
        let b = Linear::new(p, &format!("{name}.b"), dim, state, false, rng, std);
        let c = Linear::new(p, &format!("{name}.c"), dim, state, false, rng, std);
        let skip = p.add(&format!("{name}.skip"), &[inner], || 1.0);
        let o = Linear::new(p, &format!("{name}.o"), inner, dim, false, rng, out_std);
        Self {
            norm,
            u,
            z,
            a,
            b,
            c,
            skip,
            o,
            inner,
            state,
            dim,
        }
    }

    /// One directional scan; `order` yields token indices in scan order.
    /// When `states` is given, the state after each token is stored there.
    fn scan(
        &self,
        n: usize,
        reverse: bool,
        u: &[f64],
        a: &[f64],
        b: &[f64],
        c: &[f64],
        y: &mut [f64],
        mut states: Option<&mut [f64]>,
    ) {
        let (di, ns) = (self.inner, self.state);
        let mut s = vec![0.0; di * ns];
        for step in 0..n {
            let k = if reverse { n - 1 - step } else { step };
            let (uk, ak, bk, ck) = (&u[k * di..], &a[k * di..], &b[k * ns..], &c[k * ns..]);
            for i in 0..di {
                let row = &mut s[i * ns..(i + 1) * ns];
                let mut acc = 0.0;
                for j in 0..ns {
                    row[j] = ak[i] * row[j] + uk[i] * bk[j];
                    acc += row[j] * ck[j];
                }
                y[k * di + i] += acc;
            }
            if let Some(st) = states.as_deref_mut() {
                st[k * di * ns..(k + 1) * di * ns].copy_from_slice(&s);
            }
        }
    }

    fn project(&self, p: &ParamSet, xn: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let u = self.u.forward(p, xn, n);
        let z = self.z.forward(p, xn, n);
        let a_raw = self.a.forward(p, xn, n);
        let a = a_raw.iter().map(|v| (-softplus(*v)).exp()).collect();
        let b = self.b.forward(p, xn, n);
        let c = self.c.forward(p, xn, n);
        (u, z, a_raw, a, b, c)
    }

    fn finish(&self, p: &ParamSet, x: &[f64], n: usize, u: &[f64], z: &[f64], y: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let skip = p.get(self.skip);
        let di = self.inner;
        let mut gated = vec![0.0; n * di];
        for k in 0..n {
            for i in 0..di {
                let idx = k * di + i;
                y[idx] += skip[i] * u[idx];
                gated[idx] = y[idx] * silu(z[idx]);
            }
        }
        let mut out = self.o.forward(p, &gated, n);
        out.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        (out, gated)
    }

    pub fn forward(&self, p: &ParamSet, x: &[f64], n: usize) -> Vec<f64> {
        let (xn, _) = self.norm.forward(p, x);
        let (u, z, _, a, b, c) = self.project(p, &xn, n);
        let mut y = vec![0.0; n * self.inner];
        self.scan(n, false, &u, &a, &b, &c, &mut y, None);
        self.scan(n, true, &u, &a, &b, &c, &mut y, None);
        self.finish(p, x, n, &u, &z, &mut y).0
    }

    pub fn forward_train(&self, p: &ParamSet, x: &[f64], n: usize) -> (Vec<f64>, MixerCache) {
        let (xn, inv) = self.norm.forward(p, x);
        let (u, z, a_raw, a, b, c) = self.project(p, &xn, n);
        let per = self.inner * self.state;
        let mut y = vec![0.0; n * self.inner];
        let mut fwd_states = vec![0.0; n * per];
        let mut bwd_states = vec![0.0; n * per];
        self.scan(n, false, &u, &a, &b, &c, &mut y, Some(&mut fwd_states));
        self.scan(n, true, &u, &a, &b, &c, &mut y, Some(&mut bwd_states));
        let (out, gated) = self.finish(p, x, n, &u, &z, &mut y);
        (
            out,
            MixerCache {
                xn,
                inv,
                u,
                z,
                a_raw,
                a,
                b,
                c,
                y,
                gated,
                fwd_states,
                bwd_states,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_backward(
        &self,
        n: usize,
        reverse: bool,
        cache: &MixerCache,
        states: &[f64],
        dy: &[f64],
        du: &mut [f64],
        da: &mut [f64],
        db: &mut [f64],
        dc: &mut [f64],
    ) {
        let (di, ns) = (self.inner, self.state);
        let per = di * ns;
        let mut carry = vec![0.0; per];
        for step in (0..n).rev() {
            let k = if reverse { n - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else {
                let pk = if reverse { k + 1 } else { k - 1 };
                Some(&states[pk * per..(pk + 1) * per])
            };
            let sk = &states[k * per..(k + 1) * per];
            let (uk, ak, bk, ck) = (&cache.u[k * di..], &cache.a[k * di..], &cache.b[k * ns..], &cache.c[k * ns..]);
            for i in 0..di {
                let g = dy[k * di + i];
                let row = &mut carry[i * ns..(i + 1) * ns];
                let srow = &sk[i * ns..(i + 1) * ns];
                let mut dai = 0.0;
                let mut dui = 0.0;
                for j in 0..ns {
                    dc[k * ns + j] += g * srow[j];
                    row[j] += g * ck[j];
                    if let Some(pr) = prev {
                        dai += row[j] * pr[i * ns + j];
                    }
                    dui += row[j] * bk[j];
                    db[k * ns + j] += row[j] * uk[i];
                    row[j] *= ak[i];
                }
                da[k * di + i] += dai;
                du[k * di + i] += dui;
            }
        }
    }

    pub fn backward(&self, p: &ParamSet, x: &[f64], n: usize, c: &MixerCache, dout: &[f64], g: &mut Grads) -> Vec<f64> {
        let di = self.inner;
        let dgated = self.o.backward(p, &c.gated, n, dout, g);
        let skip = p.get(self.skip);
        let mut dy = vec![0.0; n * di];
        let mut dz = vec![0.0; n * di];
        let mut du = vec![0.0; n * di];
        {
            let dskip = g.get_mut(self.skip);
            for k in 0..n {
                for i in 0..di {
                    let idx = k * di + i;
                    let zs = silu(c.z[idx]);
                    dy[idx] = dgated[idx] * zs;
                    dz[idx] = dgated[idx] * c.y[idx] * silu_grad(c.z[idx]);
                    dskip[i] += dy[idx] * c.u[idx];
                    du[idx] = dy[idx] * skip[i];
                }
            }
        }
        let mut da = vec![0.0; n * di];
        let mut db = vec![0.0; n * self.state];
        let mut dc = vec![0.0; n * self.state];
        self.scan_backward(n, false, c, &c.fwd_states, &dy, &mut du, &mut da, &mut db, &mut dc);
        self.scan_backward(n, true, c, &c.bwd_states, &dy, &mut du, &mut da, &mut db, &mut dc);
        let da_raw: Vec<f64> = da
            .iter()
            .zip(c.a.iter().zip(&c.a_raw))
            .map(|(d, (a, r))| -d * a * sigmoid(*r))
            .collect();
        let mut dxn = self.u.backward(p, &c.xn, n, &du, g);
        for (lin, d) in [(&self.z, &dz), (&self.a, &da_raw), (&self.b, &db), (&self.c, &dc)] {
            lin.accumulate(&c.xn, n, d, g);
            lin.input_grad_into(p, n, d, &mut dxn);
        }
        let mut dx = self.norm.backward(p, x, &c.inv, &dxn, g);
        dx.iter_mut().zip(dout).for_each(|(a, b)| *a += b);
        dx
    }
}

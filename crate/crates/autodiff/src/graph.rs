//! Define-by-run tape. Every op records its inputs and whatever it needs for
//! the backward pass; `backward` walks the tape in reverse and accumulates
//! vector-Jacobian products into per-node gradient buffers.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    Conv { x: Var, w: Var, b: Var, kh: usize, kw: usize },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Upsample { x: Var, fh: usize, fw: usize },
    Linear { x: Var, w: Var, b: Var },
    FixedLinear { x: Var, a: Arc<Vec<f64>> },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Reshape { x: Var },
    WeightedSum { x: Var, w: Vec<f64> },
    Mse { pred: Var, target: Vec<f64> },
    Tukey { pred: Var, residual: Vec<f64>, scale: f64, c: f64, dscale: Vec<(usize, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over batch and spatial positions.
    pub var: Vec<f64>,
    /// Values per channel the statistics were taken over.
    pub count: usize,
}

impl BatchStats {
    /// `running = momentum·running + (1 − momentum)·batch`, with the unbiased
    /// variance estimate.
    pub fn update_running(&self, mean: &mut [f64], var: &mut [f64], momentum: f64) {
        let unbias = if self.count > 1 { self.count as f64 / (self.count - 1) as f64 } else { 1.0 };
        for (k, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
            *m = momentum * *m + (1.0 - momentum) * self.mean[k];
            *v = momentum * *v + (1.0 - momentum) * self.var[k] * unbias;
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// C (m×n) = op(A) (m×k) · op(B) (k×n) + beta·C, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [f64]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pw as isize;
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + shift;
                        *o = if sx >= 0 && sx < w as isize { src[sx as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [f64]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pw as isize;
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, &g) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xo as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Linear interpolation taps for factor-`f` upsampling with half-pixel
/// (align-corners = false) alignment.
fn upsample_taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn tukey_rho(u: f64, c: f64) -> f64 {
    let sat = c * c / 6.0;
    if u.abs() >= c {
        return sat;
    }
    let t = 1.0 - (u / c) * (u / c);
    sat * (1.0 - t * t * t)
}

const MAD_TO_SIGMA: f64 = 1.4826;

/// Indices and weights whose weighted sum is the median of `v`.
fn median_weights(v: &[f64]) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let n = v.len();
    if n % 2 == 1 {
        vec![(idx[n / 2], 1.0)]
    } else {
        vec![(idx[n / 2 - 1], 0.5), (idx[n / 2], 0.5)]
    }
}

/// Gradient buffer of `v`, or None when nothing upstream needs it.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = match &op {
            Op::Leaf { param } => param.is_some(),
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::Conv { x, w, b, .. } | Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu { x }
            | Op::MaxPool { x, .. }
            | Op::Upsample { x, .. }
            | Op::FixedLinear { x, .. }
            | Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::WeightedSum { x, .. } => vec![*x],
            Op::Mse { pred, .. } | Op::Tukey { pred, .. } => vec![*pred],
            Op::Concat { xs } => xs.clone(),
            Op::Add { a, b } => vec![*a, *b],
        }
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf { param: None }, "constant")
    }

    /// A differentiable leaf tagged with a parameter slot.
    pub fn param(&mut self, t: Tensor, slot: usize) -> Result<Var> {
        self.push(t, Op::Leaf { param: Some(slot) }, "param")
    }

    /// Parameter slot of a leaf, if any.
    pub fn param_slot(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Leaf { param } => param,
            _ => None,
        }
    }

    /// `(slot, var)` for every parameter leaf on the tape.
    pub fn param_leaves(&self) -> Vec<(usize, Var)> {
        (0..self.nodes.len())
            .filter_map(|i| self.param_slot(Var(i)).map(|s| (s, Var(i))))
            .collect()
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<[usize; 4]> {
        self.value(v)
            .dims4()
            .ok_or_else(|| shape_err(op, format!("expected a 4D tensor, got {:?}", self.shape(v))))
    }

    /// Stride-1 cross-correlation with zero "same" padding. `w` is
    /// `[out, in, kh, kw]` with odd kernel sides, `b` is `[out]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [bs, cin, h, wd] = self.dims4(x, "conv")?;
        let [cout, wcin, kh, kw] = self.dims4(w, "conv")?;
        if wcin != cin || self.shape(b) != [cout] || kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err(
                "conv",
                format!("input {:?}, weight {:?}, bias {:?}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        }
        let (hw, k) = (h * wd, cin * kh * kw);
        let mut out = vec![0.0; bs * cout * hw];
        let mut cols = vec![0.0; if kh * kw == 1 { 0 } else { k * hw }];
        {
            let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            for bi in 0..bs {
                let xb = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
                for (co, row) in ob.chunks_mut(hw).enumerate() {
                    row.fill(bv[co]);
                }
                let src = if kh * kw == 1 {
                    xb
                } else {
                    im2col(xb, cin, h, wd, kh, kw, &mut cols);
                    &cols
                };
                gemm(cout, k, hw, wv, false, src, false, ob, 1.0);
            }
        }
        let t = Tensor::new(&[bs, cout, h, wd], out)?;
        self.push(t, Op::Conv { x, w, b, kh, kw }, "conv")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|&a| a.max(0.0)).collect())?;
        self.push(t, Op::Relu { x }, "relu")
    }

    /// Non-overlapping `ph × pw` max pooling; ties go to the first index.
    pub fn maxpool(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let [bs, c, h, w] = self.dims4(x, "maxpool")?;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(shape_err("maxpool", format!("{h}x{w} is not divisible by {ph}x{pw}")));
        }
        let (oh, ow) = (h / ph, w / pw);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(bs * c * oh * ow);
        let mut argmax = Vec::with_capacity(bs * c * oh * ow);
        for plane in 0..bs * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * ph * w + ox * pw;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let i = base + (oy * ph + dy) * w + ox * pw + dx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(&[bs, c, oh, ow], out)?;
        self.push(t, Op::MaxPool { x, argmax }, "maxpool")
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
        let d = self.dims4(x, "batchnorm")?;
        if self.shape(gamma) != [d[1]] || self.shape(beta) != [d[1]] {
            return Err(shape_err("batchnorm", format!("{} channels, gain {:?}", d[1], self.shape(gamma))));
        }
        Ok(d)
    }

    /// Training-mode batch norm using the statistics of this batch.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let [bs, c, h, w] = self.check_bn(x, gamma, beta)?;
        let hw = h * w;
        let count = bs * hw;
        let xv = self.value(x).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..bs {
            for ch in 0..c {
                mean[ch] += xv[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..bs {
            for ch in 0..c {
                var[ch] += xv[(b * c + ch) * hw..][..hw].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..bs {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + be[ch];
                }
            }
        }
        let t = Tensor::new(&[bs, c, h, w], out)?;
        let v = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: true }, "batchnorm")?;
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Inference-mode batch norm with fixed running statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let [bs, c, h, w] = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err("batchnorm", "running statistics do not match channels"));
        }
        let hw = h * w;
        let xv = self.value(x).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..bs {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + be[ch];
                }
            }
        }
        let t = Tensor::new(&[bs, c, h, w], out)?;
        self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: false }, "batchnorm")
    }

    /// Bilinear upsampling by integer factors (use `fh = 1` for 1D signals).
    pub fn upsample(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let [bs, c, h, w] = self.dims4(x, "upsample")?;
        if fh == 0 || fw == 0 {
            return Err(shape_err("upsample", "zero factor"));
        }
        let (ty, tx) = (upsample_taps(h, fh), upsample_taps(w, fw));
        let (oh, ow) = (h * fh, w * fw);
        let xv = self.value(x).data();
        let mut out = vec![0.0; bs * c * oh * ow];
        for plane in 0..bs * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let t = Tensor::new(&[bs, c, oh, ow], out)?;
        self.push(t, Op::Upsample { x, fh, fw }, "upsample")
    }

    /// `y = x Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(shape_err(
                "linear",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", self.shape(b)),
            ));
        }
        let (bs, k, o) = (xs[0], xs[1], ws[0]);
        let bv = self.value(b).data();
        let mut out: Vec<f64> = (0..bs).flat_map(|_| bv.iter().copied()).collect();
        gemm(bs, k, o, self.value(x).data(), false, self.value(w).data(), true, &mut out, 1.0);
        let t = Tensor::new(&[bs, o], out)?;
        self.push(t, Op::Linear { x, w, b }, "linear")
    }

    /// Multiplication by a constant matrix `a: [rows, in]` per batch item; the
    /// result is reshaped to `[batch] ++ out_shape` (product `rows`).
    pub fn fixed_linear(&mut self, x: Var, a: Arc<Vec<f64>>, out_shape: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        let rows: usize = out_shape.iter().product();
        if xs.len() != 2 || a.len() != rows * xs[1] {
            return Err(shape_err(
                "fixed_linear",
                format!("input {xs:?} against a {}-entry matrix with {rows} rows", a.len()),
            ));
        }
        let (bs, k) = (xs[0], xs[1]);
        let mut out = vec![0.0; bs * rows];
        gemm(bs, k, rows, self.value(x).data(), false, &a, true, &mut out, 0.0);
        let mut shape = vec![bs];
        shape.extend_from_slice(out_shape);
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::FixedLinear { x, a }, "fixed_linear")
    }

    /// Channel concatenation of `[batch, c_i, h, w]` tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let [bs, _, h, w] = self.dims4(first, "concat")?;
        let mut chans = Vec::with_capacity(xs.len());
        for &v in xs {
            let [b2, c, h2, w2] = self.dims4(v, "concat")?;
            if (b2, h2, w2) != (bs, h, w) {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(first), self.shape(v))));
            }
            chans.push(c);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(bs * total * hw);
        for b in 0..bs {
            for (&v, &c) in xs.iter().zip(&chans) {
                out.extend_from_slice(&self.value(v).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let t = Tensor::new(&[bs, total, h, w], out)?;
        self.push(t, Op::Concat { xs: xs.to_vec() }, "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let t = Tensor::new(av.shape(), av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect())?;
        self.push(t, Op::Add { a, b }, "add")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|a| a * s).collect())?;
        self.push(t, Op::Scale { x, s }, "scale")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape { x }, "reshape")
    }

    /// `[batch, ...] -> [batch, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = s[0];
        let rest = s[1..].iter().product::<usize>();
        self.reshape(x, &[b, rest])
    }

    /// `Σ x_i w_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        if w.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum", "weight length mismatch"));
        }
        let s = self.value(x).data().iter().zip(w).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, w: w.to_vec() }, "weighted_sum")
    }

    /// Mean squared difference against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err("mse_loss", format!("{} predictions, {} targets", p.len(), target.len())));
        }
        let s = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        self.push(Tensor::scalar(s), Op::Mse { pred, target: target.to_vec() }, "mse_loss")
    }

    /// Mean Tukey biweight loss of `pred − target`, with residuals measured in
    /// units of `1.4826 · MAD` of this batch's residuals. Residuals beyond `c`
    /// scales cost the constant `c²/6`. The scale is differentiated too: it
    /// depends on the few order statistics that define the two medians.
    pub fn tukey_loss(&mut self, pred: Var, target: &[f64], c: f64) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err("tukey_loss", format!("{} predictions, {} targets", p.len(), target.len())));
        }
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("tukey constant must be positive".into()));
        }
        let residual: Vec<f64> = p.iter().zip(target).map(|(a, b)| a - b).collect();
        let med_w = median_weights(&residual);
        let med: f64 = med_w.iter().map(|&(i, w)| w * residual[i]).sum();
        let dev: Vec<f64> = residual.iter().map(|r| (r - med).abs()).collect();
        let mad_w = median_weights(&dev);
        let mad: f64 = mad_w.iter().map(|&(i, w)| w * dev[i]).sum();
        let floor = 1e-12 * (1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let raw = MAD_TO_SIGMA * mad;
        let scale = raw.max(floor);
        // d scale / d r_j, sparse
        let mut dscale = Vec::new();
        if raw > floor {
            for &(k, wk) in &mad_w {
                let sgn = (residual[k] - med).signum();
                dscale.push((k, MAD_TO_SIGMA * wk * sgn));
                for &(m, wm) in &med_w {
                    dscale.push((m, -MAD_TO_SIGMA * wk * sgn * wm));
                }
            }
        }
        let s = residual.iter().map(|r| tukey_rho(r / scale, c)).sum::<f64>() / residual.len() as f64;
        self.push(Tensor::scalar(s), Op::Tukey { pred, residual, scale, c, dscale }, "tukey_loss")
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Vec<f64>) -> Result<Grads> {
        if seed.len() != self.value(out).len() {
            return Err(shape_err("backward", "seed length mismatch"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Grads(grads))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv { x, w, b, kh, kw } => {
                let [bs, cin, h, wd] = nodes[x.0].value.dims4().unwrap();
                let cout = nodes[w.0].value.shape()[0];
                let (hw, k) = (h * wd, cin * kh * kw);
                let (xv, wv) = (nodes[x.0].value.data(), nodes[w.0].value.data());
                let pointwise = kh * kw == 1;
                let mut cols = vec![0.0; if pointwise { 0 } else { k * hw }];
                if let Some(db) = slot(nodes, grads, *b) {
                    for bi in 0..bs {
                        for co in 0..cout {
                            db[co] += g[(bi * cout + co) * hw..][..hw].iter().sum::<f64>();
                        }
                    }
                }
                if nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; cout * k];
                    for bi in 0..bs {
                        let xb = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                        let src = if pointwise {
                            xb
                        } else {
                            im2col(xb, cin, h, wd, *kh, *kw, &mut cols);
                            &cols
                        };
                        gemm(cout, hw, k, &g[bi * cout * hw..], false, src, true, &mut dw, 1.0);
                    }
                    let dst = slot(nodes, grads, *w).unwrap();
                    dst.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    let mut dcols = vec![0.0; k * hw];
                    for bi in 0..bs {
                        let dxb = &mut dx[bi * cin * hw..(bi + 1) * cin * hw];
                        if pointwise {
                            gemm(k, cout, hw, wv, true, &g[bi * cout * hw..], false, dxb, 1.0);
                        } else {
                            gemm(k, cout, hw, wv, true, &g[bi * cout * hw..], false, &mut dcols, 0.0);
                            col2im(&dcols, cin, h, wd, *kh, *kw, dxb);
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (&j, &gv) in argmax.iter().zip(g) {
                        dx[j] += gv;
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let [bs, c, h, w] = nodes[x.0].value.dims4().unwrap();
                let hw = h * w;
                let gam = nodes[gamma.0].value.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..bs {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for j in off..off + hw {
                            sum_g[ch] += g[j];
                            sum_gx[ch] += g[j] * xhat[j];
                        }
                    }
                }
                if let Some(d) = slot(nodes, grads, *beta) {
                    d.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
                }
                if let Some(d) = slot(nodes, grads, *gamma) {
                    d.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b);
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    let n = (bs * hw) as f64;
                    for b in 0..bs {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let k = gam[ch] * inv_std[ch];
                            for j in off..off + hw {
                                dx[j] += if *train {
                                    k * (g[j] - sum_g[ch] / n - xhat[j] * sum_gx[ch] / n)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                }
            }
            Op::Upsample { x, fh, fw } => {
                let [bs, c, h, w] = nodes[x.0].value.dims4().unwrap();
                let (ty, tx) = (upsample_taps(h, *fh), upsample_taps(w, *fw));
                let (oh, ow) = (h * fh, w * fw);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for plane in 0..bs * c {
                        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
                        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                                let gv = src[oy * ow + ox];
                                dst[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                                dst[y0 * w + x1] += gv * (1.0 - ly) * lx;
                                dst[y1 * w + x0] += gv * ly * (1.0 - lx);
                                dst[y1 * w + x1] += gv * ly * lx;
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (bs, k) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let o = nodes[w.0].value.shape()[0];
                let (xv, wv) = (nodes[x.0].value.data(), nodes[w.0].value.data());
                if let Some(db) = slot(nodes, grads, *b) {
                    for row in g.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(dw) = slot(nodes, grads, *w) {
                    gemm(o, bs, k, g, true, xv, false, dw, 1.0);
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    gemm(bs, o, k, g, false, wv, false, dx, 1.0);
                }
            }
            Op::FixedLinear { x, a } => {
                let (bs, k) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let rows = a.len() / k;
                if let Some(dx) = slot(nodes, grads, *x) {
                    gemm(bs, rows, k, g, false, a, false, dx, 1.0);
                }
            }
            Op::Concat { xs } => {
                let [bs, total, h, w] = nodes[i].value.dims4().unwrap();
                let hw = h * w;
                let mut off = 0;
                for v in xs {
                    let c = nodes[v.0].value.shape()[1];
                    if let Some(dx) = slot(nodes, grads, *v) {
                        for b in 0..bs {
                            let src = &g[(b * total + off) * hw..][..c * hw];
                            dx[b * c * hw..(b + 1) * c * hw].iter_mut().zip(src).for_each(|(a, s)| *a += s);
                        }
                    }
                    off += c;
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(d) = slot(nodes, grads, *v) {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(d) = slot(nodes, grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += s * b);
                }
            }
            Op::Reshape { x } => {
                if let Some(d) = slot(nodes, grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::WeightedSum { x, w } => {
                if let Some(d) = slot(nodes, grads, *x) {
                    d.iter_mut().zip(w).for_each(|(a, b)| *a += g[0] * b);
                }
            }
            Op::Mse { pred, target } => {
                let p = nodes[pred.0].value.data();
                let k = 2.0 * g[0] / p.len() as f64;
                if let Some(d) = slot(nodes, grads, *pred) {
                    for ((a, pv), t) in d.iter_mut().zip(p).zip(target) {
                        *a += k * (pv - t);
                    }
                }
            }
            Op::Tukey { pred, residual, scale, c, dscale } => {
                let n = residual.len() as f64;
                if let Some(d) = slot(nodes, grads, *pred) {
                    // ψ(u) = u (1 − (u/c)²)² inside the cutoff
                    let psi = |u: f64| if u.abs() < *c { u * (1.0 - (u / c) * (u / c)).powi(2) } else { 0.0 };
                    let mut dl_ds = 0.0;
                    for (a, r) in d.iter_mut().zip(residual) {
                        let u = r / scale;
                        let p = psi(u);
                        *a += g[0] * p / scale / n;
                        dl_ds -= p * u / scale / n;
                    }
                    for &(j, w) in dscale {
                        d[j] += g[0] * dl_ds * w;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor {
        Tensor::new(&shape, data).unwrap()
    }

    #[test]
    fn ones_kernel_on_impulse() {
        let mut g = Graph::new();
        let x = g.constant(t4([1, 1, 1, 3], vec![0.0, 1.0, 0.0])).unwrap();
        let w = g.constant(t4([1, 1, 1, 3], vec![1.0; 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[1])).unwrap();
        let y = g.conv(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| i as f64 * 0.1 - 1.0).collect();
        let x = g.constant(t4([1, 2, 4, 5], data.clone())).unwrap();
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0; // out 0 <- in 0 centre
        k[9 * 3 + 4] = 1.0; // out 1 <- in 1 centre
        let w = g.constant(t4([2, 2, 3, 3], k)).unwrap();
        let b = g.constant(Tensor::zeros(&[2])).unwrap();
        let y = g.conv(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), data.as_slice());
    }

    #[test]
    fn pooling_and_upsampling_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t4([1, 1, 1, 4], vec![1.0, 3.0, 2.0, 0.0])).unwrap();
        let p = g.maxpool(x, 1, 2).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 2.0]);
        let s = g.constant(t4([1, 1, 1, 2], vec![0.0, 1.0])).unwrap();
        let u = g.upsample(s, 1, 2).unwrap();
        assert_eq!(g.value(u).data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn maxpool_ties_go_to_first_index() {
        let mut g = Graph::new();
        let x = g.param(t4([1, 1, 1, 2], vec![5.0, 5.0]), 0).unwrap();
        let p = g.maxpool(x, 1, 2).unwrap();
        let l = g.weighted_sum(p, &[1.0]).unwrap();
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.wrt(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn losses_closed_forms() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 0).unwrap();
        let l = g.mse_loss(p, &[0.5, 1.5, 2.5, 3.5]).unwrap();
        assert!((g.value(l).data()[0] - 0.25).abs() < 1e-15);
        let gr = g.backward(l).unwrap();
        assert!(gr.wrt(p).unwrap().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let z = g.tukey_loss(p, &[1.0, 2.0, 3.0, 4.0], 4.685).unwrap();
        assert_eq!(g.value(z).data()[0], 0.0);
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1e308)).unwrap();
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 1, 4])).unwrap();
        let w = g.constant(Tensor::zeros(&[3, 1, 1, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.conv(x, w, b), Err(Error::Shape { .. })));
        assert!(g.maxpool(x, 1, 3).is_err());
        let y = g.constant(Tensor::zeros(&[1, 2, 1, 3])).unwrap();
        assert!(g.add(x, y).is_err());
        assert!(g.concat(&[x, y]).is_err());
    }
}

//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. `backward` walks the tape in exact reverse
//! execution order; only leaves keep gradients between calls, and those
//! accumulate until `zero_grad`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{conv_backward, conv_forward, deconv_backward, deconv_forward, ConvGeom, DeconvGeom};
use super::scalar::Real;
use super::tensor::{softmax_channels, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum BnMode<S> {
    /// Normalize with batch statistics.
    Train { eps: f64 },
    /// Normalize with stored running statistics.
    Eval { mean: Vec<S>, var: Vec<S>, eps: f64 },
}

/// Per-channel statistics of a training-mode batch norm call.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Unbiased variance, used for running estimates.
    pub var: Vec<S>,
}

enum Op<S> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: DeconvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        train: bool,
    },
    Relu {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    WeightedCe {
        logits: Var,
        probs: Vec<S>,
        target: Vec<u8>,
        weights: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    leaf_grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor; only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Hash of every ReLU sign pattern and max-pool argmax on the tape.
    ///
    /// Two evaluations with equal signatures lie on the same smooth piece of
    /// the network function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > S::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    // ---- operations -------------------------------------------------------

    /// Cross-correlation of `x (N,Cin,H,W)` with `w (Cout,Cin,k,k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).shape();
        let [cout, wcin, kh, kw] = self.value(w).shape();
        if wcin != cin {
            return Err(shape_err!("conv kernel expects {wcin} input channels, got {cin}"));
        }
        if kh != kw || !(1..=3).contains(&kh) {
            return Err(shape_err!("conv kernel must be square with size 1..=3, got {kh}x{kw}"));
        }
        if !(1..=2).contains(&stride) {
            return Err(shape_err!("conv stride must be 1 or 2, got {stride}"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err!("conv input {h}x{wd} smaller than kernel"));
        }
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return Err(shape_err!("conv bias length {} != {cout}", self.value(b).numel()));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let mut out = Tensor::zeros([n, cout, geom.ho, geom.wo]);
        conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Conv { x, w, b, geom }, rg))
    }

    /// 2×2 max pooling with stride 2; ties go to the first element in
    /// row-major window order.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("max-pool needs even spatial dims, got {h}x{w}"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([n, c, ho, wo], out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Transposed 2×2 stride-2 convolution with kernel `(Cin, Cout, 2, 2)`.
    pub fn deconv2x2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).shape();
        let [kcin, cout, kh, kw] = self.value(w).shape();
        if kcin != cin || kh != 2 || kw != 2 {
            return Err(shape_err!(
                "deconv kernel {:?} incompatible with {cin} input channels",
                self.value(w).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return Err(shape_err!("deconv bias length mismatch"));
            }
        }
        let geom = DeconvGeom { n, cin, h, w: wd, cout };
        let mut out = Tensor::zeros([n, cout, 2 * h, 2 * wd]);
        deconv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Deconv { x, w, b, geom }, rg))
    }

    /// Per-channel batch normalization. In train mode the batch statistics
    /// are returned so the caller can update running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: &BnMode<S>,
    ) -> Result<(Var, Option<BatchStats<S>>)> {
        let [n, c, h, w] = self.value(x).shape();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(shape_err!("batch norm affine parameters must have length {c}"));
        }
        let hw = h * w;
        let m = n * hw;
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let mut xhat = vec![S::zero(); src.len()];
        let mut out = vec![S::zero(); src.len()];
        let mut inv_std = vec![S::zero(); c];
        let mut stats = None;
        let train = matches!(mode, BnMode::Train { .. });
        match mode {
            BnMode::Train { eps } => {
                if m < 2 {
                    return Err(shape_err!(
                        "training-mode batch norm needs at least two values per channel"
                    ));
                }
                let mut means = vec![S::zero(); c];
                let mut vars = vec![S::zero(); c];
                for ch in 0..c {
                    let mut sum = S::zero();
                    for b in 0..n {
                        sum += src[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<S>();
                    }
                    let mean = sum / S::of(m as f64);
                    let mut sq = S::zero();
                    for b in 0..n {
                        for &v in &src[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    let var = sq / S::of(m as f64);
                    means[ch] = mean;
                    vars[ch] = sq / S::of((m - 1) as f64);
                    inv_std[ch] = S::one() / (var + S::of(*eps)).sqrt();
                }
                bn_apply(src, &means, &inv_std, g, bta, [n, c, hw], &mut xhat, &mut out);
                stats = Some(BatchStats { mean: means, var: vars });
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err!("running statistics must have length {c}"));
                }
                for ch in 0..c {
                    inv_std[ch] = S::one() / (var[ch] + S::of(*eps)).sqrt();
                }
                bn_apply(src, mean, &inv_std, g, bta, [n, c, hw], &mut xhat, &mut out);
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new([n, c, h, w], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a.max(S::zero())).collect()).unwrap();
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    /// Channel concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).shape();
        let [nb, cb, hb, wb] = self.value(b).shape();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(shape_err!(
                "concat needs equal N, H, W: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let (sa, sb) = (ca * ha * wa, cb * hb * wb);
        let mut out = Vec::with_capacity(na * (sa + sb));
        for n in 0..na {
            out.extend_from_slice(&self.value(a).data()[n * sa..(n + 1) * sa]);
            out.extend_from_slice(&self.value(b).data()[n * sb..(n + 1) * sb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([na, ca + cb, ha, wa], out)?, Op::Concat { a, b }, rg))
    }

    /// Channels `start .. start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape();
        if start + len > c {
            return Err(shape_err!("channel slice {start}..{} exceeds {c}", start + len));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            out.extend_from_slice(&self.value(x).data()[base..base + len * hw]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([n, len, h, w], out)?, Op::Slice { x, start }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Class-weighted cross-entropy over `logits (N,C,H,W)` and integer
    /// targets `(N,H,W)`: per-slice mean over pixels, then mean over the batch.
    pub fn weighted_cross_entropy(&mut self, logits: Var, target: &[u8], weights: &[f64]) -> Result<Var> {
        let [n, c, h, w] = self.value(logits).shape();
        if weights.len() != c {
            return Err(shape_err!("{} class weights for {c} channels", weights.len()));
        }
        if target.len() != n * h * w {
            return Err(shape_err!("target has {} pixels, logits {}", target.len(), n * h * w));
        }
        if let Some(&bad) = target.iter().find(|&&t| t as usize >= c) {
            return Err(Error::Label(bad as u32));
        }
        let hw = h * w;
        let probs = softmax_channels(self.value(logits));
        let x = self.value(logits).data();
        let mut total = 0.0f64;
        for b in 0..n {
            let mut slice_loss = 0.0f64;
            for p in 0..hw {
                let t = target[b * hw + p] as usize;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..c {
                    mx = mx.max(x[(b * c + k) * hw + p].f64());
                }
                let lse = mx
                    + (0..c)
                        .map(|k| (x[(b * c + k) * hw + p].f64() - mx).exp())
                        .sum::<f64>()
                        .ln();
                slice_loss -= weights[t] * (x[(b * c + t) * hw + p].f64() - lse);
            }
            total += slice_loss / hw as f64;
        }
        let loss = S::of(total / n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCe {
                logits,
                probs: probs.into_data(),
                target: target.to_vec(),
                weights: weights.iter().map(|&w| S::of(w)).collect(),
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{what} needs equal shapes: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (va, vb) = (self.value(a), self.value(b));
        Tensor::new(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
        .unwrap()
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every requires-grad leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Graph("value is detached from any requires-grad leaf".into()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[i].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                    for (s, g) in slot.data_mut().iter_mut().zip(&gy) {
                        *s += *g;
                    }
                }
                Op::Conv { x, w, b, geom } => {
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    let mut dx = take_slot(&mut grads, nodes, *x);
                    let mut dw = take_slot(&mut grads, nodes, *w);
                    let mut db = b.and_then(|b| take_slot(&mut grads, nodes, b));
                    conv_backward(
                        geom,
                        xv,
                        wv,
                        &gy,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    put_slot(&mut grads, *x, dx);
                    put_slot(&mut grads, *w, dw);
                    if let Some(b) = b {
                        put_slot(&mut grads, *b, db);
                    }
                }
                Op::Deconv { x, w, b, geom } => {
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    let mut dx = take_slot(&mut grads, nodes, *x);
                    let mut dw = take_slot(&mut grads, nodes, *w);
                    let mut db = b.and_then(|b| take_slot(&mut grads, nodes, b));
                    deconv_backward(
                        geom,
                        xv,
                        wv,
                        &gy,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    put_slot(&mut grads, *x, dx);
                    put_slot(&mut grads, *w, dw);
                    if let Some(b) = b {
                        put_slot(&mut grads, *b, db);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if let Some(mut dx) = take_slot(&mut grads, nodes, *x) {
                        for (&idx, &g) in argmax.iter().zip(&gy) {
                            dx[idx as usize] += g;
                        }
                        put_slot(&mut grads, *x, Some(dx));
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let [n, c, h, w] = node.value.shape();
                    let hw = h * w;
                    let m = S::of((n * hw) as f64);
                    let gv = nodes[gamma.0].value.data();
                    let mut sum_dy = vec![S::zero(); c];
                    let mut sum_dy_xhat = vec![S::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                sum_dy[ch] += gy[i];
                                sum_dy_xhat[ch] += gy[i] * xhat[i];
                            }
                        }
                    }
                    if let Some(mut dg) = take_slot(&mut grads, nodes, *gamma) {
                        for ch in 0..c {
                            dg[ch] += sum_dy_xhat[ch];
                        }
                        put_slot(&mut grads, *gamma, Some(dg));
                    }
                    if let Some(mut dbeta) = take_slot(&mut grads, nodes, *beta) {
                        for ch in 0..c {
                            dbeta[ch] += sum_dy[ch];
                        }
                        put_slot(&mut grads, *beta, Some(dbeta));
                    }
                    if let Some(mut dx) = take_slot(&mut grads, nodes, *x) {
                        for b in 0..n {
                            for ch in 0..c {
                                let scale = gv[ch] * inv_std[ch];
                                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                    dx[i] += if *train {
                                        scale / m * (m * gy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch])
                                    } else {
                                        scale * gy[i]
                                    };
                                }
                            }
                        }
                        put_slot(&mut grads, *x, Some(dx));
                    }
                }
                Op::Relu { x } => {
                    if let Some(mut dx) = take_slot(&mut grads, nodes, *x) {
                        for ((d, &g), &y) in dx.iter_mut().zip(&gy).zip(node.value.data()) {
                            if y > S::zero() {
                                *d += g;
                            }
                        }
                        put_slot(&mut grads, *x, Some(dx));
                    }
                }
                Op::Concat { a, b } => {
                    let [n, _, h, w] = node.value.shape();
                    let sa = nodes[a.0].value.numel() / n;
                    let sb = nodes[b.0].value.numel() / n;
                    let _ = (h, w);
                    if let Some(mut da) = take_slot(&mut grads, nodes, *a) {
                        for bi in 0..n {
                            let src = &gy[bi * (sa + sb)..bi * (sa + sb) + sa];
                            for (d, &g) in da[bi * sa..(bi + 1) * sa].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                        put_slot(&mut grads, *a, Some(da));
                    }
                    if let Some(mut db) = take_slot(&mut grads, nodes, *b) {
                        for bi in 0..n {
                            let src = &gy[bi * (sa + sb) + sa..(bi + 1) * (sa + sb)];
                            for (d, &g) in db[bi * sb..(bi + 1) * sb].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                        put_slot(&mut grads, *b, Some(db));
                    }
                }
                Op::Slice { x, start } => {
                    if let Some(mut dx) = take_slot(&mut grads, nodes, *x) {
                        let [n, len, h, w] = node.value.shape();
                        let c = nodes[x.0].value.shape()[1];
                        let hw = h * w;
                        for b in 0..n {
                            let base = (b * c + start) * hw;
                            for (d, &g) in dx[base..base + len * hw]
                                .iter_mut()
                                .zip(&gy[b * len * hw..(b + 1) * len * hw])
                            {
                                *d += g;
                            }
                        }
                        put_slot(&mut grads, *x, Some(dx));
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if let Some(mut d) = take_slot(&mut grads, nodes, v) {
                            for (d, &g) in d.iter_mut().zip(&gy) {
                                *d += g;
                            }
                            put_slot(&mut grads, v, Some(d));
                        }
                    }
                }
                Op::Mul { a, b } => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if let Some(mut d) = take_slot(&mut grads, nodes, v) {
                            for ((d, &g), &o) in d.iter_mut().zip(&gy).zip(nodes[other.0].value.data()) {
                                *d += g * o;
                            }
                            put_slot(&mut grads, v, Some(d));
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(mut dx) = take_slot(&mut grads, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += gy[0]);
                        put_slot(&mut grads, *x, Some(dx));
                    }
                }
                Op::WeightedCe {
                    logits,
                    probs,
                    target,
                    weights,
                } => {
                    if let Some(mut dl) = take_slot(&mut grads, nodes, *logits) {
                        let [n, c, h, w] = nodes[logits.0].value.shape();
                        let hw = h * w;
                        let scale = gy[0] / S::of((n * hw) as f64);
                        for b in 0..n {
                            for p in 0..hw {
                                let t = target[b * hw + p] as usize;
                                let wt = weights[t] * scale;
                                for k in 0..c {
                                    let i = (b * c + k) * hw + p;
                                    let onehot = if k == t { S::one() } else { S::zero() };
                                    dl[i] += wt * (probs[i] - onehot);
                                }
                            }
                        }
                        put_slot(&mut grads, *logits, Some(dl));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Removes the gradient buffer of `v` (allocating zeros) when `v` needs one.
fn take_slot<S: Real>(grads: &mut [Option<Vec<S>>], nodes: &[Node<S>], v: Var) -> Option<Vec<S>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(
        grads[v.0]
            .take()
            .unwrap_or_else(|| vec![S::zero(); nodes[v.0].value.numel()]),
    )
}

fn put_slot<S>(grads: &mut [Option<Vec<S>>], v: Var, g: Option<Vec<S>>) {
    if g.is_some() {
        grads[v.0] = g;
    }
}

#[allow(clippy::too_many_arguments)]
fn bn_apply<S: Real>(
    src: &[S],
    mean: &[S],
    inv_std: &[S],
    g: &[S],
    b: &[S],
    [n, c, hw]: [usize; 3],
    xhat: &mut [S],
    out: &mut [S],
) {
    for bi in 0..n {
        for ch in 0..c {
            for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                xhat[i] = (src[i] - mean[ch]) * inv_std[ch];
                out[i] = g[ch] * xhat[i] + b[ch];
            }
        }
    }
}

//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The training objective is a scalar and the parameter count is in the
//! thousands, so gradients are computed by recording the forward pass and
//! sweeping it once in reverse. Node ids are topologically ordered by
//! construction: an op can only reference already-recorded inputs.
//!
//! Gradients accumulate with `+=`, so a parameter used at several points of a
//! multi-period trajectory receives the sum of all path contributions without
//! special casing.

use crate::error::{CoreError, Result};
use crate::kernels;
use crate::rng::Rng;
use crate::tensor::Tensor3;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Relu(usize),
    Ln(usize),
    Sqrt(usize),
    Affine {
        x: usize,
        mul: f64,
    },
    SumAll(usize),
    SubBcast {
        x: usize,
        s: usize,
    },
    DivBcast {
        x: usize,
        s: usize,
    },
    StackScalars(Vec<usize>),
    ConcatChannels(usize, usize),
    SliceTime {
        x: usize,
        start: usize,
    },
    DilatedConv {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
    },
    SuffixConv {
        x: usize,
        w: usize,
        b: usize,
        keep: usize,
    },
    Corr {
        x: usize,
        w: usize,
        b: usize,
    },
    Zhang {
        x: usize,
        w: usize,
        b: usize,
    },
    SoftmaxAssets(usize),
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
}

struct Node {
    value: Tensor3,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the root w.r.t. the given node, if it was reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Number of nodes whose backward rule ran (each exactly once).
    pub fn visited_nodes(&self) -> usize {
        self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor3, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Record an input that gradients do not flow into (data, constants).
    pub fn constant(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Record a gradient-tracked leaf (parameters).
    pub fn leaf(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(CoreError::shape(op_name, va.shape_str(), vb.shape_str()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let v = crate::tensor::tensor_add(self.value(a), self.value(b))?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Add(a.0, b.0), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let (m, h, d) = self.value(a).shape();
        let v = Tensor3::from_vec(m, h, d, data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Sub(a.0, b.0), needs))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("hadamard", a, b)?;
        let v = crate::tensor::hadamard(self.value(a), self.value(b))?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Hadamard(a.0, b.0), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let v = Tensor3::from_vec(m, h, d, data).expect("same shape");
        let needs = self.needs(x.0);
        self.push(v, Op::Relu(x.0), needs)
    }

    /// Elementwise natural log; all entries must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(CoreError::NonFinite("ln of non-positive value"));
        }
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| v.ln()).collect();
        let v = Tensor3::from_vec(m, h, d, data)?;
        let needs = self.needs(x.0);
        Ok(self.push(v, Op::Ln(x.0), needs))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(CoreError::NonFinite("sqrt of negative value"));
        }
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| v.sqrt()).collect();
        let v = Tensor3::from_vec(m, h, d, data)?;
        let needs = self.needs(x.0);
        Ok(self.push(v, Op::Sqrt(x.0), needs))
    }

    /// Elementwise `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| mul * v + add).collect();
        let v = Tensor3::from_vec(m, h, d, data).expect("same shape");
        let needs = self.needs(x.0);
        self.push(v, Op::Affine { x: x.0, mul }, needs)
    }

    /// Sum of all entries, as a 1x1x1 scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x.0);
        self.push(Tensor3::scalar(s), Op::SumAll(x.0), needs)
    }

    /// Tensor minus a scalar node, broadcast over all entries.
    pub fn sub_broadcast(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(CoreError::shape(
                "sub_broadcast",
                "1x1x1",
                self.value(s).shape_str(),
            ));
        }
        let sv = self.value(s).scalar_value();
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| v - sv).collect();
        let v = Tensor3::from_vec(m, h, d, data)?;
        let needs = self.needs(x.0) || self.needs(s.0);
        Ok(self.push(v, Op::SubBcast { x: x.0, s: s.0 }, needs))
    }

    /// Tensor divided by a scalar node, broadcast over all entries.
    pub fn div_broadcast(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(CoreError::shape(
                "div_broadcast",
                "1x1x1",
                self.value(s).shape_str(),
            ));
        }
        let sv = self.value(s).scalar_value();
        if sv == 0.0 {
            return Err(CoreError::NonFinite("division by zero"));
        }
        let (m, h, d) = self.value(x).shape();
        let data = self.value(x).data().iter().map(|v| v / sv).collect();
        let v = Tensor3::from_vec(m, h, d, data)?;
        let needs = self.needs(x.0) || self.needs(s.0);
        Ok(self.push(v, Op::DivBcast { x: x.0, s: s.0 }, needs))
    }

    /// Stack scalar nodes into a 1 x T x 1 tensor.
    pub fn stack_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            if !self.value(x).is_scalar() {
                return Err(CoreError::shape(
                    "stack_scalars",
                    "1x1x1",
                    self.value(x).shape_str(),
                ));
            }
            data.push(self.value(x).scalar_value());
        }
        let v = Tensor3::from_vec(1, xs.len(), 1, data)?;
        let needs = xs.iter().any(|x| self.needs(x.0));
        Ok(self.push(v, Op::StackScalars(xs.iter().map(|x| x.0).collect()), needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, ha, _) = self.value(a).shape();
        let (mb, hb, _) = self.value(b).shape();
        if ma != mb || ha != hb {
            return Err(CoreError::shape(
                "concat_channels",
                self.value(a).shape_str(),
                self.value(b).shape_str(),
            ));
        }
        let v = kernels::concat_channels_forward(self.value(a), self.value(b));
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::ConcatChannels(a.0, b.0), needs))
    }

    /// Time range [start, start+len) of a tensor.
    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).time_slice(start, len)?;
        let needs = self.needs(x.0);
        Ok(self.push(v, Op::SliceTime { x: x.0, start }, needs))
    }

    /// Dilated causal convolution with left zero padding.
    /// `w` is out x in x taps, `b` is 1 x 1 x out.
    pub fn dilated_conv(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (_, _, d_in) = self.value(x).shape();
        let (d_out, w_in, taps) = self.value(w).shape();
        if w_in != d_in || dilation == 0 || taps == 0 {
            return Err(CoreError::shape(
                "dilated_conv",
                format!("kernel ?x{d_in}x(>0), dilation >= 1"),
                format!("{} dilation {dilation}", self.value(w).shape_str()),
            ));
        }
        if self.value(b).len() != d_out {
            return Err(CoreError::shape(
                "dilated_conv bias",
                format!("{d_out}"),
                format!("{}", self.value(b).len()),
            ));
        }
        let v =
            kernels::conv_dilated_forward(self.value(x), self.value(w), self.value(b), dilation);
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            v,
            Op::DilatedConv {
                x: x.0,
                w: w.0,
                b: b.0,
                dilation,
            },
            needs,
        ))
    }

    /// Valid (unpadded) causal convolution keeping the last `keep` positions.
    pub fn suffix_conv(&mut self, x: Var, w: Var, b: Var, keep: usize) -> Result<Var> {
        let (_, h, d_in) = self.value(x).shape();
        let (d_out, w_in, taps) = self.value(w).shape();
        if w_in != d_in {
            return Err(CoreError::shape(
                "suffix_conv",
                format!("kernel ?x{d_in}x?"),
                self.value(w).shape_str(),
            ));
        }
        if keep == 0 || h < taps + keep - 1 {
            return Err(CoreError::shape(
                "suffix_conv",
                format!("time length >= taps + keep - 1 = {}", taps + keep - 1),
                format!("{h}"),
            ));
        }
        if self.value(b).len() != d_out {
            return Err(CoreError::shape(
                "suffix_conv bias",
                format!("{d_out}"),
                format!("{}", self.value(b).len()),
            ));
        }
        let v = kernels::conv_suffix_forward(self.value(x), self.value(w), self.value(b), keep);
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            v,
            Op::SuffixConv {
                x: x.0,
                w: w.0,
                b: b.0,
                keep,
            },
            needs,
        ))
    }

    /// Correlation layer; `w` is (m+1) x 1 x d, `b` is scalar.
    pub fn corr(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, _, d) = self.value(x).shape();
        if self.value(w).shape() != (m + 1, 1, d) {
            return Err(CoreError::shape(
                "corr",
                format!("{}x1x{}", m + 1, d),
                self.value(w).shape_str(),
            ));
        }
        if !self.value(b).is_scalar() {
            return Err(CoreError::shape(
                "corr bias",
                "1x1x1",
                self.value(b).shape_str(),
            ));
        }
        let bias = self.value(b).scalar_value();
        let v = kernels::corr_forward(self.value(x), self.value(w), bias);
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            v,
            Op::Corr {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            needs,
        ))
    }

    /// Zero-padded cross-asset convolution; `w` is m x d_out x d_in, `b` scalar.
    pub fn zhang(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, _, d) = self.value(x).shape();
        let (wm, _, w_in) = self.value(w).shape();
        if wm != m || w_in != d {
            return Err(CoreError::shape(
                "zhang",
                format!("{m}x?x{d}"),
                self.value(w).shape_str(),
            ));
        }
        if !self.value(b).is_scalar() {
            return Err(CoreError::shape(
                "zhang bias",
                "1x1x1",
                self.value(b).shape_str(),
            ));
        }
        let bias = self.value(b).scalar_value();
        let v = kernels::zhang_forward(self.value(x), self.value(w), bias);
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            v,
            Op::Zhang {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            needs,
        ))
    }

    /// Softmax over the asset axis; requires a single channel.
    pub fn softmax_assets(&mut self, x: Var) -> Result<Var> {
        if self.value(x).channels() != 1 {
            return Err(CoreError::shape(
                "softmax_assets",
                "m x h x 1",
                self.value(x).shape_str(),
            ));
        }
        let v = kernels::softmax_assets_forward(self.value(x));
        let needs = self.needs(x.0);
        Ok(self.push(v, Op::SoftmaxAssets(x.0), needs))
    }

    /// Inverted dropout: each entry is zeroed with probability `rate`,
    /// survivors are scaled by 1/(1-rate). Recording draws one mask; eval-mode
    /// callers simply do not record the op.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Var {
        if rate == 0.0 {
            return x;
        }
        debug_assert!((0.0..1.0).contains(&rate));
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
            .collect();
        let (m, h, d) = self.value(x).shape();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, mk)| v * mk)
            .collect();
        let v = Tensor3::from_vec(m, h, d, data).expect("same shape");
        let needs = self.needs(x.0);
        self.push(v, Op::Dropout { x: x.0, mask }, needs)
    }

    /// Reverse sweep from a scalar root. Each reachable node's rule runs
    /// exactly once; gradients accumulate into every grad-tracked ancestor.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(CoreError::InvalidArgument(
                "backward root is not on this tape".into(),
            ));
        }
        if !self.value(root).is_scalar() {
            return Err(CoreError::shape(
                "backward root",
                "1x1x1",
                self.value(root).shape_str(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        let mut visited = 0usize;

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            visited += 1;
            let keep = matches!(self.nodes[id].op, Op::Leaf);
            self.backprop_node(id, &g, &mut grads);
            if keep {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let buf = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        f(buf);
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                self.accumulate(grads, *a, |buf| {
                    for ((o, gi), bv) in buf.iter_mut().zip(g).zip(vb) {
                        *o += gi * bv;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for ((o, gi), av) in buf.iter_mut().zip(g).zip(va) {
                        *o += gi * av;
                    }
                });
            }
            Op::Relu(x) => {
                let vx = self.nodes[*x].value.data();
                self.accumulate(grads, *x, |buf| {
                    for ((o, gi), xv) in buf.iter_mut().zip(g).zip(vx) {
                        // subgradient 0 at the kink
                        if *xv > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Ln(x) => {
                let vx = self.nodes[*x].value.data();
                self.accumulate(grads, *x, |buf| {
                    for ((o, gi), xv) in buf.iter_mut().zip(g).zip(vx) {
                        *o += gi / xv;
                    }
                });
            }
            Op::Sqrt(x) => {
                let vy = self.nodes[id].value.data();
                self.accumulate(grads, *x, |buf| {
                    for ((o, gi), yv) in buf.iter_mut().zip(g).zip(vy) {
                        *o += gi * 0.5 / yv;
                    }
                });
            }
            Op::Affine { x, mul } => {
                let mul = *mul;
                self.accumulate(grads, *x, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi * mul;
                    }
                });
            }
            Op::SumAll(x) => {
                let gs = g[0];
                self.accumulate(grads, *x, |buf| {
                    for o in buf.iter_mut() {
                        *o += gs;
                    }
                });
            }
            Op::SubBcast { x, s } => {
                self.accumulate(grads, *x, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                let gsum: f64 = g.iter().sum();
                self.accumulate(grads, *s, |buf| {
                    buf[0] -= gsum;
                });
            }
            Op::DivBcast { x, s } => {
                let sv = self.nodes[*s].value.scalar_value();
                let vy = self.nodes[id].value.data();
                self.accumulate(grads, *x, |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi / sv;
                    }
                });
                let acc: f64 = g.iter().zip(vy).map(|(gi, yv)| gi * yv).sum();
                self.accumulate(grads, *s, |buf| {
                    buf[0] -= acc / sv;
                });
            }
            Op::StackScalars(xs) => {
                for (t, &x) in xs.iter().enumerate() {
                    let gt = g[t];
                    self.accumulate(grads, x, |buf| {
                        buf[0] += gt;
                    });
                }
            }
            Op::ConcatChannels(a, b) => {
                let (m, h, da) = self.nodes[*a].value.shape();
                let db = self.nodes[*b].value.channels();
                let d = da + db;
                self.accumulate(grads, *a, |buf| {
                    for i in 0..m {
                        for j in 0..h {
                            for k in 0..da {
                                buf[(i * h + j) * da + k] += g[(i * h + j) * d + k];
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for i in 0..m {
                        for j in 0..h {
                            for k in 0..db {
                                buf[(i * h + j) * db + k] += g[(i * h + j) * d + da + k];
                            }
                        }
                    }
                });
            }
            Op::SliceTime { x, start } => {
                let (m, hx, d) = self.nodes[*x].value.shape();
                let len = self.nodes[id].value.time_len();
                self.accumulate(grads, *x, |buf| {
                    for i in 0..m {
                        for j in 0..len {
                            for k in 0..d {
                                buf[(i * hx + start + j) * d + k] += g[(i * len + j) * d + k];
                            }
                        }
                    }
                });
            }
            Op::DilatedConv { x, w, b, dilation } => {
                self.conv_backward(grads, *x, *w, *b, g, |vx, vw, gout, dx, dw, db| {
                    kernels::conv_dilated_backward(vx, vw, *dilation, gout, dx, dw, db);
                });
            }
            Op::SuffixConv { x, w, b, keep } => {
                self.conv_backward(grads, *x, *w, *b, g, |vx, vw, gout, dx, dw, db| {
                    kernels::conv_suffix_backward(vx, vw, *keep, gout, dx, dw, db);
                });
            }
            Op::Corr { x, w, b } => {
                self.conv_backward(grads, *x, *w, *b, g, |vx, vw, gout, dx, dw, db| {
                    kernels::corr_backward(vx, vw, gout, dx, dw, db);
                });
            }
            Op::Zhang { x, w, b } => {
                self.conv_backward(grads, *x, *w, *b, g, |vx, vw, gout, dx, dw, db| {
                    kernels::zhang_backward(vx, vw, gout, dx, dw, db);
                });
            }
            Op::SoftmaxAssets(x) => {
                let vy = &self.nodes[id].value;
                self.accumulate(grads, *x, |buf| {
                    kernels::softmax_assets_backward(vy, g, buf);
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |buf| {
                    for ((o, gi), mk) in buf.iter_mut().zip(g).zip(mask) {
                        *o += gi * mk;
                    }
                });
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn conv_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: usize,
        w: usize,
        b: usize,
        g: &[f64],
        kernel: impl Fn(&Tensor3, &Tensor3, &[f64], Option<&mut [f64]>, &mut [f64], &mut [f64]),
    ) {
        let vx = &self.nodes[x].value;
        let vw = &self.nodes[w].value;
        let mut dw = vec![0.0; vw.len()];
        let mut db = vec![0.0; self.nodes[b].value.len()];
        if self.nodes[x].needs_grad {
            let buf = grads[x].get_or_insert_with(|| vec![0.0; vx.len()]);
            kernel(vx, vw, g, Some(buf.as_mut_slice()), &mut dw, &mut db);
        } else {
            kernel(vx, vw, g, None, &mut dw, &mut db);
        }
        self.accumulate(grads, w, |buf| {
            for (o, v) in buf.iter_mut().zip(&dw) {
                *o += v;
            }
        });
        self.accumulate(grads, b, |buf| {
            for (o, v) in buf.iter_mut().zip(&db) {
                *o += v;
            }
        });
    }
}

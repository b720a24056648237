//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive appends one node holding its output tensor and the ids of
//! its inputs; inputs therefore always precede their consumers, and a single
//! reverse sweep visits each node exactly once. The tape owns all forward
//! values, so backward never recomputes anything.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use crate::kernels::Padding;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: ValueId, weight: ValueId, bias: ValueId, padding: Padding },
    Relu { input: ValueId },
    Sigmoid { input: ValueId },
    GlobalAvgPool { input: ValueId },
    MulBroadcast { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Abs { input: ValueId },
    Mean { input: ValueId },
    ConcatChannels { parts: Vec<ValueId> },
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    op: Op,
    /// True when a gradient has to flow through this node (it is a
    /// requires-grad leaf or depends on one). Everything else is skipped in
    /// the reverse sweep.
    needs_grad: bool,
}

/// Execution record of a forward pass.
pub struct Tape<E: Scalar = f32> {
    nodes: Vec<Node<E>>,
    params: IndexMap<String, ValueId>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<E: Scalar = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    /// Gradient of the loss wrt the value, if any flowed.
    pub fn wrt(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.grads[id.0].as_ref()
    }
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: IndexMap::new() }
    }

    /// Records an input value. It participates in backward only if the
    /// tensor was marked `with_grad`.
    pub fn leaf(&mut self, value: Tensor<E>) -> ValueId {
        let needs_grad = value.requires_grad();
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records a named learnable leaf. Names must be unique per tape.
    pub fn param(&mut self, name: &str, value: Tensor<E>) -> Result<ValueId> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.push(value.with_grad(), Op::Leaf, true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn param_id(&self, name: &str) -> Option<ValueId> {
        self.params.get(name).copied()
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { value, op, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<E>, op: Op, inputs: &[ValueId]) -> ValueId {
        value.debug_assert_finite("primitive op");
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.push(value, op, needs_grad)
    }

    // ── Primitives ──────────────────────────────────────────────────────

    /// 2-D cross-correlation, stride 1. `input` N×Cin×H×W, `weight`
    /// Cout×Cin×k×k with odd k, `bias` rank-1 of length Cout.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
        padding: Padding,
    ) -> Result<ValueId> {
        let (n, c_in, h, w) = self.value(input).nchw()?;
        let wd = self.value(weight).dims();
        if wd.len() != 4 || wd[2] != wd[3] {
            return Err(Error::Shape(format!(
                "conv2d weight must be Cout×Cin×k×k, got {wd:?}"
            )));
        }
        let (c_out, wc_in, k) = (wd[0], wd[1], wd[2]);
        if k % 2 == 0 {
            return Err(Error::Shape(format!("conv2d kernel size {k} must be odd")));
        }
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c_in}, weight expects {wc_in}"
            )));
        }
        if padding == Padding::None && (h < k || w < k) {
            return Err(Error::Shape(format!(
                "conv2d without padding needs H,W >= {k}, got {h}x{w}"
            )));
        }
        let bd = self.value(bias).dims();
        if bd != [c_out] {
            return Err(Error::Shape(format!(
                "conv2d bias must have dims [{c_out}], got {bd:?}"
            )));
        }
        let d = ConvDims::new(n, c_in, h, w, c_out, k, padding);
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &d,
        );
        let out = Tensor::from_vec(&[n, c_out, d.h_out, d.w_out], out)?;
        Ok(self.push_op(out, Op::Conv2d { input, weight, bias, padding }, &[input, weight, bias]))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(E::zero())).collect();
        let out = Tensor::from_vec(x.dims(), data).expect("same shape");
        self.push_op(out, Op::Relu { input }, &[input])
    }

    /// Elementwise logistic function, strictly inside (0,1) up to the
    /// precision of `E`.
    pub fn sigmoid(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let one = E::one();
        let data = x
            .data()
            .iter()
            .map(|&v| {
                if v >= E::zero() {
                    one / (one + (-v).exp())
                } else {
                    // avoids exp overflow for very negative v
                    let e = v.exp();
                    e / (one + e)
                }
            })
            .collect();
        let out = Tensor::from_vec(x.dims(), data).expect("same shape");
        self.push_op(out, Op::Sigmoid { input }, &[input])
    }

    /// Per-channel spatial mean: N×C×H×W → N×C×1×1.
    pub fn global_avg_pool(&mut self, input: ValueId) -> Result<ValueId> {
        let (n, c, h, w) = self.value(input).nchw()?;
        let hw = h * w;
        let inv = E::from_f64(1.0 / hw as f64);
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(n * c);
        for plane in data.chunks_exact(hw) {
            let mut s = E::zero();
            for &v in plane {
                s = s + v;
            }
            out.push(s * inv);
        }
        let out = Tensor::from_vec(&[n, c, 1, 1], out)?;
        Ok(self.push_op(out, Op::GlobalAvgPool { input }, &[input]))
    }

    /// Broadcast elementwise product. `b` must have the same shape as `a`,
    /// or be channel weights N×C×1×1, or a pixel map N×1×H×W.
    pub fn mul_broadcast(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ad, bd) = (self.value(a).dims().to_vec(), self.value(b).dims().to_vec());
        let kind = broadcast_kind(&ad, &bd)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = match kind {
            BroadcastKind::Equal => {
                av.iter().zip(bv).map(|(&x, &y)| x * y).collect::<Vec<E>>()
            }
            BroadcastKind::ChannelWeights { hw, .. } => {
                let mut out = Vec::with_capacity(av.len());
                for (idx, plane) in av.chunks_exact(hw).enumerate() {
                    // idx counts (n,c) planes; b holds n*c weights
                    out.extend(plane.iter().map(|&x| x * bv[idx]));
                }
                out
            }
            BroadcastKind::PixelMap { c, hw, .. } => {
                let mut out = Vec::with_capacity(av.len());
                for (idx, plane) in av.chunks_exact(hw).enumerate() {
                    let map = &bv[(idx / c) * hw..(idx / c + 1) * hw];
                    out.extend(plane.iter().zip(map).map(|(&x, &m)| x * m));
                }
                out
            }
        };
        let out = Tensor::from_vec(&ad, data)?;
        Ok(self.push_op(out, Op::MulBroadcast { a, b }, &[a, b]))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.dims() != bt.dims() {
            return Err(Error::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                at.dims(),
                bt.dims()
            )));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(at.dims(), data)?;
        Ok(self.push_op(out, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.dims() != bt.dims() {
            return Err(Error::Shape(format!(
                "sub shape mismatch: {:?} vs {:?}",
                at.dims(),
                bt.dims()
            )));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_vec(at.dims(), data)?;
        Ok(self.push_op(out, Op::Sub { a, b }, &[a, b]))
    }

    /// Elementwise |x|; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.abs()).collect();
        let out = Tensor::from_vec(x.dims(), data).expect("same shape");
        self.push_op(out, Op::Abs { input }, &[input])
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let inv = E::from_f64(1.0 / x.len() as f64);
        let mut s = E::zero();
        for &v in x.data() {
            s = s + v;
        }
        let out = Tensor::scalar(s * inv);
        self.push_op(out, Op::Mean { input }, &[input])
    }

    /// Stacks parts along the channel axis; all must share N, H, W.
    pub fn concat_channels(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_channels needs at least one part".into()));
        }
        let (n, _, h, w) = self.value(parts[0]).nchw()?;
        let mut c_total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels spatial mismatch: {:?} vs {:?}",
                    self.value(parts[0]).dims(),
                    self.value(p).dims()
                )));
            }
            c_total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for b in 0..n {
            for &p in parts {
                let pc = self.value(p).dims()[1];
                let src = self.value(p).data();
                data.extend_from_slice(&src[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let out = Tensor::from_vec(&[n, c_total, h, w], data)?;
        Ok(self.push_op(out, Op::ConcatChannels { parts: parts.to_vec() }, parts))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns per-node gradients; leaves
    /// that the loss does not reach keep `None`.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<E>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, padding } => {
                    let (n, c_in, h, w) = self.value(*input).nchw().expect("checked");
                    let k = self.value(*weight).dims()[2];
                    let c_out = self.value(*weight).dims()[0];
                    let d = ConvDims::new(n, c_in, h, w, c_out, k, *padding);
                    if self.needs(*input) {
                        let di =
                            kernels::conv2d_backward_input(&g, self.value(*weight).data(), &d);
                        self.accumulate(&mut grads, *input, di);
                    }
                    if self.needs(*weight) {
                        let dw =
                            kernels::conv2d_backward_weight(self.value(*input).data(), &g, &d);
                        self.accumulate(&mut grads, *weight, dw);
                    }
                    if self.needs(*bias) {
                        let db = kernels::conv2d_backward_bias(&g, &d);
                        self.accumulate(&mut grads, *bias, db);
                    }
                }
                Op::Relu { input } => {
                    if self.needs(*input) {
                        let x = self.value(*input).data();
                        let di = g
                            .iter()
                            .zip(x)
                            .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                            .collect();
                        self.accumulate(&mut grads, *input, di);
                    }
                }
                Op::Sigmoid { input } => {
                    if self.needs(*input) {
                        let y = self.nodes[idx].value.data();
                        let di = g
                            .iter()
                            .zip(y)
                            .map(|(&gv, &yv)| gv * yv * (E::one() - yv))
                            .collect();
                        self.accumulate(&mut grads, *input, di);
                    }
                }
                Op::GlobalAvgPool { input } => {
                    if self.needs(*input) {
                        let (_, _, h, w) = self.value(*input).nchw().expect("checked");
                        let hw = h * w;
                        let inv = E::from_f64(1.0 / hw as f64);
                        let mut di = Vec::with_capacity(self.value(*input).len());
                        for &gv in &g {
                            let spread = gv * inv;
                            di.extend(std::iter::repeat(spread).take(hw));
                        }
                        self.accumulate(&mut grads, *input, di);
                    }
                }
                Op::MulBroadcast { a, b } => {
                    let ad = self.value(*a).dims().to_vec();
                    let bd = self.value(*b).dims().to_vec();
                    let kind = broadcast_kind(&ad, &bd).expect("checked");
                    if self.needs(*a) {
                        // d a = g ⊙ broadcast(b)
                        let bv = self.value(*b).data();
                        let da = match kind {
                            BroadcastKind::Equal => {
                                g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect::<Vec<E>>()
                            }
                            BroadcastKind::ChannelWeights { hw, .. } => {
                                let mut out = Vec::with_capacity(g.len());
                                for (idx2, plane) in g.chunks_exact(hw).enumerate() {
                                    let wgt = bv[idx2];
                                    out.extend(plane.iter().map(|&gv| gv * wgt));
                                }
                                out
                            }
                            BroadcastKind::PixelMap { c, hw, .. } => {
                                let mut out = Vec::with_capacity(g.len());
                                for (idx2, plane) in g.chunks_exact(hw).enumerate() {
                                    let map = &bv[(idx2 / c) * hw..(idx2 / c + 1) * hw];
                                    out.extend(
                                        plane.iter().zip(map).map(|(&gv, &m)| gv * m),
                                    );
                                }
                                out
                            }
                        };
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        // d b = reduce(g ⊙ a) over the broadcast dimensions
                        let av = self.value(*a).data();
                        let db = match kind {
                            BroadcastKind::Equal => {
                                g.iter().zip(av).map(|(&gv, &x)| gv * x).collect::<Vec<E>>()
                            }
                            BroadcastKind::ChannelWeights { n, c, hw } => {
                                let mut out = vec![E::zero(); n * c];
                                for (idx2, (gplane, aplane)) in
                                    g.chunks_exact(hw).zip(av.chunks_exact(hw)).enumerate()
                                {
                                    let mut s = E::zero();
                                    for (&gv, &x) in gplane.iter().zip(aplane) {
                                        s = s + gv * x;
                                    }
                                    out[idx2] = s;
                                }
                                out
                            }
                            BroadcastKind::PixelMap { n, c, hw } => {
                                let mut out = vec![E::zero(); n * hw];
                                for (idx2, (gplane, aplane)) in
                                    g.chunks_exact(hw).zip(av.chunks_exact(hw)).enumerate()
                                {
                                    let dst = &mut out[(idx2 / c) * hw..(idx2 / c + 1) * hw];
                                    for ((d, &gv), &x) in
                                        dst.iter_mut().zip(gplane).zip(aplane)
                                    {
                                        *d = *d + gv * x;
                                    }
                                }
                                out
                            }
                        };
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        let neg: Vec<E> = g.iter().map(|&gv| -gv).collect();
                        self.accumulate(&mut grads, *b, neg);
                    }
                }
                Op::Abs { input } => {
                    if self.needs(*input) {
                        let x = self.value(*input).data();
                        let di = g
                            .iter()
                            .zip(x)
                            .map(|(&gv, &xv)| {
                                if xv > E::zero() {
                                    gv
                                } else if xv < E::zero() {
                                    -gv
                                } else {
                                    E::zero()
                                }
                            })
                            .collect();
                        self.accumulate(&mut grads, *input, di);
                    }
                }
                Op::Mean { input } => {
                    if self.needs(*input) {
                        let len = self.value(*input).len();
                        let spread = g[0] * E::from_f64(1.0 / len as f64);
                        self.accumulate(&mut grads, *input, vec![spread; len]);
                    }
                }
                Op::ConcatChannels { parts } => {
                    let (n, _, h, w) = node.value.nchw().expect("checked");
                    let hw = h * w;
                    let c_total: usize = node.value.dims()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).dims()[1];
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(n * pc * hw);
                            for b in 0..n {
                                let base = (b * c_total + offset) * hw;
                                dp.extend_from_slice(&g[base..base + pc * hw]);
                            }
                            self.accumulate(&mut grads, p, dp);
                        }
                        offset += pc;
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|v| {
                    Tensor::from_vec(self.nodes[i].value.dims(), v)
                        .expect("gradient shape mirrors value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Gradients for every named parameter on the tape; parameters the loss
    /// never touched get zeros.
    pub fn param_gradients(&self, bw: &Gradients<E>) -> IndexMap<String, Tensor<E>> {
        self.params
            .iter()
            .map(|(name, &id)| {
                let g = bw
                    .wrt(id)
                    .cloned()
                    .unwrap_or_else(|| {
                        Tensor::zeros(self.value(id).dims()).expect("valid dims")
                    });
                (name.clone(), g)
            })
            .collect()
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<E>>], id: ValueId, delta: Vec<E>) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

enum BroadcastKind {
    Equal,
    ChannelWeights { n: usize, c: usize, hw: usize },
    PixelMap { n: usize, c: usize, hw: usize },
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<BroadcastKind> {
    if a == b {
        return Ok(BroadcastKind::Equal);
    }
    if a.len() == 4 && b.len() == 4 {
        let (n, c, h, w) = (a[0], a[1], a[2], a[3]);
        if b == [n, c, 1, 1] {
            return Ok(BroadcastKind::ChannelWeights { n, c, hw: h * w });
        }
        if b == [n, 1, h, w] {
            return Ok(BroadcastKind::PixelMap { n, c, hw: h * w });
        }
    }
    Err(Error::Shape(format!(
        "mul_broadcast: incompatible shapes {a:?} and {b:?}"
    )))
}

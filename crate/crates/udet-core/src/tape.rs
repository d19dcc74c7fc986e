//! Define-by-run operation tape for reverse-mode differentiation.
//!
//! Every forward pass records nodes onto a fresh tape; `backward` replays
//! them in reverse. Nodes are appended only when some input requires a
//! gradient, so pure inference records nothing. Gradients accumulate
//! additively — into the tape for leaves, into the [`ParamRegistry`] for
//! parameters — until explicitly zeroed.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Result, UdetError};
use crate::ops::{self, ActivationKind, ConvGeom};
use crate::params::{ParamId, ParamRegistry};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

static TAPE_IDS: AtomicU32 = AtomicU32::new(1);

/// Handle to a value on a specific tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId {
    pub(crate) idx: u32,
    pub(crate) tape: u32,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Origin {
    Leaf,
    Param(ParamId),
}

/// Backward rule of one recorded operation. Input references are indices
/// into the tape's value arena; op-specific context (argmax indices, dropout
/// masks, batch statistics) is captured at forward time.
pub(crate) enum Rule<E: Scalar> {
    Add { a: u32, b: u32 },
    Mul { a: u32, b: u32 },
    Scale { a: u32, factor: E },
    Sum { a: u32 },
    Activation { x: u32, kind: ActivationKind },
    Conv2d { x: u32, w: u32, bias: Option<u32>, geom: ConvGeom },
    ConvTranspose2d { x: u32, w: u32, bias: Option<u32> },
    DepthwiseConv2d { x: u32, w: u32 },
    MaxPool2d { x: u32, argmax: Vec<u32> },
    Upsample2x { x: u32 },
    BatchNorm { x: u32, gamma: u32, beta: u32, mean: Vec<E>, inv_std: Vec<E>, train: bool },
    Dropout { x: u32, mask: Vec<E> },
    ConcatChannels { a: u32, b: u32 },
    Fuse { weights: u32, inputs: Vec<u32>, relu_w: Vec<E>, eps: E },
    WeightedBce { pred: u32, target: u32, w_pos: E, clamp: E },
}

struct Node<E: Scalar> {
    out: u32,
    rule: Rule<E>,
}

/// Pending running-statistics update recorded by a train-mode batch norm.
pub struct BnUpdate<E: Scalar> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub batch_mean: Vec<E>,
    pub batch_var: Vec<E>,
    pub momentum: E,
}

pub struct Tape<E: Scalar> {
    id: u32,
    vals: Vec<Tensor4<E>>,
    requires: Vec<bool>,
    origin: Vec<Origin>,
    nodes: Vec<Node<E>>,
    /// Accumulated gradients per var, persisted across backward calls.
    acc: Vec<Option<Vec<E>>>,
    bn_updates: Vec<BnUpdate<E>>,
    grad_enabled: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            vals: Vec::new(),
            requires: Vec::new(),
            origin: Vec::new(),
            nodes: Vec::new(),
            acc: Vec::new(),
            bn_updates: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records no backward rules (pure inference).
    pub fn inference() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push_var(&mut self, t: Tensor4<E>, requires: bool, origin: Origin) -> VarId {
        let idx = self.vals.len() as u32;
        self.vals.push(t);
        self.requires.push(requires);
        self.origin.push(origin);
        self.acc.push(None);
        VarId { idx, tape: self.id }
    }

    /// Add an input tensor; it participates in gradients iff its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor4<E>) -> VarId {
        let req = t.requires_grad && self.grad_enabled;
        self.push_var(t, req, Origin::Leaf)
    }

    /// Add a tensor that never receives gradient (targets, constants).
    pub fn constant(&mut self, t: Tensor4<E>) -> VarId {
        self.push_var(t, false, Origin::Leaf)
    }

    /// Bind a registry parameter onto the tape (value is copied in; gradients
    /// flow back into the registry on `backward`).
    pub fn param(&mut self, reg: &ParamRegistry<E>, id: ParamId) -> VarId {
        let slot = reg.slot(id);
        let req = slot.trainable && self.grad_enabled;
        self.push_var(slot.value.clone(), req, Origin::Param(id))
    }

    pub fn value(&self, v: VarId) -> &Tensor4<E> {
        assert_eq!(v.tape, self.id, "VarId used on a different tape");
        &self.vals[v.idx as usize]
    }

    pub fn shape(&self, v: VarId) -> Shape4 {
        self.value(v).shape()
    }

    pub fn var_requires_grad(&self, v: VarId) -> bool {
        assert_eq!(v.tape, self.id, "VarId used on a different tape");
        self.requires[v.idx as usize]
    }

    /// Recorded node count.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_vars(&self) -> usize {
        self.vals.len()
    }

    pub(crate) fn check_owned(&self, v: VarId, op: &'static str) -> Result<()> {
        if v.tape != self.id || v.idx as usize >= self.vals.len() {
            return Err(UdetError::InvalidArgument(format!("{op}: value is not on this tape")));
        }
        Ok(())
    }

    /// Core recording step: store the output and, when any input required a
    /// gradient, append the backward rule.
    pub(crate) fn record(
        &mut self,
        out: Tensor4<E>,
        requires: bool,
        rule: impl FnOnce() -> Rule<E>,
    ) -> VarId {
        let v = self.push_var(out, requires, Origin::Leaf);
        if requires {
            self.nodes.push(Node { out: v.idx, rule: rule() });
        }
        v
    }

    pub(crate) fn push_bn_update(&mut self, u: BnUpdate<E>) {
        self.bn_updates.push(u);
    }

    /// Drain pending running-statistics updates collected during forward.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<E>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Accumulated gradient of a leaf or interior value, if any reached it.
    pub fn grad(&self, v: VarId) -> Option<&[E]> {
        assert_eq!(v.tape, self.id, "VarId used on a different tape");
        self.acc[v.idx as usize].as_deref()
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.acc {
            *g = None;
        }
    }

    /// Reverse sweep from a scalar loss. Fresh contributions are added onto
    /// the tape's accumulated gradients and onto registry parameter gradients,
    /// so consecutive calls without zeroing double the totals.
    pub fn backward(&mut self, loss: VarId, reg: &mut ParamRegistry<E>) -> Result<()> {
        self.check_owned(loss, "backward")?;
        let loss_idx = loss.idx as usize;
        if self.vals[loss_idx].numel() != 1 {
            return Err(UdetError::shape(
                "backward",
                format!("loss must be a scalar, got {}", self.vals[loss_idx].shape()),
            ));
        }

        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.vals.len()];
        grads[loss_idx] = Some(vec![E::one()]);

        for node in self.nodes.iter().rev() {
            let out = node.out as usize;
            let Some(gy) = grads[out].take() else { continue };
            backward_node(&self.vals, &self.requires, &mut grads, &node.rule, &gy, out);
            grads[out] = Some(gy);
        }

        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !self.requires[i] {
                continue;
            }
            if let Origin::Param(pid) = self.origin[i] {
                reg.add_to_grad(pid, &g);
            }
            match &mut self.acc[i] {
                Some(acc) => {
                    for (a, d) in acc.iter_mut().zip(&g) {
                        *a = *a + *d;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Obtain the gradient buffer for `idx`, zero-initialized on first touch.
fn grad_buf<'a, E: Scalar>(
    grads: &'a mut [Option<Vec<E>>],
    idx: u32,
    numel: usize,
) -> &'a mut [E] {
    let slot = &mut grads[idx as usize];
    if slot.is_none() {
        *slot = Some(vec![E::zero(); numel]);
    }
    slot.as_mut().unwrap()
}

fn backward_node<E: Scalar>(
    vals: &[Tensor4<E>],
    requires: &[bool],
    grads: &mut [Option<Vec<E>>],
    rule: &Rule<E>,
    gy: &[E],
    out: usize,
) {
    let req = |i: u32| requires[i as usize];
    let val = |i: u32| &vals[i as usize];

    match rule {
        Rule::Add { a, b } => {
            for &i in [a, b].into_iter() {
                if req(i) {
                    let g = grad_buf(grads, i, gy.len());
                    for (gi, &d) in g.iter_mut().zip(gy) {
                        *gi = *gi + d;
                    }
                }
            }
        }
        Rule::Mul { a, b } => {
            if req(*a) {
                let vb = val(*b).data();
                let g = grad_buf(grads, *a, gy.len());
                for ((gi, &d), &o) in g.iter_mut().zip(gy).zip(vb) {
                    *gi = *gi + d * o;
                }
            }
            if req(*b) {
                let va = val(*a).data();
                let g = grad_buf(grads, *b, gy.len());
                for ((gi, &d), &o) in g.iter_mut().zip(gy).zip(va) {
                    *gi = *gi + d * o;
                }
            }
        }
        Rule::Scale { a, factor } => {
            if req(*a) {
                let g = grad_buf(grads, *a, gy.len());
                for (gi, &d) in g.iter_mut().zip(gy) {
                    *gi = *gi + d * *factor;
                }
            }
        }
        Rule::Sum { a } => {
            if req(*a) {
                let d = gy[0];
                let n = val(*a).numel();
                let g = grad_buf(grads, *a, n);
                for gi in g.iter_mut() {
                    *gi = *gi + d;
                }
            }
        }
        Rule::Activation { x, kind } => {
            if req(*x) {
                let xs = val(*x).data();
                let ys = vals[out].data();
                let g = grad_buf(grads, *x, xs.len());
                ops::activation_backward(*kind, xs, ys, gy, g);
            }
        }
        Rule::Conv2d { x, w, bias, geom } => {
            let need_db = bias.map(|b| req(b)).unwrap_or(false);
            let (dx, dw, db) = ops::conv2d_backward(
                val(*x),
                val(*w),
                geom,
                gy,
                req(*x),
                req(*w),
                need_db,
            );
            if let Some(dx) = dx {
                add_delta(grads, *x, &dx);
            }
            if let Some(dw) = dw {
                add_delta(grads, *w, &dw);
            }
            if let (Some(db), Some(b)) = (db, bias) {
                add_delta(grads, *b, &db);
            }
        }
        Rule::ConvTranspose2d { x, w, bias } => {
            let need_db = bias.map(|b| req(b)).unwrap_or(false);
            let (dx, dw, db) =
                ops::convt2x2_backward(val(*x), val(*w), gy, req(*x), req(*w), need_db);
            if let Some(dx) = dx {
                add_delta(grads, *x, &dx);
            }
            if let Some(dw) = dw {
                add_delta(grads, *w, &dw);
            }
            if let (Some(db), Some(b)) = (db, bias) {
                add_delta(grads, *b, &db);
            }
        }
        Rule::DepthwiseConv2d { x, w } => {
            let (dx, dw) = ops::depthwise3x3_backward(val(*x), val(*w), gy, req(*x), req(*w));
            if let Some(dx) = dx {
                add_delta(grads, *x, &dx);
            }
            if let Some(dw) = dw {
                add_delta(grads, *w, &dw);
            }
        }
        Rule::MaxPool2d { x, argmax } => {
            if req(*x) {
                let n = val(*x).numel();
                let g = grad_buf(grads, *x, n);
                ops::maxpool_backward(argmax, gy, g);
            }
        }
        Rule::Upsample2x { x } => {
            if req(*x) {
                let xs = val(*x).shape();
                let g = grad_buf(grads, *x, xs.numel());
                ops::upsample2x_backward(xs, gy, g);
            }
        }
        Rule::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
            ops::batchnorm_backward(
                val(*x),
                val(*gamma).data(),
                mean,
                inv_std,
                *train,
                gy,
                req(*x).then_some(*x),
                req(*gamma).then_some(*gamma),
                req(*beta).then_some(*beta),
                grads,
            );
        }
        Rule::Dropout { x, mask } => {
            if req(*x) {
                let g = grad_buf(grads, *x, mask.len());
                for ((gi, &d), &m) in g.iter_mut().zip(gy).zip(mask) {
                    *gi = *gi + d * m;
                }
            }
        }
        Rule::ConcatChannels { a, b } => {
            let sa = val(*a).shape();
            let sb = val(*b).shape();
            let (pa, pb) = (sa.per_item(), sb.per_item());
            if req(*a) {
                let g = grad_buf(grads, *a, sa.numel());
                for n in 0..sa.n {
                    let src = &gy[n * (pa + pb)..n * (pa + pb) + pa];
                    let dst = &mut g[n * pa..(n + 1) * pa];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
            if req(*b) {
                let g = grad_buf(grads, *b, sb.numel());
                for n in 0..sb.n {
                    let src = &gy[n * (pa + pb) + pa..(n + 1) * (pa + pb)];
                    let dst = &mut g[n * pb..(n + 1) * pb];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
        Rule::Fuse { weights, inputs, relu_w, eps } => {
            let sum: E = relu_w.iter().copied().sum();
            let denom = *eps + sum;
            let y = vals[out].data();
            for (i, &inp) in inputs.iter().enumerate() {
                if req(inp) {
                    let c = relu_w[i] / denom;
                    let g = grad_buf(grads, inp, gy.len());
                    for (gi, &d) in g.iter_mut().zip(gy) {
                        *gi = *gi + d * c;
                    }
                }
            }
            if req(*weights) {
                let w_raw = val(*weights).data();
                let g = grad_buf(grads, *weights, relu_w.len());
                for (j, &inp) in inputs.iter().enumerate() {
                    if w_raw[j] <= E::zero() {
                        continue; // relu clamps: zero subgradient at and below 0
                    }
                    let ij = val(inp).data();
                    let mut acc = E::zero();
                    for ((&d, &iv), &yv) in gy.iter().zip(ij).zip(y) {
                        acc = acc + d * (iv - yv);
                    }
                    g[j] = g[j] + acc / denom;
                }
            }
        }
        Rule::WeightedBce { pred, target, w_pos, clamp } => {
            if req(*pred) {
                let p = val(*pred).data();
                let t = val(*target).data();
                let d = gy[0];
                let lo = *clamp;
                let hi = E::one() - *clamp;
                let inv_n = E::one() / E::of(p.len() as f64);
                let g = grad_buf(grads, *pred, p.len());
                for (gi, (&pi, &yi)) in g.iter_mut().zip(p.iter().zip(t)) {
                    // zero gradient where the prediction sits in the clamped range
                    if pi < lo || pi > hi {
                        continue;
                    }
                    let dpos = *w_pos * yi / pi;
                    let dneg = (E::one() - yi) / (E::one() - pi);
                    *gi = *gi + d * inv_n * (dneg - dpos);
                }
            }
        }
    }
}

fn add_delta<E: Scalar>(grads: &mut [Option<Vec<E>>], idx: u32, delta: &[E]) {
    let g = grad_buf(grads, idx, delta.len());
    for (gi, &d) in g.iter_mut().zip(delta) {
        *gi = *gi + d;
    }
}

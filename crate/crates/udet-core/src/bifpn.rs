//! Weighted bidirectional feature pyramid bridging encoder and decoder.
//!
//! Five lateral 1x1 projections bring the encoder pyramid to a common width,
//! then one top-down and one bottom-up pass fuse neighboring levels with
//! fast-normalized weights. Each fusion is followed by a depthwise 3x3
//! convolution, batch norm, and ReLU. The wiring instantiates exactly
//! 5 lateral convs, 7 depthwise convs, 12 batch norms, 12 relus, and
//! 3 max pools:
//!
//! ```text
//! L1..L5 = relu(bn(conv1x1(P1..P5)))
//! T4 = block(fuse(L4, up(L5)))      O2 = block(fuse(L2, T2, down(O1)))
//! T3 = block(fuse(L3, up(T4)))      O3 = block(fuse(L3, T3, down(O2)))
//! T2 = block(fuse(L2, up(T3)))      O4 = block(fuse(L4, T4, down(O3)))
//! O1 = block(fuse(L1, up(T2)))      O5 = L5
//! ```

use crate::error::{Result, UdetError};
use crate::ops::{BatchNormSpec, Conv2DSpec, Mode};
use crate::params::{ParamId, ParamRegistry};
use crate::scalar::Scalar;
use crate::tape::{Rule, Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

/// Normalization guard in the fusion denominator.
pub const FUSION_EPS: f64 = 1e-4;

/// Encoder channel multipliers per level relative to the base width.
pub const LEVEL_CHANNEL_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Debug)]
pub struct BifpnConfig {
    /// Common fusion width (64 at full scale).
    pub width: usize,
    /// Channel counts of the incoming pyramid levels.
    pub entry_channels: [usize; 5],
}

impl BifpnConfig {
    /// Standard configuration for a backbone of the given base width.
    pub fn for_base_width(base: usize) -> Self {
        let mut entry = [0usize; 5];
        for (e, f) in entry.iter_mut().zip(LEVEL_CHANNEL_FACTORS) {
            *e = base * f;
        }
        BifpnConfig { width: base, entry_channels: entry }
    }
}

pub(crate) struct BnParams {
    pub spec: BatchNormSpec,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BnParams {
    fn build<E: Scalar>(reg: &mut ParamRegistry<E>, prefix: &str, channels: usize) -> Result<Self> {
        let vec_shape = Shape4::new(1, channels, 1, 1);
        Ok(BnParams {
            spec: BatchNormSpec::new(channels),
            gamma: reg.register(&format!("{prefix}.gamma"), Tensor4::full(vec_shape, E::one()), true)?,
            beta: reg.register(&format!("{prefix}.beta"), Tensor4::zeros(vec_shape), true)?,
            mean: reg.register(
                &format!("{prefix}.running_mean"),
                Tensor4::zeros(vec_shape),
                false,
            )?,
            var: reg.register(
                &format!("{prefix}.running_var"),
                Tensor4::full(vec_shape, E::one()),
                false,
            )?,
        })
    }

    pub(crate) fn apply<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        x: VarId,
        mode: Mode,
        update_running: bool,
    ) -> Result<VarId> {
        let gamma = tape.param(reg, self.gamma);
        let beta = tape.param(reg, self.beta);
        let rm: Vec<E> = reg.value(self.mean).data().to_vec();
        let rv: Vec<E> = reg.value(self.var).data().to_vec();
        let update = (mode.uses_batch_stats() && update_running).then_some((self.mean, self.var));
        tape.batchnorm2d(x, gamma, beta, &rm, &rv, &self.spec, mode, update)
    }
}

/// 1x1 bias-free projection to the fusion width, then BN and ReLU.
struct Lateral {
    spec: Conv2DSpec,
    weight: ParamId,
    bn: BnParams,
}

/// Post-fusion block: learned fusion weights, depthwise 3x3 (bias-free),
/// BN, ReLU.
struct FusionBlock {
    arity: usize,
    fuse_weights: ParamId,
    dw_weight: ParamId,
    bn: BnParams,
}

/// Instantiated layer counts of the bridge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCensus {
    pub lateral_convs: usize,
    pub depthwise_convs: usize,
    pub batch_norms: usize,
    pub relus: usize,
    pub maxpools: usize,
}

/// Per-row parameter totals of the bridge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BifpnParamCounts {
    pub lateral_convs: usize,
    pub batch_norms: usize,
    pub depthwise_convs: usize,
    pub fusion_scalars: usize,
}

impl BifpnParamCounts {
    pub fn audited_total(&self) -> usize {
        self.lateral_convs + self.batch_norms + self.depthwise_convs
    }
}

pub struct Bifpn {
    pub cfg: BifpnConfig,
    laterals: Vec<Lateral>,
    /// Top-down blocks producing T4, T3, T2, then the top output O1.
    top_down: Vec<FusionBlock>,
    /// Bottom-up blocks producing O2, O3, O4.
    bottom_up: Vec<FusionBlock>,
}

impl Bifpn {
    pub fn build<E: Scalar>(cfg: BifpnConfig, reg: &mut ParamRegistry<E>) -> Result<Self> {
        let w = cfg.width;
        let mut laterals = Vec::with_capacity(5);
        for (i, &in_c) in cfg.entry_channels.iter().enumerate() {
            let prefix = format!("bifpn.lateral{}", i + 1);
            let spec = Conv2DSpec::new_1x1(in_c, w, false);
            let weight = reg.register(
                &format!("{prefix}.conv.weight"),
                Tensor4::zeros(Shape4::new(w, in_c, 1, 1)),
                true,
            )?;
            let bn = BnParams::build(reg, &format!("{prefix}.bn"), w)?;
            laterals.push(Lateral { spec, weight, bn });
        }

        let block = |name: &str, arity: usize, reg: &mut ParamRegistry<E>| -> Result<FusionBlock> {
            let prefix = format!("bifpn.{name}");
            let fuse_weights = reg.register(
                &format!("{prefix}.fuse_weights"),
                Tensor4::full(Shape4::new(1, 1, 1, arity), E::one()),
                true,
            )?;
            let dw_weight = reg.register(
                &format!("{prefix}.dw.weight"),
                Tensor4::zeros(Shape4::new(w, 1, 3, 3)),
                true,
            )?;
            let bn = BnParams::build(reg, &format!("{prefix}.bn"), w)?;
            Ok(FusionBlock { arity, fuse_weights, dw_weight, bn })
        };

        let top_down = vec![
            block("node_t4", 2, reg)?,
            block("node_t3", 2, reg)?,
            block("node_t2", 2, reg)?,
            block("node_o1", 2, reg)?,
        ];
        let bottom_up = vec![
            block("node_o2", 3, reg)?,
            block("node_o3", 3, reg)?,
            block("node_o4", 3, reg)?,
        ];

        Ok(Bifpn { cfg, laterals, top_down, bottom_up })
    }

    pub fn census(&self) -> LayerCensus {
        let blocks = self.top_down.len() + self.bottom_up.len();
        LayerCensus {
            lateral_convs: self.laterals.len(),
            depthwise_convs: blocks,
            batch_norms: self.laterals.len() + blocks,
            relus: self.laterals.len() + blocks,
            maxpools: self.bottom_up.len(),
        }
    }

    pub fn param_counts<E: Scalar>(&self, reg: &ParamRegistry<E>) -> BifpnParamCounts {
        let mut out = BifpnParamCounts {
            lateral_convs: 0,
            batch_norms: 0,
            depthwise_convs: 0,
            fusion_scalars: 0,
        };
        for l in &self.laterals {
            out.lateral_convs += reg.value(l.weight).numel();
            out.batch_norms += bn_numel(reg, &l.bn);
        }
        for b in self.top_down.iter().chain(&self.bottom_up) {
            out.fusion_scalars += reg.value(b.fuse_weights).numel();
            out.depthwise_convs += reg.value(b.dw_weight).numel();
            out.batch_norms += bn_numel(reg, &b.bn);
        }
        out
    }

    /// All fusion-weight parameter ids (excluded from the table audit,
    /// included in training).
    pub fn fusion_weight_ids(&self) -> Vec<ParamId> {
        self.top_down.iter().chain(&self.bottom_up).map(|b| b.fuse_weights).collect()
    }

    pub fn lateral_weight_ids(&self) -> Vec<ParamId> {
        self.laterals.iter().map(|l| l.weight).collect()
    }

    /// Depthwise weight ids in block order (t4, t3, t2, o1, o2, o3, o4).
    pub fn depthwise_weight_ids(&self) -> Vec<ParamId> {
        self.top_down.iter().chain(&self.bottom_up).map(|b| b.dw_weight).collect()
    }

    /// (gamma, beta, running_mean, running_var) ids of every batch norm.
    pub fn bn_ids(&self) -> Vec<(ParamId, ParamId, ParamId, ParamId)> {
        self.laterals
            .iter()
            .map(|l| &l.bn)
            .chain(self.top_down.iter().chain(&self.bottom_up).map(|b| &b.bn))
            .map(|bn| (bn.gamma, bn.beta, bn.mean, bn.var))
            .collect()
    }

    fn lateral<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        level: usize,
        x: VarId,
        mode: Mode,
        update_running: bool,
    ) -> Result<VarId> {
        let l = &self.laterals[level];
        let w = tape.param(reg, l.weight);
        let y = tape.conv2d(x, w, None, &l.spec)?;
        let y = l.bn.apply(tape, reg, y, mode, update_running)?;
        tape.relu(y)
    }

    fn block<E: Scalar>(
        &self,
        block: &FusionBlock,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        inputs: &[VarId],
        mode: Mode,
        update_running: bool,
    ) -> Result<VarId> {
        if inputs.len() != block.arity {
            return Err(UdetError::InvalidArgument(format!(
                "fusion node expects {} inputs, got {}",
                block.arity,
                inputs.len()
            )));
        }
        let w = tape.param(reg, block.fuse_weights);
        let fused = tape.fuse(w, inputs, E::of(FUSION_EPS))?;
        let dw = tape.param(reg, block.dw_weight);
        let y = tape.depthwise_conv2d(fused, dw)?;
        let y = block.bn.apply(tape, reg, y, mode, update_running)?;
        tape.relu(y)
    }

    /// Run the bridge over a projected-entry pyramid P1..P5 (channel counts
    /// per `cfg.entry_channels`, spatial dims halving per level). Returns the
    /// five fused outputs at the fusion width; O5 passes L5 through.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        pyramid: [VarId; 5],
        mode: Mode,
        update_running: bool,
    ) -> Result<[VarId; 5]> {
        for (i, &p) in pyramid.iter().enumerate() {
            let s = tape.shape(p);
            if s.c != self.cfg.entry_channels[i] {
                return Err(UdetError::shape(
                    "bifpn",
                    format!(
                        "level {} has {} channels, expected {}",
                        i + 1,
                        s.c,
                        self.cfg.entry_channels[i]
                    ),
                ));
            }
            if i > 0 {
                let prev = tape.shape(pyramid[i - 1]);
                if prev.h != 2 * s.h || prev.w != 2 * s.w {
                    return Err(UdetError::shape(
                        "bifpn",
                        format!("level {} is {}x{}, level {} is {}x{}", i, prev.h, prev.w, i + 1, s.h, s.w),
                    ));
                }
            }
        }

        let mut lat = [pyramid[0]; 5];
        for (i, &p) in pyramid.iter().enumerate() {
            lat[i] = self.lateral(tape, reg, i, p, mode, update_running)?;
        }

        // Top-down: T4, T3, T2 feed from the level above.
        let up5 = tape.upsample2x(lat[4])?;
        let t4 = self.block(&self.top_down[0], tape, reg, &[lat[3], up5], mode, update_running)?;
        let up4 = tape.upsample2x(t4)?;
        let t3 = self.block(&self.top_down[1], tape, reg, &[lat[2], up4], mode, update_running)?;
        let up3 = tape.upsample2x(t3)?;
        let t2 = self.block(&self.top_down[2], tape, reg, &[lat[1], up3], mode, update_running)?;
        let up2 = tape.upsample2x(t2)?;
        let o1 = self.block(&self.top_down[3], tape, reg, &[lat[0], up2], mode, update_running)?;

        // Bottom-up: O2..O4 fuse the lateral, the top-down intermediate, and
        // the pooled output below.
        let d1 = tape.maxpool2d(o1)?;
        let o2 = self.block(&self.bottom_up[0], tape, reg, &[lat[1], t2, d1], mode, update_running)?;
        let d2 = tape.maxpool2d(o2)?;
        let o3 = self.block(&self.bottom_up[1], tape, reg, &[lat[2], t3, d2], mode, update_running)?;
        let d3 = tape.maxpool2d(o3)?;
        let o4 = self.block(&self.bottom_up[2], tape, reg, &[lat[3], t4, d3], mode, update_running)?;

        Ok([o1, o2, o3, o4, lat[4]])
    }
}

fn bn_numel<E: Scalar>(reg: &ParamRegistry<E>, bn: &BnParams) -> usize {
    reg.value(bn.gamma).numel()
        + reg.value(bn.beta).numel()
        + reg.value(bn.mean).numel()
        + reg.value(bn.var).numel()
}

impl<E: Scalar> Tape<E> {
    /// Fast-normalized weighted fusion:
    /// `O = sum_i relu(w_i) / (eps + sum_j relu(w_j)) * I_i`.
    /// `weights` is a (1,1,1,n) vector matching the input arity.
    pub fn fuse(&mut self, weights: VarId, inputs: &[VarId], eps: E) -> Result<VarId> {
        self.check_owned(weights, "fuse")?;
        if inputs.is_empty() {
            return Err(UdetError::InvalidArgument("fuse needs at least one input".into()));
        }
        let ws = self.shape(weights);
        if ws.numel() != inputs.len() {
            return Err(UdetError::shape(
                "fuse",
                format!("{} weights for {} inputs", ws.numel(), inputs.len()),
            ));
        }
        let shape = self.shape(inputs[0]);
        let mut req = self.var_requires_grad(weights);
        for &i in inputs {
            self.check_owned(i, "fuse")?;
            if self.shape(i) != shape {
                return Err(UdetError::shape(
                    "fuse",
                    format!("{} vs {}", self.shape(i), shape),
                ));
            }
            req = req || self.var_requires_grad(i);
        }

        let relu_w: Vec<E> =
            self.value(weights).data().iter().map(|&v| v.max(E::zero())).collect();
        let denom = eps + relu_w.iter().copied().sum::<E>();
        let mut out = vec![E::zero(); shape.numel()];
        for (j, &inp) in inputs.iter().enumerate() {
            let c = relu_w[j] / denom;
            for (o, &v) in out.iter_mut().zip(self.value(inp).data()) {
                *o = *o + c * v;
            }
        }
        let out = Tensor4::new(shape, out)?;
        let input_idx: Vec<u32> = inputs.iter().map(|v| v.idx).collect();
        Ok(self.record(out, req, || Rule::Fuse {
            weights: weights.idx,
            inputs: input_idx,
            relu_w,
            eps,
        }))
    }
}

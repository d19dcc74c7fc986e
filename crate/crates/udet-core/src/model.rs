//! Full segmentation graph: five-depth encoder, optional bidirectional
//! feature-pyramid bridge, optional expansion path, sigmoid head. An
//! ablation factory toggles the activation, the bridge, and the decoder;
//! a parameter auditor reports per-section counts against the published
//! layer table.

use rand_chacha::ChaCha8Rng;

use crate::bifpn::{Bifpn, BifpnConfig, LayerCensus};
use crate::error::{Result, UdetError};
use crate::ops::{ActivationKind, Conv2DSpec, Mode};
use crate::params::{ParamId, ParamRegistry};
use crate::scalar::Scalar;
use crate::tape::{Tape, VarId};
use crate::tensor::{Shape4, Tensor4};

/// Base channel count of the full-scale model at depth 1.
pub const BASE_WIDTH: usize = 64;

pub const DROPOUT_RATE: f64 = 0.5;

/// Uniform divisor applied to every channel count; enables desk-scale runs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WidthScale {
    Full,
    Half,
    Quarter,
    Eighth,
}

impl WidthScale {
    pub fn divisor(self) -> usize {
        match self {
            WidthScale::Full => 1,
            WidthScale::Half => 2,
            WidthScale::Quarter => 4,
            WidthScale::Eighth => 8,
        }
    }

    pub fn apply(self, channels: usize) -> usize {
        channels / self.divisor()
    }
}

impl std::str::FromStr for WidthScale {
    type Err = UdetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "1/1" | "1.0" => Ok(WidthScale::Full),
            "1/2" | "0.5" => Ok(WidthScale::Half),
            "1/4" | "0.25" => Ok(WidthScale::Quarter),
            "1/8" | "0.125" => Ok(WidthScale::Eighth),
            other => Err(UdetError::InvalidArgument(format!(
                "unsupported width scale {other:?} (use 1, 1/2, 1/4 or 1/8)"
            ))),
        }
    }
}

impl std::fmt::Display for WidthScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WidthScale::Full => "1",
            WidthScale::Half => "1/2",
            WidthScale::Quarter => "1/4",
            WidthScale::Eighth => "1/8",
        };
        write!(f, "{s}")
    }
}

/// Ablation toggles. All six published ablation rows are expressible.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VariantSpec {
    pub use_mish: bool,
    pub use_bifpn: bool,
    pub use_expansion_path: bool,
}

impl VariantSpec {
    pub fn udet() -> Self {
        VariantSpec { use_mish: true, use_bifpn: true, use_expansion_path: true }
    }

    pub fn udet_relu() -> Self {
        VariantSpec { use_mish: false, use_bifpn: true, use_expansion_path: true }
    }

    pub fn unet() -> Self {
        VariantSpec { use_mish: false, use_bifpn: false, use_expansion_path: true }
    }

    pub fn unet_mish() -> Self {
        VariantSpec { use_mish: true, use_bifpn: false, use_expansion_path: true }
    }

    pub fn encoder_bifpn() -> Self {
        VariantSpec { use_mish: false, use_bifpn: true, use_expansion_path: false }
    }

    pub fn encoder_bifpn_mish() -> Self {
        VariantSpec { use_mish: true, use_bifpn: true, use_expansion_path: false }
    }

    pub fn name(&self) -> &'static str {
        match (self.use_mish, self.use_bifpn, self.use_expansion_path) {
            (true, true, true) => "udet",
            (false, true, true) => "udet-relu",
            (false, false, true) => "unet",
            (true, false, true) => "unet-mish",
            (false, true, false) => "enc-bifpn",
            (true, true, false) => "enc-bifpn-mish",
            _ => "invalid",
        }
    }

    pub fn backbone_activation(&self) -> ActivationKind {
        if self.use_mish {
            ActivationKind::Mish
        } else {
            ActivationKind::Relu
        }
    }
}

impl std::str::FromStr for VariantSpec {
    type Err = UdetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "udet" => Ok(VariantSpec::udet()),
            "udet-relu" => Ok(VariantSpec::udet_relu()),
            "unet" => Ok(VariantSpec::unet()),
            "unet-mish" => Ok(VariantSpec::unet_mish()),
            "enc-bifpn" => Ok(VariantSpec::encoder_bifpn()),
            "enc-bifpn-mish" => Ok(VariantSpec::encoder_bifpn_mish()),
            other => Err(UdetError::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

struct ConvLayer {
    spec: Conv2DSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl ConvLayer {
    fn build<E: Scalar>(
        reg: &mut ParamRegistry<E>,
        prefix: &str,
        spec: Conv2DSpec,
    ) -> Result<Self> {
        let weight = reg.register(
            &format!("{prefix}.weight"),
            Tensor4::zeros(Shape4::new(spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1)),
            true,
        )?;
        let bias = if spec.bias {
            Some(reg.register(
                &format!("{prefix}.bias"),
                Tensor4::zeros(Shape4::new(1, spec.out_channels, 1, 1)),
                true,
            )?)
        } else {
            None
        };
        Ok(ConvLayer { spec, weight, bias })
    }

    fn apply<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        x: VarId,
    ) -> Result<VarId> {
        let w = tape.param(reg, self.weight);
        let b = self.bias.map(|b| tape.param(reg, b));
        tape.conv2d(x, w, b, &self.spec)
    }

    fn param_count<E: Scalar>(&self, reg: &ParamRegistry<E>) -> usize {
        reg.value(self.weight).numel() + self.bias.map(|b| reg.value(b).numel()).unwrap_or(0)
    }
}

struct EncoderStage {
    conv1: ConvLayer,
    conv2: ConvLayer,
    dropout: bool,
}

struct UpStage {
    in_c: usize,
    out_c: usize,
    up_weight: ParamId,
    up_bias: ParamId,
    conv1: ConvLayer,
    conv2: ConvLayer,
}

/// How one parameter should be initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform with variance 2/fan_in (rectifier sections).
    HeUniform { fan_in: usize },
    /// Uniform with variance 2/(fan_in + fan_out) (smooth activations).
    GlorotUniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

pub struct UdetModel {
    pub variant: VariantSpec,
    pub input_size: usize,
    pub width_scale: WidthScale,
    encoder: Vec<EncoderStage>,
    bifpn: Option<Bifpn>,
    decoder: Vec<UpStage>,
    head: ConvLayer,
}

/// Per-section parameter counts; fusion-weight scalars are reported apart
/// from the audited total.
#[derive(Clone, Debug)]
pub struct ParameterAudit {
    pub rows: Vec<(&'static str, usize)>,
    pub total: usize,
    pub fusion_scalars: usize,
}

impl ParameterAudit {
    pub fn row(&self, label: &str) -> Option<usize> {
        self.rows.iter().find(|(l, _)| *l == label).map(|(_, c)| *c)
    }
}

/// Expected full-scale counts and the tolerance each is held to.
#[derive(Clone, Copy, Debug)]
pub struct AuditTarget {
    pub label: &'static str,
    pub expected: usize,
    /// Relative tolerance; 0.0 means exact.
    pub rel_tol: f64,
}

/// Published layer-table targets for the full-scale standard build.
pub fn full_scale_targets() -> Vec<AuditTarget> {
    vec![
        AuditTarget { label: "contraction_convs", expected: 18_842_048, rel_tol: 0.0 },
        AuditTarget { label: "bifpn_lateral_convs", expected: 126_976, rel_tol: 0.005 },
        AuditTarget { label: "bifpn_batchnorm", expected: 3_072, rel_tol: 0.0 },
        AuditTarget { label: "bifpn_depthwise", expected: 4_032, rel_tol: 0.0 },
        AuditTarget { label: "expansion_convs", expected: 6_821_825, rel_tol: 0.0 },
        AuditTarget { label: "transposed_convs", expected: 2_786_240, rel_tol: 0.0 },
    ]
}

/// Published grand total (4 significant figures) and its tolerance.
pub const TOTAL_TARGET: AuditTarget =
    AuditTarget { label: "total", expected: 28_580_000, rel_tol: 0.001 };

pub fn target_ok(target: &AuditTarget, actual: usize) -> bool {
    if target.rel_tol == 0.0 {
        actual == target.expected
    } else {
        let diff = (actual as f64 - target.expected as f64).abs();
        diff <= target.rel_tol * target.expected as f64
    }
}

impl UdetModel {
    /// Construct the graph and its parameter registry. `input_size` must be
    /// divisible by 16 (four pooling stages).
    pub fn build<E: Scalar>(
        variant: VariantSpec,
        input_size: usize,
        width_scale: WidthScale,
    ) -> Result<(UdetModel, ParamRegistry<E>)> {
        if input_size == 0 || input_size % 16 != 0 {
            return Err(UdetError::InvalidArgument(format!(
                "input size {input_size} must be a positive multiple of 16"
            )));
        }
        if !variant.use_bifpn && !variant.use_expansion_path {
            return Err(UdetError::InvalidArgument(
                "a variant needs the feature bridge, the expansion path, or both".into(),
            ));
        }

        let mut reg = ParamRegistry::new();
        let base = width_scale.apply(BASE_WIDTH);
        let ch: Vec<usize> = (0..5).map(|d| base << d).collect();

        let mut encoder = Vec::with_capacity(5);
        for d in 0..5 {
            let in_c = if d == 0 { 1 } else { ch[d - 1] };
            let prefix = format!("encoder.d{}", d + 1);
            encoder.push(EncoderStage {
                conv1: ConvLayer::build(
                    &mut reg,
                    &format!("{prefix}.conv1"),
                    Conv2DSpec::new_3x3_same(in_c, ch[d]),
                )?,
                conv2: ConvLayer::build(
                    &mut reg,
                    &format!("{prefix}.conv2"),
                    Conv2DSpec::new_3x3_same(ch[d], ch[d]),
                )?,
                dropout: d == 4,
            });
        }

        let bifpn = if variant.use_bifpn {
            Some(Bifpn::build(BifpnConfig::for_base_width(base), &mut reg)?)
        } else {
            None
        };

        let mut decoder = Vec::new();
        if variant.use_expansion_path {
            for i in 0..4 {
                let depth = 4 - i; // producing maps at this depth
                let in_c = if i == 0 { ch[4] } else { ch[4 - i] };
                let out_c = ch[depth - 1];
                let skip_c = if variant.use_bifpn { base } else { ch[depth - 1] };
                let prefix = format!("decoder.d{depth}");
                let up_weight = reg.register(
                    &format!("{prefix}.up.weight"),
                    Tensor4::zeros(Shape4::new(in_c, out_c, 2, 2)),
                    true,
                )?;
                let up_bias = reg.register(
                    &format!("{prefix}.up.bias"),
                    Tensor4::zeros(Shape4::new(1, out_c, 1, 1)),
                    true,
                )?;
                decoder.push(UpStage {
                    in_c,
                    out_c,
                    up_weight,
                    up_bias,
                    conv1: ConvLayer::build(
                        &mut reg,
                        &format!("{prefix}.conv1"),
                        Conv2DSpec::new_3x3_same(out_c + skip_c, out_c),
                    )?,
                    conv2: ConvLayer::build(
                        &mut reg,
                        &format!("{prefix}.conv2"),
                        Conv2DSpec::new_3x3_same(out_c, out_c),
                    )?,
                });
            }
        }

        let head = ConvLayer::build(&mut reg, "head.conv", Conv2DSpec::new_1x1(base, 1, true))?;

        let model = UdetModel { variant, input_size, width_scale, encoder, bifpn, decoder, head };
        Ok((model, reg))
    }

    /// Expected encoder feature map (spatial, channels) per depth.
    pub fn encoder_feature_shapes(&self) -> Vec<(usize, usize)> {
        let base = self.width_scale.apply(BASE_WIDTH);
        (0..5).map(|d| (self.input_size >> d, base << d)).collect()
    }

    pub fn census(&self) -> Option<LayerCensus> {
        self.bifpn.as_ref().map(|b| b.census())
    }

    pub fn fusion_weight_ids(&self) -> Vec<ParamId> {
        self.bifpn.as_ref().map(|b| b.fusion_weight_ids()).unwrap_or_default()
    }

    /// Forward pass to a probability map of the input's spatial size.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        reg: &ParamRegistry<E>,
        x: VarId,
        mode: Mode,
        update_bn: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<VarId> {
        let s = tape.shape(x);
        if s.c != 1 || s.h != self.input_size || s.w != self.input_size {
            return Err(UdetError::shape(
                "model_forward",
                format!("expected (n,1,{0},{0}), got {s}", self.input_size),
            ));
        }
        let act = self.variant.backbone_activation();
        let mut rng = rng;

        let mut pyramid: Vec<VarId> = Vec::with_capacity(5);
        let mut cur = x;
        for (d, stage) in self.encoder.iter().enumerate() {
            if d > 0 {
                cur = tape.maxpool2d(cur)?;
            }
            cur = stage.conv1.apply(tape, reg, cur)?;
            cur = tape.activation(cur, act)?;
            cur = stage.conv2.apply(tape, reg, cur)?;
            cur = tape.activation(cur, act)?;
            if stage.dropout && mode.applies_dropout() {
                let r = rng
                    .as_deref_mut()
                    .ok_or_else(|| UdetError::InvalidArgument("train forward needs an rng".into()))?;
                cur = tape.dropout(cur, DROPOUT_RATE, mode, r)?;
            }
            pyramid.push(cur);
        }

        let skips: [VarId; 5] = match &self.bifpn {
            Some(b) => b.forward(
                tape,
                reg,
                [pyramid[0], pyramid[1], pyramid[2], pyramid[3], pyramid[4]],
                mode,
                update_bn,
            )?,
            None => [pyramid[0], pyramid[1], pyramid[2], pyramid[3], pyramid[4]],
        };

        let mut cur = if self.decoder.is_empty() {
            skips[0]
        } else {
            let mut cur = pyramid[4];
            for (i, stage) in self.decoder.iter().enumerate() {
                let w = tape.param(reg, stage.up_weight);
                let b = tape.param(reg, stage.up_bias);
                cur = tape.conv_transpose2d(cur, w, Some(b))?;
                cur = tape.concat_channels(cur, skips[3 - i])?;
                cur = stage.conv1.apply(tape, reg, cur)?;
                cur = tape.activation(cur, act)?;
                cur = stage.conv2.apply(tape, reg, cur)?;
                cur = tape.activation(cur, act)?;
            }
            cur
        };

        cur = self.head.apply(tape, reg, cur)?;
        tape.sigmoid(cur)
    }

    /// Inference convenience: no recording, no statistics updates.
    pub fn infer<E: Scalar>(&self, reg: &ParamRegistry<E>, x: &Tensor4<E>) -> Result<Tensor4<E>> {
        let mut tape = Tape::inference();
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, reg, xv, Mode::Infer, false, None)?;
        Ok(tape.value(out).clone())
    }

    /// Per-section parameter counts from the live registry.
    pub fn audit<E: Scalar>(&self, reg: &ParamRegistry<E>) -> ParameterAudit {
        let mut rows: Vec<(&'static str, usize)> = Vec::new();
        let contraction: usize = self
            .encoder
            .iter()
            .map(|s| s.conv1.param_count(reg) + s.conv2.param_count(reg))
            .sum();
        rows.push(("contraction_convs", contraction));

        let mut fusion_scalars = 0;
        if let Some(b) = &self.bifpn {
            let c = b.param_counts(reg);
            rows.push(("bifpn_lateral_convs", c.lateral_convs));
            rows.push(("bifpn_batchnorm", c.batch_norms));
            rows.push(("bifpn_depthwise", c.depthwise_convs));
            fusion_scalars = c.fusion_scalars;
        }

        let mut expansion = self.head.param_count(reg);
        let mut transposed = 0;
        for s in &self.decoder {
            expansion += s.conv1.param_count(reg) + s.conv2.param_count(reg);
            transposed += reg.value(s.up_weight).numel() + reg.value(s.up_bias).numel();
        }
        rows.push(("expansion_convs", expansion));
        if !self.decoder.is_empty() {
            rows.push(("transposed_convs", transposed));
        }

        let total = rows.iter().map(|(_, c)| c).sum();
        ParameterAudit { rows, total, fusion_scalars }
    }

    /// Initialization plan: rectifier sections get fan-in scaling, smooth
    /// (mish/sigmoid) sections get fan-average scaling, biases and running
    /// means start at zero, scales and fusion weights at one.
    pub fn parameter_inits(&self) -> Vec<(ParamId, InitKind)> {
        let mut plan: Vec<(ParamId, InitKind)> = Vec::new();
        let backbone = |spec: &Conv2DSpec| -> InitKind {
            let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
            let fan_out = spec.out_channels * spec.kernel.0 * spec.kernel.1;
            if self.variant.use_mish {
                InitKind::GlorotUniform { fan_in, fan_out }
            } else {
                InitKind::HeUniform { fan_in }
            }
        };
        let conv = |plan: &mut Vec<(ParamId, InitKind)>, l: &ConvLayer, kind: InitKind| {
            plan.push((l.weight, kind));
            if let Some(b) = l.bias {
                plan.push((b, InitKind::Zeros));
            }
        };

        for s in &self.encoder {
            conv(&mut plan, &s.conv1, backbone(&s.conv1.spec));
            conv(&mut plan, &s.conv2, backbone(&s.conv2.spec));
        }
        if let Some(b) = &self.bifpn {
            for (id, &in_c) in b.lateral_weight_ids().iter().zip(&b.cfg.entry_channels) {
                plan.push((*id, InitKind::HeUniform { fan_in: in_c }));
            }
            for id in b.depthwise_weight_ids() {
                plan.push((id, InitKind::HeUniform { fan_in: 9 }));
            }
            for (gamma, beta, mean, var) in b.bn_ids() {
                plan.push((gamma, InitKind::Ones));
                plan.push((beta, InitKind::Zeros));
                plan.push((mean, InitKind::Zeros));
                plan.push((var, InitKind::Ones));
            }
            for id in b.fusion_weight_ids() {
                plan.push((id, InitKind::Ones));
            }
        }
        for s in &self.decoder {
            let (fan_in, fan_out) = (s.in_c * 4, s.out_c * 4);
            let kind = if self.variant.use_mish {
                InitKind::GlorotUniform { fan_in, fan_out }
            } else {
                InitKind::HeUniform { fan_in }
            };
            plan.push((s.up_weight, kind));
            plan.push((s.up_bias, InitKind::Zeros));
            conv(&mut plan, &s.conv1, backbone(&s.conv1.spec));
            conv(&mut plan, &s.conv2, backbone(&s.conv2.spec));
        }
        // head feeds the sigmoid: fan-average scaling regardless of variant
        conv(
            &mut plan,
            &self.head,
            InitKind::GlorotUniform {
                fan_in: self.head.spec.in_channels,
                fan_out: self.head.spec.out_channels,
            },
        );
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn width_scale_parses_and_applies() {
        assert_eq!("1/4".parse::<WidthScale>().unwrap(), WidthScale::Quarter);
        assert_eq!("0.125".parse::<WidthScale>().unwrap(), WidthScale::Eighth);
        assert!("1/3".parse::<WidthScale>().is_err());
        assert_eq!(WidthScale::Half.apply(128), 64);
    }

    #[test]
    fn encoder_shape_chain_at_full_scale() {
        let (m, _reg) = UdetModel::build::<f32>(VariantSpec::udet(), 512, WidthScale::Full).unwrap();
        assert_eq!(
            m.encoder_feature_shapes(),
            vec![(512, 64), (256, 128), (128, 256), (64, 512), (32, 1024)]
        );
    }

    #[test]
    fn rejects_bad_input_size_and_degenerate_variant() {
        assert!(UdetModel::build::<f32>(VariantSpec::udet(), 100, WidthScale::Full).is_err());
        let degenerate =
            VariantSpec { use_mish: true, use_bifpn: false, use_expansion_path: false };
        assert!(UdetModel::build::<f32>(degenerate, 128, WidthScale::Full).is_err());
    }

    #[test]
    fn forward_shapes_and_range_at_desk_scale() {
        let (m, mut reg) =
            UdetModel::build::<f32>(VariantSpec::udet(), 128, WidthScale::Quarter).unwrap();
        crate::train::init_weights(&m, &mut reg, 7);
        let x = Tensor4::zeros(Shape4::new(1, 1, 128, 128));
        let y = m.infer(&reg, &x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 128, 128));
        assert!(y.is_finite());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn infer_is_deterministic_and_batch_equivariant() {
        use rand::Rng;
        let (m, mut reg) =
            UdetModel::build::<f32>(VariantSpec::udet(), 32, WidthScale::Eighth).unwrap();
        crate::train::init_weights(&m, &mut reg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_| rng.random::<f32>());
        let b = Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_| rng.random::<f32>());

        let y1 = m.infer(&reg, &a).unwrap();
        let y2 = m.infer(&reg, &a).unwrap();
        assert_eq!(y1.data(), y2.data());

        // batch [a, b] vs [b, a]: outputs permute identically
        let mut ab = Vec::new();
        ab.extend_from_slice(a.data());
        ab.extend_from_slice(b.data());
        let mut ba = Vec::new();
        ba.extend_from_slice(b.data());
        ba.extend_from_slice(a.data());
        let yab =
            m.infer(&reg, &Tensor4::new(Shape4::new(2, 1, 32, 32), ab).unwrap()).unwrap();
        let yba =
            m.infer(&reg, &Tensor4::new(Shape4::new(2, 1, 32, 32), ba).unwrap()).unwrap();
        let plane = 32 * 32;
        assert_eq!(&yab.data()[..plane], &yba.data()[plane..]);
        assert_eq!(&yab.data()[plane..], &yba.data()[..plane]);
    }

    #[test]
    fn train_dropout_seeds_change_outputs() {
        let (m, mut reg) =
            UdetModel::build::<f32>(VariantSpec::udet(), 32, WidthScale::Eighth).unwrap();
        crate::train::init_weights(&m, &mut reg, 3);
        let x = Tensor4::full(Shape4::new(1, 1, 32, 32), 0.5f32);

        let run = |seed: u64, reg: &ParamRegistry<f32>| {
            let mut tape = Tape::inference();
            let xv = tape.leaf(x.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = m.forward(&mut tape, reg, xv, Mode::Train, false, Some(&mut rng)).unwrap();
            tape.value(y).data().to_vec()
        };
        let y1 = run(1, &reg);
        let y2 = run(2, &reg);
        let y1_again = run(1, &reg);
        assert_eq!(y1, y1_again);
        assert_ne!(y1, y2);
    }

    #[test]
    fn unet_variant_has_different_audit_than_udet() {
        let (udet, reg_u) =
            UdetModel::build::<f32>(VariantSpec::udet(), 512, WidthScale::Full).unwrap();
        let (unet, reg_n) =
            UdetModel::build::<f32>(VariantSpec::unet(), 512, WidthScale::Full).unwrap();
        let a = udet.audit(&reg_u);
        let b = unet.audit(&reg_n);
        assert_eq!(b.row("contraction_convs"), Some(18_842_048));
        assert_ne!(a.total, b.total);
        // classical skip wiring doubles the decoder concat width
        assert!(b.row("expansion_convs").unwrap() > a.row("expansion_convs").unwrap());
    }
}

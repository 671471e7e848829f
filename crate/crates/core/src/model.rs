//! IMU-Net: a U-Net style encoder/decoder over `[1, 6, 600]` stride tensors
//! that pools along time only, plus the multi-task head used for stride
//! length regression and run/walk classification.
//!
//! ```text
//! input 1x6x600 -> pad 640
//!   level 0: conv3x3-relu x2 (16)  -> skip 16x6x640 -> pool 1x4
//!   level 1: conv3x3-relu x2 (32)  -> skip 32x6x160 -> pool 1x4
//!   level 2: conv3x3-relu x2 (64)  -> skip 64x6x40  -> pool 1x4 -> bottleneck 64x6x10
//! decoder, deepest first: upsample 1x4, concat skip, conv3x3-relu x2
//!   -> conv1x1 to 1 channel (linear) -> crop 600
//! head: flatten bottleneck (3840) -> dense 128 + relu -> logits (2), length (1)
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{GaitClass, StrideSegment, SEGMENT_LEN, SENSOR_ROWS};
use crate::rng::derived_rng;
use crate::tensor::{EngineError, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Regression targets are stride lengths in units of 3 m.
pub const LENGTH_SCALE_CM: f32 = 300.0;

pub fn length_to_target(cm: f32) -> f32 {
    cm / LENGTH_SCALE_CM
}

pub fn target_to_length(t: f32) -> f32 {
    t * LENGTH_SCALE_CM
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input shape {got:?}, expected {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImuNetConfig {
    pub rows: usize,
    pub input_width: usize,
    /// Time width after internal zero padding; divisible by `pool^levels`.
    pub padded_width: usize,
    /// Output channels per encoder level.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ImuNetConfig {
    fn default() -> Self {
        Self {
            rows: SENSOR_ROWS,
            input_width: SEGMENT_LEN,
            padded_width: 640,
            channels: vec![16, 32, 64],
            kernel: 3,
            pool: 4,
            hidden: 128,
            classes: 2,
        }
    }
}

impl ImuNetConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!("channel plan {:?}", self.channels));
        }
        if self.kernel.is_multiple_of(2) || self.pool < 2 || self.hidden == 0 || self.classes < 2 {
            return bad("kernel must be odd, pool >= 2, hidden > 0, classes >= 2".into());
        }
        if self.padded_width < self.input_width {
            return bad(format!("padded width {} < input width {}", self.padded_width, self.input_width));
        }
        let div = self.pool.pow(self.levels() as u32);
        if !self.padded_width.is_multiple_of(div) {
            return bad(format!("padded width {} not divisible by {div}", self.padded_width));
        }
        if !self.bottleneck_covers_input() {
            return bad("bottleneck receptive fields do not cover the input".into());
        }
        Ok(())
    }

    /// Time widths at each level, input first: `[640, 160, 40, 10]`.
    pub fn level_widths(&self) -> Vec<usize> {
        (0..=self.levels()).map(|l| self.padded_width / self.pool.pow(l as u32)).collect()
    }

    pub fn bottleneck_shape(&self) -> [usize; 3] {
        [*self.channels.last().unwrap(), self.rows, *self.level_widths().last().unwrap()]
    }

    pub fn flat_features(&self) -> usize {
        self.bottleneck_shape().iter().product()
    }

    /// `(size, stride, offset)` of a bottleneck unit's receptive field along
    /// time, in input samples; unit `i` sees `[i*stride + offset, .. + size)`.
    pub fn receptive_field(&self) -> (usize, usize, isize) {
        let (mut size, mut jump, mut offset) = (1usize, 1usize, 0isize);
        let half = self.kernel / 2;
        for _ in 0..self.levels() {
            for _ in 0..2 {
                size += 2 * half * jump;
                offset -= (half * jump) as isize;
            }
            size += (self.pool - 1) * jump;
            jump *= self.pool;
        }
        (size, jump, offset)
    }

    /// True when every input sample lies in some bottleneck unit's
    /// receptive field.
    pub fn bottleneck_covers_input(&self) -> bool {
        let (size, jump, offset) = self.receptive_field();
        let n = self.bottleneck_shape()[2] as isize;
        size >= jump && offset <= 0 && (n - 1) * jump as isize + offset + size as isize >= self.input_width as isize
    }

    /// Single-line form used in checkpoint manifests.
    pub fn describe(&self) -> String {
        let ch: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        format!(
            "rows={} input_width={} padded_width={} channels={} kernel={} pool={} hidden={} classes={}",
            self.rows,
            self.input_width,
            self.padded_width,
            ch.join(","),
            self.kernel,
            self.pool,
            self.hidden,
            self.classes
        )
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for part in s.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("bad config token `{part}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| ModelError::Config(format!("{k}: {e}")));
            match k {
                "rows" => cfg.rows = num(v)?,
                "input_width" => cfg.input_width = num(v)?,
                "padded_width" => cfg.padded_width = num(v)?,
                "channels" => cfg.channels = v.split(',').map(num).collect::<Result<_, _>>()?,
                "kernel" => cfg.kernel = num(v)?,
                "pool" => cfg.pool = num(v)?,
                "hidden" => cfg.hidden = num(v)?,
                "classes" => cfg.classes = num(v)?,
                _ => return Err(ModelError::Config(format!("unknown config key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    encoder: Vec<[Layer; 2]>,
    decoder: Vec<[Layer; 2]>,
    recon_head: Layer,
    fc: Layer,
    cls_head: Layer,
    reg_head: Layer,
}

/// Parameter groups, by name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Decoder,
    ReconHead,
    Fc,
    ClsHead,
    RegHead,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Encoder,
        Group::Decoder,
        Group::ReconHead,
        Group::Fc,
        Group::ClsHead,
        Group::RegHead,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
            Group::ReconHead => "recon_head",
            Group::Fc => "fc",
            Group::ClsHead => "cls_head",
            Group::RegHead => "reg_head",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        let head = name.split('.').next()?;
        Self::ALL.into_iter().find(|g| g.prefix() == head)
    }
}

/// Outputs of the downstream forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: GaitClass,
    pub probs: [f32; 2],
    /// Regression output in model units (see [`LENGTH_SCALE_CM`]).
    pub length_target: f32,
}

impl Prediction {
    pub fn length_cm(&self) -> f32 {
        target_to_length(self.length_target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuNet {
    config: ImuNetConfig,
    pub params: ParamStore,
    layout: Layout,
}

fn he_normal(shape: &[usize], fan_in: usize, gain: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let std = gain * (2.0 / fan_in as f32).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

impl ImuNet {
    /// Fresh network with He-normal weights and zero biases, except the
    /// regression bias which starts at the middle of the target range.
    pub fn new(config: ImuNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = derived_rng(seed, 0x1e7);
        let mut params = ParamStore::new();
        let k = config.kernel;
        let conv = |params: &mut ParamStore, name: String, c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng| {
            let weight = params.add(format!("{name}.weight"), he_normal(&[c_out, c_in, k, k], c_in * k * k, 1.0, rng));
            let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
            Layer { weight, bias }
        };

        let mut encoder = Vec::new();
        let mut c_in = 1;
        for (l, &c) in config.channels.iter().enumerate() {
            let a = conv(&mut params, format!("encoder.{l}.conv1"), c_in, c, k, &mut rng);
            let b = conv(&mut params, format!("encoder.{l}.conv2"), c, c, k, &mut rng);
            encoder.push([a, b]);
            c_in = c;
        }
        let mut decoder = vec![None; config.levels()];
        let mut below = *config.channels.last().unwrap();
        for l in (0..config.levels()).rev() {
            let c = config.channels[l];
            let a = conv(&mut params, format!("decoder.{l}.conv1"), below + c, c, k, &mut rng);
            let b = conv(&mut params, format!("decoder.{l}.conv2"), c, c, k, &mut rng);
            decoder[l] = Some([a, b]);
            below = c;
        }
        let decoder = decoder.into_iter().map(Option::unwrap).collect();
        let recon_head = conv(&mut params, "recon_head".into(), config.channels[0], 1, 1, &mut rng);

        let mut dense = |params: &mut ParamStore, name: &str, n_in: usize, n_out: usize, gain: f32, bias: f32| {
            let weight = params.add(format!("{name}.weight"), he_normal(&[n_out, n_in], n_in, gain, &mut rng));
            let bias = params.add(format!("{name}.bias"), Tensor::full(&[n_out], bias));
            Layer { weight, bias }
        };
        let flat = config.flat_features();
        let fc = dense(&mut params, "fc", flat, config.hidden, 1.0, 0.0);
        let cls_head = dense(&mut params, "cls_head", config.hidden, config.classes, 0.5, 0.0);
        let reg_head = dense(&mut params, "reg_head", config.hidden, 1, 0.1, 0.5);

        Ok(Self {
            config,
            params,
            layout: Layout {
                encoder,
                decoder,
                recon_head,
                fc,
                cls_head,
                reg_head,
            },
        })
    }

    pub fn config(&self) -> &ImuNetConfig {
        &self.config
    }

    pub fn reg_head(&self) -> Layer {
        self.layout.reg_head
    }

    pub fn group_ids(&self, group: Group) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| Group::of(self.params.name(id)) == Some(group))
            .collect()
    }

    /// SHA-256 over names, shapes and little-endian values of a group.
    pub fn group_checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for id in self.group_ids(group) {
            let t = self.params.get(id);
            h.update(self.params.name(id).as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies encoder weights from another network with the same config.
    pub fn load_encoder_from(&mut self, other: &ImuNet) -> Result<(), ModelError> {
        if other.config != self.config {
            return Err(ModelError::Config("encoder transfer between different configs".into()));
        }
        for id in self.group_ids(Group::Encoder) {
            self.params.set(id, other.params.get(id).clone())?;
        }
        Ok(())
    }

    fn conv_relu(&self, g: &mut Graph<'_>, x: NodeId, layer: Layer) -> Result<NodeId, EngineError> {
        let (w, b) = (g.param(layer.weight), g.param(layer.bias));
        let y = g.conv2d_same(x, w, b)?;
        Ok(g.relu(y))
    }

    fn check_input(&self, g: &Graph<'_>, x: NodeId) -> Result<(), ModelError> {
        let expected = vec![1, self.config.rows, self.config.input_width];
        if g.value(x).shape() != expected {
            return Err(ModelError::InputShape {
                expected,
                got: g.value(x).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Encoder path. Returns the bottleneck and the per-level skip maps.
    pub fn encode(&self, g: &mut Graph<'_>, x: NodeId) -> Result<(NodeId, Vec<NodeId>), ModelError> {
        self.check_input(g, x)?;
        let mut h = g.pad_time(x, self.config.padded_width)?;
        let mut skips = Vec::with_capacity(self.config.levels());
        for pair in &self.layout.encoder {
            h = self.conv_relu(g, h, pair[0])?;
            h = self.conv_relu(g, h, pair[1])?;
            skips.push(h);
            h = g.maxpool_time(h, self.config.pool)?;
        }
        Ok((h, skips))
    }

    /// Decoder path back to a `[1, 6, 600]` reconstruction.
    pub fn decode(&self, g: &mut Graph<'_>, bottleneck: NodeId, skips: &[NodeId]) -> Result<NodeId, ModelError> {
        if skips.len() != self.config.levels() {
            return Err(ModelError::Config(format!(
                "{} skips for {} levels",
                skips.len(),
                self.config.levels()
            )));
        }
        let mut h = bottleneck;
        for l in (0..self.config.levels()).rev() {
            let up = g.upsample_time(h, self.config.pool)?;
            let cat = g.concat_channels(up, skips[l])?;
            h = self.conv_relu(g, cat, self.layout.decoder[l][0])?;
            h = self.conv_relu(g, h, self.layout.decoder[l][1])?;
        }
        let head = self.layout.recon_head;
        let (w, b) = (g.param(head.weight), g.param(head.bias));
        let out = g.conv2d_same(h, w, b)?;
        Ok(g.crop_time(out, self.config.input_width)?)
    }

    pub fn reconstruct(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, ModelError> {
        let (z, skips) = self.encode(g, x)?;
        self.decode(g, z, &skips)
    }

    /// Returns `(logits, length)` nodes; softmax is left to the loss.
    pub fn forward_downstream(&self, g: &mut Graph<'_>, x: NodeId) -> Result<(NodeId, NodeId), ModelError> {
        let (z, _) = self.encode(g, x)?;
        let flat = g.reshape(z, &[self.config.flat_features()])?;
        let fc = self.layout.fc;
        let (w, b) = (g.param(fc.weight), g.param(fc.bias));
        let hidden = g.dense(flat, w, b)?;
        let hidden = g.relu(hidden);
        let cls = self.layout.cls_head;
        let (w, b) = (g.param(cls.weight), g.param(cls.bias));
        let logits = g.dense(hidden, w, b)?;
        let reg = self.layout.reg_head;
        let (w, b) = (g.param(reg.weight), g.param(reg.bias));
        let length = g.dense(hidden, w, b)?;
        Ok((logits, length))
    }

    pub fn predict(&self, segment: &StrideSegment) -> Result<Prediction, ModelError> {
        let mut g = Graph::new(&self.params);
        let x = g.input(segment.tensor.clone());
        let (logits, length) = self.forward_downstream(&mut g, x)?;
        let probs = crate::tensor::ops::softmax(g.value(logits).data());
        let class = if probs[1] > probs[0] { GaitClass::Run } else { GaitClass::Walk };
        Ok(Prediction {
            class,
            probs: [probs[0], probs[1]],
            length_target: g.value(length).item(),
        })
    }

    pub fn reconstruct_segment(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new(&self.params);
        let x = g.input(input.clone());
        let y = self.reconstruct(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Zeros every parameter.
    pub fn zero_params(&mut self) {
        for id in self.params.ids().collect::<Vec<_>>() {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }
}

/// Deterministic `[1, 6, 600]` input with values uniform in `[-0.5, 0.5)`.
pub fn random_input(seed: u64) -> Tensor {
    let mut rng = derived_rng(seed, 0x1a9);
    let data = (0..SENSOR_ROWS * SEGMENT_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    Tensor::new(vec![1, SENSOR_ROWS, SEGMENT_LEN], data).expect("segment shape")
}

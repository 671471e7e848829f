//! Independent f64 reference of the downstream forward pass and loss, used
//! as the finite-difference oracle for the full model.

#![allow(dead_code)]

pub mod opcheck;

use std::collections::HashMap;

use imu_stride::data::synth::{synth_gait, GaitScenario};
use imu_stride::data::{GaitClass, StrideLabel, StrideSegment};
use imu_stride::model::{random_input, Group, ImuNet, ImuNetConfig};
use imu_stride::rng::derived_rng;
use imu_stride::tensor::{Graph, ParamId};
use imu_stride::train::{batch_loss, RegressionLoss};
use rand::Rng;

pub type Weights = HashMap<String, Vec<f64>>;

pub fn weights_of(net: &ImuNet) -> Weights {
    net.params
        .ids()
        .map(|id| {
            let v = net.params.get(id).data().iter().map(|&x| x as f64).collect();
            (net.params.name(id).to_string(), v)
        })
        .collect()
}

/// Zero-padded "same" cross-correlation over `[c, rows, width]` maps.
fn conv(x: &[f64], c_in: usize, rows: usize, width: usize, w: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let c_out = b.len();
    let p = (k / 2) as isize;
    let mut out = vec![0.0; c_out * rows * width];
    for o in 0..c_out {
        let plane = &mut out[o * rows * width..(o + 1) * rows * width];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..c_in {
            for kh in 0..k {
                for kw in 0..k {
                    let wv = w[((o * c_in + c) * k + kh) * k + kw];
                    for y in 0..rows {
                        let yy = y as isize + kh as isize - p;
                        if yy < 0 || yy >= rows as isize {
                            continue;
                        }
                        let src = &x[(c * rows + yy as usize) * width..][..width];
                        let dst = &mut plane[y * width..(y + 1) * width];
                        let shift = kw as isize - p;
                        for (t, d) in dst.iter_mut().enumerate() {
                            let tt = t as isize + shift;
                            if tt >= 0 && tt < width as isize {
                                *d += wv * src[tt as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn pool(x: &[f64], width: usize, k: usize) -> Vec<f64> {
    x.chunks(width)
        .flat_map(|row| row.chunks(k).map(|w| w.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
        .collect()
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `(logits, length)` for one segment.
pub fn forward(cfg: &ImuNetConfig, w: &Weights, seg: &StrideSegment) -> ([f64; 2], f64) {
    let rows = cfg.rows;
    let mut width = cfg.padded_width;
    let mut x = vec![0.0; rows * width];
    for r in 0..rows {
        for t in 0..cfg.input_width {
            x[r * width + t] = seg.tensor.data()[r * cfg.input_width + t] as f64;
        }
    }
    let mut c_in = 1;
    for (l, &c) in cfg.channels.iter().enumerate() {
        for (j, ci) in [(1, c_in), (2, c)] {
            let name = format!("encoder.{l}.conv{j}");
            x = conv(
                &x,
                ci,
                rows,
                width,
                &w[&format!("{name}.weight")],
                &w[&format!("{name}.bias")],
                cfg.kernel,
            );
            relu(&mut x);
        }
        x = pool(&x, width, cfg.pool);
        width /= cfg.pool;
        c_in = c;
    }
    let mut h = dense(&x, &w["fc.weight"], &w["fc.bias"]);
    relu(&mut h);
    let logits = dense(&h, &w["cls_head.weight"], &w["cls_head.bias"]);
    let length = dense(&h, &w["reg_head.weight"], &w["reg_head.bias"])[0];
    ([logits[0], logits[1]], length)
}

/// Mean cross-entropy plus PEW_RMSE (or RMSE) over the batch, targets in
/// units of 3 m.
pub fn loss(cfg: &ImuNetConfig, w: &Weights, batch: &[StrideSegment], pew: bool) -> f64 {
    let mut ce = 0.0;
    let mut sq = 0.0;
    for seg in batch {
        let label = seg.label.unwrap();
        let (logits, p) = forward(cfg, w, seg);
        let m = logits[0].max(logits[1]);
        let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
        ce += lse - logits[label.class.index()];
        let g = label.length_cm as f64 / 300.0;
        let beta = if pew { ((p - g).abs() / g).exp() } else { 1.0 };
        sq += beta * (p - g) * (p - g);
    }
    let n = batch.len() as f64;
    ce / n + (sq / n).sqrt()
}

/// Central difference of the reference loss in one weight element.
pub fn numeric_grad(cfg: &ImuNetConfig, w: &mut Weights, name: &str, i: usize, h: f64, batch: &[StrideSegment]) -> f64 {
    let x = w[name][i];
    w.get_mut(name).unwrap()[i] = x + h;
    let lp = loss(cfg, w, batch, true);
    w.get_mut(name).unwrap()[i] = x - h;
    let lm = loss(cfg, w, batch, true);
    w.get_mut(name).unwrap()[i] = x;
    (lp - lm) / (2.0 * h)
}

/// `per_tensor` random elements from every parameter the downstream loss
/// reaches.
pub fn downstream_samples(net: &ImuNet, per_tensor: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut r = derived_rng(seed, 0);
    let mut out = Vec::new();
    for group in [Group::Encoder, Group::Fc, Group::ClsHead, Group::RegHead] {
        for id in net.group_ids(group) {
            let len = net.params.get(id).len();
            for _ in 0..per_tensor.min(len) {
                out.push((id, r.random_range(0..len)));
            }
        }
    }
    out
}

/// A default-config network with small random biases, so no pre-activation
/// sits exactly on a ReLU kink (fresh biases are zero and padded inputs are
/// zero).
pub fn jittered_net(seed: u64) -> ImuNet {
    let mut net = ImuNet::new(ImuNetConfig::default(), seed).unwrap();
    let mut r = derived_rng(seed, 1);
    for id in net.params.ids().collect::<Vec<_>>() {
        if net.params.name(id).ends_with(".bias") {
            net.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|b| *b += r.random_range(-0.05..0.05));
        }
    }
    net
}

/// Four labeled segments of uniform noise in [-0.5, 0.5): generic inputs
/// without the plateaus and near-ties of smooth gait signals, which put
/// max-pool and ReLU decisions within rounding distance of a switch.
pub fn random_batch() -> Vec<StrideSegment> {
    [
        (95.0, GaitClass::Walk),
        (130.0, GaitClass::Walk),
        (180.0, GaitClass::Run),
        (260.0, GaitClass::Run),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(length_cm, class))| StrideSegment {
        tensor: random_input(100 + i as u64),
        valid_len: 600,
        label: Some(StrideLabel { length_cm, class }),
        subject_id: "gradcheck".into(),
    })
    .collect()
}

/// Two walking and two running strides.
pub fn labeled_batch() -> Vec<StrideSegment> {
    [5.0, 7.0, 13.0, 19.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| synth_gait(&GaitScenario::new(v), 1, i as u64).segments().unwrap().remove(0))
        .collect()
}

/// Engine loss and gradients of the full downstream loss against the f64
/// reference on [`jittered_net`] and [`random_batch`].
pub struct FullCheck {
    pub engine_loss: f64,
    pub reference_loss: f64,
    /// `(parameter, index, analytic, numeric)`
    pub entries: Vec<(String, usize, f64, f64)>,
}

impl FullCheck {
    pub fn max_rel_err(&self, floor: f64) -> f64 {
        self.entries
            .iter()
            .map(|(_, _, a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

pub fn full_model_check(per_tensor: usize, seed: u64) -> FullCheck {
    let net = jittered_net(31);
    let batch = random_batch();
    let refs: Vec<&StrideSegment> = batch.iter().collect();
    let mut g = Graph::new(&net.params);
    let l = batch_loss(&net, &mut g, &refs, RegressionLoss::PewRmse).unwrap();
    let grads = g.backward(l).unwrap();
    let mut w = weights_of(&net);
    let reference_loss = loss(net.config(), &w, &batch, true);
    let entries = downstream_samples(&net, per_tensor, seed)
        .into_iter()
        .map(|(id, i)| {
            let name = net.params.name(id).to_string();
            let numeric = numeric_grad(net.config(), &mut w, &name, i, 1e-6, &batch);
            (name, i, grads.get(id).data()[i] as f64, numeric)
        })
        .collect();
    FullCheck {
        engine_loss: g.value(l).item() as f64,
        reference_loss,
        entries,
    }
}

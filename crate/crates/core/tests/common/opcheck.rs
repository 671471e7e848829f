//! Op-level finite-difference cases shared by the gradient tests and the
//! acceptance run.

use imu_stride::rng::derived_rng;
use imu_stride::tensor::gradcheck::{all_elements, gradcheck, GradCheckReport};
use imu_stride::tensor::{EngineError, Graph, NodeId, ParamStore, Tensor};
use imu_stride::train::RegressionLoss;
use rand::seq::SliceRandom;
use rand::Rng;

pub const OPS: [&str; 11] = [
    "conv3x3",
    "conv1x1",
    "relu",
    "maxpool",
    "upsample",
    "concat_pad_crop_reshape",
    "dense",
    "softmax_xent",
    "mse",
    "scalar_arithmetic",
    "pew_rmse_custom_node",
];

/// Op inputs are kept at least 5h away from any kink, so a larger step
/// only lowers f32 rounding noise.
pub const H: f32 = 1e-2;
pub const TOL: f64 = 0.01;
pub const FLOOR: f64 = 1e-3;

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = derived_rng(seed, 0);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values with magnitude in [0.1, 1] so ReLU kinks stay far from `x ± h`.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut r = derived_rng(seed, 1);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A permutation of well separated values, so pooling winners never tie.
fn distinct(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 1.0).collect();
    v.shuffle(&mut derived_rng(seed, 2));
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `sum(y * R)` for a fixed random `R`, giving every output a distinct
/// upstream gradient.
fn project(g: &mut Graph<'_>, y: NodeId, seed: u64) -> Result<NodeId, EngineError> {
    let r = g.input(uniform(g.value(y).shape(), seed));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn check_all(mut store: ParamStore, f: impl Fn(&mut Graph<'_>) -> Result<NodeId, EngineError>) -> GradCheckReport {
    let samples = all_elements(&store);
    gradcheck(&mut store, &samples, H, f).unwrap()
}

/// Checks every element of every input of one op.
pub fn check_op(op: &str) -> GradCheckReport {
    match op {
        "conv3x3" => {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(&[2, 4, 8], 1));
            let w = s.add("w", uniform(&[3, 2, 3, 3], 2));
            let b = s.add("b", uniform(&[3], 3));
            check_all(s, |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv2d_same(x, w, b)?;
                project(g, y, 4)
            })
        }
        "conv1x1" => {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(&[3, 2, 5], 5));
            let w = s.add("w", uniform(&[1, 3, 1, 1], 6));
            let b = s.add("b", uniform(&[1], 7));
            check_all(s, |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv2d_same(x, w, b)?;
                project(g, y, 8)
            })
        }
        "relu" => {
            let mut s = ParamStore::new();
            let x = s.add("x", away_from_zero(&[2, 3, 4], 9));
            check_all(s, |g| {
                let x = g.param(x);
                let y = g.relu(x);
                project(g, y, 10)
            })
        }
        "maxpool" => {
            let mut s = ParamStore::new();
            let x = s.add("x", distinct(&[2, 3, 8], 11));
            check_all(s, |g| {
                let x = g.param(x);
                let y = g.maxpool_time(x, 4)?;
                project(g, y, 12)
            })
        }
        "upsample" => {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(&[2, 2, 3], 13));
            check_all(s, |g| {
                let x = g.param(x);
                let y = g.upsample_time(x, 4)?;
                project(g, y, 14)
            })
        }
        "concat_pad_crop_reshape" => {
            let mut s = ParamStore::new();
            let a = s.add("a", uniform(&[1, 2, 5], 15));
            let b = s.add("b", uniform(&[2, 2, 5], 16));
            check_all(s, |g| {
                let (a, b) = (g.param(a), g.param(b));
                let c = g.concat_channels(a, b)?;
                let p = g.pad_time(c, 8)?;
                let q = g.crop_time(p, 4)?;
                let r = g.reshape(q, &[24])?;
                project(g, r, 17)
            })
        }
        "dense" => {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(&[6], 18));
            let w = s.add("w", uniform(&[4, 6], 19));
            let b = s.add("b", uniform(&[4], 20));
            check_all(s, |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.dense(x, w, b)?;
                project(g, y, 21)
            })
        }
        "softmax_xent" => {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(&[2], 22));
            check_all(s, |g| {
                let x = g.param(x);
                g.softmax_xent(x, 1)
            })
        }
        "mse" => {
            let mut s = ParamStore::new();
            let p = s.add("p", uniform(&[1, 2, 4], 23));
            let t = s.add("t", uniform(&[1, 2, 4], 24));
            check_all(s, |g| {
                let (p, t) = (g.param(p), g.param(t));
                g.mse(p, t)
            })
        }
        "scalar_arithmetic" => {
            let mut s = ParamStore::new();
            let a = s.add("a", uniform(&[3], 25));
            let b = s.add("b", uniform(&[3], 26));
            let c = s.add("c", uniform(&[1], 27));
            let d = s.add("d", uniform(&[1], 28));
            check_all(s, |g| {
                let (a, b, c, d) = (g.param(a), g.param(b), g.param(c), g.param(d));
                let ab = g.mul(a, b)?;
                let sum = g.add(ab, a)?;
                let scaled = g.scale(sum, 1.7)?;
                let total = g.sum(scaled)?;
                let m = g.mean(&[c, d, total])?;
                let st = g.stack(&[m, c, d])?;
                project(g, st, 29)
            })
        }
        "pew_rmse_custom_node" => {
            let mut s = ParamStore::new();
            let p = s.add("p", Tensor::from_vec(vec![0.31, 0.62, 0.95, 0.18]));
            check_all(s, |g| {
                let p = g.param(p);
                g.custom_scalar(p, "pew_rmse", |v| {
                    RegressionLoss::PewRmse.value_and_grad(v, &[0.35, 0.50, 0.80, 0.30]).unwrap()
                })
            })
        }
        other => panic!("unknown op case {other}"),
    }
}

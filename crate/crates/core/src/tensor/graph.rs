use super::ops;
use super::{check_finite, shape_err, EngineError, Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    Conv { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    MaxPool { x: NodeId, argmax: Vec<u32> },
    Upsample { x: NodeId, k: usize },
    Concat { a: NodeId, b: NodeId },
    PadTime(NodeId),
    CropTime(NodeId),
    Reshape(NodeId),
    Dense { x: NodeId, w: NodeId, b: NodeId },
    SoftmaxXent { logits: NodeId, target: usize, probs: Vec<f32> },
    Mse { pred: NodeId, target: NodeId },
    Stack(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Scale(NodeId, f32),
    Custom { x: NodeId, grad: Vec<f32> },
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose values live in the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A tape of operations over parameters borrowed from a [`ParamStore`].
///
/// Build the forward pass with the op methods, then call [`Graph::backward`]
/// on a scalar node. A graph is single-use: build a fresh one per batch.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.get(*p),
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// The leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn conv2d_same(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let y = ops::conv2d_same(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Conv { x, w, b }, y, &[x, w, b]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), y, &[x])
    }

    pub fn maxpool_time(&mut self, x: NodeId, k: usize) -> Result<NodeId, EngineError> {
        let (y, argmax) = ops::maxpool_time(self.value(x), k)?;
        Ok(self.push(Op::MaxPool { x, argmax }, y, &[x]))
    }

    pub fn upsample_time(&mut self, x: NodeId, k: usize) -> Result<NodeId, EngineError> {
        let y = ops::upsample_time(self.value(x), k)?;
        Ok(self.push(Op::Upsample { x, k }, y, &[x]))
    }

    /// Concatenates two `[C, H, W]` maps along channels.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let (ca, ha, wa) = self.value(a).dims3("concat")?;
        let (cb, hb, wb) = self.value(b).dims3("concat")?;
        if (ha, wa) != (hb, wb) {
            return Err(shape_err("concat", [ha, wa], [hb, wb]));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let y = Tensor::from_parts(vec![ca + cb, ha, wa], data);
        Ok(self.push(Op::Concat { a, b }, y, &[a, b]))
    }

    /// Appends zeros along time up to `width`.
    pub fn pad_time(&mut self, x: NodeId, width: usize) -> Result<NodeId, EngineError> {
        let (c, h, w) = self.value(x).dims3("pad_time")?;
        if width < w {
            return Err(shape_err("pad_time", format!(">= {w}"), width));
        }
        let mut data = vec![0.0; c * h * width];
        for (src, dst) in self.value(x).data().chunks_exact(w).zip(data.chunks_exact_mut(width)) {
            dst[..w].copy_from_slice(src);
        }
        let y = Tensor::from_parts(vec![c, h, width], data);
        Ok(self.push(Op::PadTime(x), y, &[x]))
    }

    /// Keeps the first `width` time samples.
    pub fn crop_time(&mut self, x: NodeId, width: usize) -> Result<NodeId, EngineError> {
        let (c, h, w) = self.value(x).dims3("crop_time")?;
        if width > w || width == 0 {
            return Err(shape_err("crop_time", format!("1..={w}"), width));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(w)
            .flat_map(|r| r[..width].iter().copied())
            .collect();
        let y = Tensor::from_parts(vec![c, h, width], data);
        Ok(self.push(Op::CropTime(x), y, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, EngineError> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), y, &[x]))
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Dense { x, w, b }, y, &[x, w, b]))
    }

    /// Cross-entropy of `logits` against a class index; a scalar node.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId, EngineError> {
        let (loss, probs) = ops::softmax_xent(self.value(logits), target)?;
        Ok(self.push(Op::SoftmaxXent { logits, target, probs }, Tensor::scalar(loss), &[logits]))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, EngineError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse", p.shape(), t.shape()));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        let y = Tensor::scalar((s / p.len() as f64) as f32);
        check_finite(&y, "mse")?;
        Ok(self.push(Op::Mse { pred, target }, y, &[pred, target]))
    }

    /// Stacks one-element nodes into a vector.
    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId, EngineError> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(shape_err("stack", [1], v.shape()));
            }
            data.push(v.item());
        }
        if data.is_empty() {
            return Err(EngineError::Invalid {
                op: "stack",
                msg: "no inputs".into(),
            });
        }
        Ok(self.push(Op::Stack(xs.to_vec()), Tensor::from_vec(data), xs))
    }

    /// Mean of one-element nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId, EngineError> {
        if xs.is_empty() {
            return Err(EngineError::Invalid {
                op: "mean",
                msg: "no inputs".into(),
            });
        }
        let mut acc = 0.0f64;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(shape_err("mean", [1], v.shape()));
            }
            acc += v.item() as f64;
        }
        let out = Tensor::scalar((acc / xs.len() as f64) as f32);
        Ok(self.push(Op::Mean(xs.to_vec()), out, xs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        check_finite(&out, "add")?;
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        check_finite(&out, "mul")?;
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar(s as f32);
        check_finite(&out, "sum")?;
        Ok(self.push(Op::Sum(x), out, &[x]))
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> Result<NodeId, EngineError> {
        let v = self.value(x);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| a * factor).collect());
        check_finite(&out, "scale")?;
        Ok(self.push(Op::Scale(x, factor), out, &[x]))
    }

    /// A scalar function of `x` whose value and gradient are supplied by the
    /// caller. Used for batch losses defined outside the engine.
    pub fn custom_scalar(&mut self, x: NodeId, op: &'static str, f: impl FnOnce(&[f32]) -> (f32, Vec<f32>)) -> Result<NodeId, EngineError> {
        let (value, grad) = f(self.value(x).data());
        if grad.len() != self.value(x).len() {
            return Err(shape_err(op, self.value(x).len(), grad.len()));
        }
        let out = Tensor::scalar(value);
        check_finite(&out, op)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(EngineError::NonFinite { op });
        }
        Ok(self.push(Op::Custom { x, grad }, out, &[x]))
    }

    /// Reverse pass from a scalar node. Returns one gradient per parameter of
    /// the store; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, EngineError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(EngineError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |id: NodeId, t: Tensor| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => out.get_mut(*p).add_assign(&g),
                Op::Conv { x, w, b } => {
                    let (gx, gw, gb) = ops::conv2d_same_backward(self.value(*x), self.value(*w), self.value(*b), &g)?;
                    send(*x, gx);
                    send(*w, gw);
                    send(*b, gb);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                        .collect();
                    send(*x, Tensor::from_parts(xv.shape().to_vec(), data));
                }
                Op::MaxPool { x, argmax } => {
                    send(*x, ops::maxpool_time_backward(self.value(*x).shape(), argmax, &g));
                }
                Op::Upsample { x, k } => send(*x, ops::upsample_time_backward(&g, *k)),
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    let (ga, gb) = g.data().split_at(na);
                    send(*a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga.to_vec()));
                    send(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb.to_vec()));
                }
                Op::PadTime(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let (w, wp) = (xs[2], g.shape()[2]);
                    let data = g.data().chunks_exact(wp).flat_map(|r| r[..w].iter().copied()).collect();
                    send(*x, Tensor::from_parts(xs, data));
                }
                Op::CropTime(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let (w, wc) = (xs[2], g.shape()[2]);
                    let mut data = vec![0.0; xs.iter().product()];
                    for (src, dst) in g.data().chunks_exact(wc).zip(data.chunks_exact_mut(w)) {
                        dst[..wc].copy_from_slice(src);
                    }
                    send(*x, Tensor::from_parts(xs, data));
                }
                Op::Reshape(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    send(*x, Tensor::from_parts(xs, g.into_data()));
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) = ops::dense_backward(self.value(*x), self.value(*w), &g);
                    send(*x, gx);
                    send(*w, gw);
                    send(*b, gb);
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let d = g.item();
                    let mut data: Vec<f32> = probs.iter().map(|p| p * d).collect();
                    data[*target] -= d;
                    send(*logits, Tensor::from_parts(self.value(*logits).shape().to_vec(), data));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let c = 2.0 * g.item() / p.len() as f32;
                    let dp: Vec<f32> = p.data().iter().zip(t.data()).map(|(a, b)| c * (a - b)).collect();
                    let dt: Vec<f32> = dp.iter().map(|v| -v).collect();
                    send(*pred, Tensor::from_parts(p.shape().to_vec(), dp));
                    send(*target, Tensor::from_parts(t.shape().to_vec(), dt));
                }
                Op::Stack(xs) => {
                    for (x, &d) in xs.iter().zip(g.data()) {
                        send(*x, Tensor::from_parts(self.value(*x).shape().to_vec(), vec![d]));
                    }
                }
                Op::Mean(xs) => {
                    let d = g.item() / xs.len() as f32;
                    for x in xs {
                        send(*x, Tensor::from_parts(self.value(*x).shape().to_vec(), vec![d]));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(vb.data()).map(|(d, v)| d * v).collect();
                    let gb = g.data().iter().zip(va.data()).map(|(d, v)| d * v).collect();
                    send(*a, Tensor::from_parts(va.shape().to_vec(), ga));
                    send(*b, Tensor::from_parts(vb.shape().to_vec(), gb));
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    send(*x, Tensor::full(xv.shape(), g.item()));
                }
                Op::Scale(x, f) => {
                    let data = g.data().iter().map(|d| d * f).collect();
                    send(*x, Tensor::from_parts(g.shape().to_vec(), data));
                }
                Op::Custom { x, grad } => {
                    let d = g.item();
                    let data = grad.iter().map(|v| v * d).collect();
                    send(*x, Tensor::from_parts(self.value(*x).shape().to_vec(), data));
                }
            }
        }
        if !out.is_finite() {
            return Err(EngineError::NonFinite { op: "backward" });
        }
        Ok(out)
    }
}

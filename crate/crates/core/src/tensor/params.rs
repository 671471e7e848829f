use super::{shape_err, EngineError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters plus Adam moment buffers and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub adam: AdamConfig,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), EngineError> {
        if value.shape() != self.values[id.0].shape() {
            return Err(shape_err("param_set", self.values[id.0].shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Clears moments and the step counter, keeping values.
    pub fn reset_optimizer(&mut self) {
        for (m, v) in self.first_moment.iter_mut().zip(&mut self.second_moment) {
            m.data_mut().fill(0.0);
            v.data_mut().fill(0.0);
        }
        self.step = 0;
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f32) -> Result<(), EngineError> {
        if grads.tensors.len() != self.values.len() {
            return Err(shape_err("adam_step", self.values.len(), grads.tensors.len()));
        }
        for (p, g) in self.values.iter().zip(&grads.tensors) {
            if p.shape() != g.shape() {
                return Err(shape_err("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(EngineError::NonFinite { op: "adam_step" });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..self.values.len() {
            let g = grads.tensors[i].data();
            let m = self.first_moment[i].data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = beta1 * *m + (1.0 - beta1) * g;
            }
            let v = self.second_moment[i].data_mut();
            for (v, &g) in v.iter_mut().zip(g) {
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
            let (m, v) = (self.first_moment[i].data(), self.second_moment[i].data());
            let p = self.values[i].data_mut();
            for j in 0..p.len() {
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One gradient tensor per parameter of a [`ParamStore`]; parameters not
/// reached by the loss keep an all-zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn global_norm(&self) -> f32 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f32]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::from_vec(values.to_vec()));
        (s, id)
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let (mut s, id) = store_with(&[1.0, -2.0, 3.5]);
        let g = Gradients::zeros_like(&s);
        s.adam_step(&g, 0.1).unwrap();
        assert_eq!(s.get(id).data(), [1.0, -2.0, 3.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        // bias-corrected first step: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) = lr * sign(g) up to eps
        let (mut s, id) = store_with(&[0.0, 0.0, 0.0]);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).data_mut().copy_from_slice(&[0.5, -3.0, 1e-3]);
        let lr = 0.01;
        s.adam_step(&g, lr).unwrap();
        let p = s.get(id).data();
        for (pv, gv) in p.iter().zip([0.5f32, -3.0, 1e-3]) {
            let expected = -lr * gv / (gv.abs() + 1e-8);
            assert!((pv - expected).abs() < 1e-6, "{pv} vs {expected}");
            assert_eq!(pv.signum(), -gv.signum());
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5f32, -0.75, 0.2];
        let (mut s, id) = store_with(&[0.0, 0.0, 0.0]);
        let loss = |p: &[f32]| -> f32 { p.iter().zip(&target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum() };
        for step in 0..500 {
            let mut g = Gradients::zeros_like(&s);
            let p = s.get(id).data().to_vec();
            for (gi, (a, b)) in g.get_mut(id).data_mut().iter_mut().zip(p.iter().zip(&target)) {
                *gi = a - b;
            }
            // decaying step size lets Adam settle into the minimum
            let lr = 0.1 * (1.0 - step as f32 / 500.0);
            s.adam_step(&g, lr).unwrap();
        }
        assert!(loss(s.get(id).data()) < 1e-6, "{}", loss(s.get(id).data()));
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let (mut s, id) = store_with(&[1.0]);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).data_mut()[0] = f32::NAN;
        assert!(matches!(s.adam_step(&g, 0.1), Err(EngineError::NonFinite { .. })));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn step_counter_increments_once_per_step() {
        let (mut s, _) = store_with(&[1.0]);
        let g = Gradients::zeros_like(&s);
        for k in 1..=5 {
            s.adam_step(&g, 0.1).unwrap();
            assert_eq!(s.step(), k);
        }
    }
}

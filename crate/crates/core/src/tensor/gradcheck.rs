//! Central finite-difference checks of graph gradients.

use rand::Rng;

use super::{EngineError, Graph, NodeId, ParamId, ParamStore};
use crate::rng::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_err(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self, floor: f64) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err(floor).total_cmp(&b.rel_err(floor)))
    }

    pub fn max_rel_err(&self, floor: f64) -> f64 {
        self.worst(floor).map_or(0.0, |e| e.rel_err(floor))
    }
}

/// `n` distinct `(param, element)` pairs drawn uniformly over all scalars.
pub fn sample_elements(store: &ParamStore, n: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let sizes: Vec<(ParamId, usize)> = store.ids().map(|id| (id, store.get(id).len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut r = rng(seed);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < n.min(total) {
        picked.insert(r.random_range(0..total));
    }
    picked
        .into_iter()
        .map(|mut flat| {
            for &(id, len) in &sizes {
                if flat < len {
                    return (id, flat);
                }
                flat -= len;
            }
            unreachable!("index within total")
        })
        .collect()
}

/// Every element of every parameter.
pub fn all_elements(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store.ids().flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i))).collect()
}

/// Compares the tape gradient of `loss` with `(L(x+h) - L(x-h)) / (x+h - (x-h))`
/// for each sampled element. Parameter values are restored bit-exactly.
pub fn gradcheck<E, F>(store: &mut ParamStore, samples: &[(ParamId, usize)], h: f32, loss: F) -> Result<GradCheckReport, E>
where
    E: From<EngineError>,
    F: Fn(&mut Graph<'_>) -> Result<NodeId, E>,
{
    let eval = |store: &ParamStore| -> Result<f32, E> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let mut entries = Vec::with_capacity(samples.len());
    for &(id, i) in samples {
        let x = store.get(id).data()[i];
        let (xp, xm) = (x + h, x - h);
        store.get_mut(id).data_mut()[i] = xp;
        let lp = eval(store)?;
        store.get_mut(id).data_mut()[i] = xm;
        let lm = eval(store)?;
        store.get_mut(id).data_mut()[i] = x;
        entries.push(GradCheckEntry {
            param: store.name(id).to_string(),
            index: i,
            analytic: grads.get(id).data()[i] as f64,
            numeric: (lp as f64 - lm as f64) / (xp as f64 - xm as f64),
        });
    }
    Ok(GradCheckReport { entries })
}

use intrinsic_tensor::Tensor;

use crate::networks::{ParamId, ParamStore};
use crate::{Error, Result};

/// Adam over a fixed subset of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64, betas: [f64; 2]) -> Self {
        let zeros = |id: &ParamId| vec![0.0f32; store.get(*id).len()];
        Self {
            lr,
            beta1: betas[0],
            beta2: betas[1],
            eps: 1e-8,
            t: 0,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// First and second moment buffers, in the order of [`Adam::ids`].
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Result<()> {
        let ok = |b: &[Vec<f32>]| {
            b.len() == self.m.len() && b.iter().zip(&self.m).all(|(a, z)| a.len() == z.len())
        };
        if !ok(&m) || !ok(&v) {
            return Err(Error::Checkpoint(
                "optimizer buffers do not match the model".into(),
            ));
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Apply one update. `grads[k]` belongs to `ids()[k]`; `None` counts as a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor<f32>>]) -> Result<()> {
        assert_eq!(
            grads.len(),
            self.ids.len(),
            "one gradient slot per parameter"
        );
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of {}",
                        store.entry(self.ids[k]).name
                    )));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let step =
            (self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t))) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let eps = (self.eps * (1.0 - self.beta2.powi(t)).sqrt()) as f32;
        for (k, id) in self.ids.iter().enumerate() {
            let p = store.get_mut(*id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let g = grads[k].as_ref().map(|g| g.data());
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

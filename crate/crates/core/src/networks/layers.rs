use intrinsic_tensor::{Real, Var};

use super::params::{ParamBuilder, ParamId, ParamStore, Session};
use crate::Result;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new(
        b: &mut ParamBuilder<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        b.sub(name, |b| Self {
            weight: b.normal("weight", vec![c_out, c_in, k, k]),
            bias: b.zeros("bias", vec![c_out]),
            stride,
            pad: k / 2,
        })
    }

    /// `k x k` convolution with stride 2 and padding 1.
    pub fn down(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        b.sub(name, |b| Self {
            weight: b.normal("weight", vec![c_out, c_in, k, k]),
            bias: b.zeros("bias", vec![c_out]),
            stride: 2,
            pad: 1,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, store: &ParamStore, x: Var) -> Result<Var> {
        let w = s.param(store, self.weight);
        let b = s.param(store, self.bias);
        Ok(s.graph.conv2d(x, w, Some(b), self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        b.sub(name, |b| Self {
            weight: b.normal("weight", vec![d_out, d_in]),
            bias: b.zeros("bias", vec![d_out]),
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, store: &ParamStore, x: Var) -> Result<Var> {
        let w = s.param(store, self.weight);
        let b = s.param(store, self.bias);
        Ok(s.graph.linear(x, w, Some(b))?)
    }
}

/// Dense layers with ReLU between them (not after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(b: &mut ParamBuilder<'_>, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(b, &format!("fc{i}"), d[0], d[1]))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Real>(
        &self,
        s: &mut Session<T>,
        store: &ParamStore,
        mut x: Var,
    ) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(s, store, x)?;
            if i + 1 < self.layers.len() {
                x = s.graph.relu(x);
            }
        }
        Ok(x)
    }
}

/// Per-sample, per-channel standardisation followed by `gamma * x + beta`.
/// `gamma` and `beta` are `[N, C]`.
pub fn adain<T: Real>(s: &mut Session<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = s.graph.instance_norm(x, T::of(NORM_EPS))?;
    Ok(s.graph.channel_affine(n, gamma, beta)?)
}

pub fn instance_norm<T: Real>(s: &mut Session<T>, x: Var) -> Result<Var> {
    Ok(s.graph.instance_norm(x, T::of(NORM_EPS))?)
}

use intrinsic_tensor::{Real, Var};

use super::layers::Conv;
use super::params::{ParamBuilder, ParamStore, Session};
use super::NetConfig;
use crate::Result;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Multi-scale patch discriminator. Scale `k` sees the input average-pooled
/// `k` times and emits an unbounded score map.
#[derive(Clone, Debug)]
pub struct Discriminator {
    scales: Vec<(Vec<Conv>, Conv)>,
}

impl Discriminator {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &NetConfig, in_channels: usize) -> Self {
        let scales = (0..cfg.disc_scales)
            .map(|k| {
                b.sub(&format!("scale{k}"), |b| {
                    let mut ch = in_channels;
                    let mut layers = Vec::with_capacity(cfg.disc_layers_per_scale);
                    for i in 0..cfg.disc_layers_per_scale {
                        let next = cfg.base_channels << i;
                        layers.push(Conv::down(b, &format!("conv{i}"), ch, next, 4));
                        ch = next;
                    }
                    (layers, Conv::new(b, "score", ch, 1, 1, 1))
                })
            })
            .collect();
        Self { scales }
    }

    pub fn forward<T: Real>(
        &self,
        s: &mut Session<T>,
        store: &ParamStore,
        x: Var,
    ) -> Result<Vec<Var>> {
        let mut input = x;
        let mut maps = Vec::with_capacity(self.scales.len());
        for (k, (layers, score)) in self.scales.iter().enumerate() {
            if k > 0 {
                input = s.graph.avg_pool2(input)?;
            }
            let mut h = input;
            for conv in layers {
                h = conv.forward(s, store, h)?;
                h = s.graph.leaky_relu(h, T::of(LEAKY_SLOPE));
            }
            maps.push(score.forward(s, store, h)?);
        }
        Ok(maps)
    }
}

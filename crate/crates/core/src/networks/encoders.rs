use intrinsic_tensor::{Real, Var};

use super::layers::{instance_norm, Conv, Dense};
use super::params::{ParamBuilder, ParamStore, Session};
use super::NetConfig;
use crate::{Error, Result};

fn check_channels<T: Real>(s: &Session<T>, x: Var, expected: usize, what: &str) -> Result<()> {
    let shape = s.graph.shape(x);
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::Dimension(format!(
            "{what} expects [N, {expected}, H, W] input, got {shape:?}"
        )));
    }
    Ok(())
}

/// conv3 -> IN -> ReLU -> conv3 -> IN, plus the identity.
#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResBlock {
    fn new(b: &mut ParamBuilder<'_>, name: &str, ch: usize) -> Self {
        b.sub(name, |b| Self {
            conv1: Conv::new(b, "conv1", ch, ch, 3, 1),
            conv2: Conv::new(b, "conv2", ch, ch, 3, 1),
        })
    }

    fn forward<T: Real>(&self, s: &mut Session<T>, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, store, x)?;
        let h = instance_norm(s, h)?;
        let h = s.graph.relu(h);
        let h = self.conv2.forward(s, store, h)?;
        let h = instance_norm(s, h)?;
        Ok(s.graph.add(x, h)?)
    }
}

/// Maps an image to a spatial content code at a quarter of its resolution.
#[derive(Clone, Debug)]
pub struct ContentEncoder {
    in_channels: usize,
    stem: Conv,
    down: Vec<Conv>,
    res: Vec<ResBlock>,
}

impl ContentEncoder {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &NetConfig, in_channels: usize) -> Self {
        let base = cfg.base_channels;
        let stem = Conv::new(b, "stem", in_channels, base, 7, 1);
        let widths = [base, 2 * base, cfg.content_channels];
        let down = (0..2)
            .map(|i| Conv::down(b, &format!("down{i}"), widths[i], widths[i + 1], 4))
            .collect();
        let res = (0..cfg.n_res_blocks)
            .map(|i| ResBlock::new(b, &format!("res{i}"), cfg.content_channels))
            .collect();
        Self {
            in_channels,
            stem,
            down,
            res,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, store: &ParamStore, x: Var) -> Result<Var> {
        check_channels(s, x, self.in_channels, "content encoder")?;
        let mut h = self.stem.forward(s, store, x)?;
        h = instance_norm(s, h)?;
        h = s.graph.relu(h);
        for conv in &self.down {
            h = conv.forward(s, store, h)?;
            h = instance_norm(s, h)?;
            h = s.graph.relu(h);
        }
        for block in &self.res {
            h = block.forward(s, store, h)?;
        }
        Ok(h)
    }
}

/// Maps an image to a flat prior code. No normalisation layers, so global
/// colour and intensity statistics survive to the pooled features.
#[derive(Clone, Debug)]
pub struct PriorEncoder {
    in_channels: usize,
    stem: Conv,
    down: Vec<Conv>,
    head: Dense,
}

impl PriorEncoder {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &NetConfig, in_channels: usize) -> Self {
        let base = cfg.base_channels;
        let stem = Conv::new(b, "stem", in_channels, base, 7, 1);
        let mut ch = base;
        let mut down = Vec::with_capacity(cfg.n_down_prior);
        for i in 0..cfg.n_down_prior {
            let next = (ch * 2).min(4 * base);
            down.push(Conv::down(b, &format!("down{i}"), ch, next, 4));
            ch = next;
        }
        let head = Dense::new(b, "head", ch, cfg.prior_dim);
        Self {
            in_channels,
            stem,
            down,
            head,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, store: &ParamStore, x: Var) -> Result<Var> {
        check_channels(s, x, self.in_channels, "prior encoder")?;
        let mut h = self.stem.forward(s, store, x)?;
        h = s.graph.relu(h);
        for conv in &self.down {
            h = conv.forward(s, store, h)?;
            h = s.graph.relu(h);
        }
        let pooled = s.graph.global_avg_pool(h)?;
        self.head.forward(s, store, pooled)
    }
}

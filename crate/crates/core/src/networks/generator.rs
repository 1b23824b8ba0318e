use intrinsic_tensor::{Real, Var};

use super::layers::{adain, instance_norm, Conv, Mlp};
use super::params::{ParamBuilder, ParamStore, Session};
use super::NetConfig;
use crate::{Error, Result};

/// Decodes a content code plus a prior code into an image of one domain.
///
/// The prior code drives an MLP whose output supplies `(gamma, beta)` for
/// every AdaIN layer of the residual blocks. Two nearest-neighbour upsampling
/// stages restore the input resolution and a sigmoid maps the output into
/// `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Generator {
    content_channels: usize,
    prior_dim: usize,
    mlp: Mlp,
    res: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    out: Conv,
}

impl Generator {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &NetConfig, out_channels: usize) -> Self {
        let c = cfg.content_channels;
        let mlp = b.sub("mlp", |b| {
            Mlp::new(
                b,
                &[
                    cfg.prior_dim,
                    cfg.mlp_width,
                    cfg.mlp_width,
                    cfg.adain_params(),
                ],
            )
        });
        let res = (0..cfg.n_res_blocks)
            .map(|i| {
                b.sub(&format!("res{i}"), |b| {
                    (
                        Conv::new(b, "conv1", c, c, 3, 1),
                        Conv::new(b, "conv2", c, c, 3, 1),
                    )
                })
            })
            .collect();
        let widths = [c, 2 * cfg.base_channels, cfg.base_channels];
        let up = (0..2)
            .map(|i| Conv::new(b, &format!("up{i}"), widths[i], widths[i + 1], 3, 1))
            .collect();
        let out = Conv::new(b, "out", cfg.base_channels, out_channels, 7, 1);
        Self {
            content_channels: c,
            prior_dim: cfg.prior_dim,
            mlp,
            res,
            up,
            out,
        }
    }

    /// `content: [N, c_ch, h, w]`, `prior: [N, d_p]` to `[N, C_out, 4h, 4w]`.
    pub fn forward<T: Real>(
        &self,
        s: &mut Session<T>,
        store: &ParamStore,
        content: Var,
        prior: Var,
    ) -> Result<Var> {
        let cs = s.graph.shape(content).to_vec();
        let ps = s.graph.shape(prior).to_vec();
        if cs.len() != 4 || cs[1] != self.content_channels || ps != [cs[0], self.prior_dim] {
            return Err(Error::Dimension(format!(
                "generator expects content [N, {}, h, w] and prior [N, {}], got {cs:?} and {ps:?}",
                self.content_channels, self.prior_dim
            )));
        }
        let c = self.content_channels;
        let params = self.mlp.forward(s, store, prior)?;
        let mut h = content;
        for (b, (conv1, conv2)) in self.res.iter().enumerate() {
            let mut t = h;
            for (j, conv) in [conv1, conv2].into_iter().enumerate() {
                let off = (b * 2 + j) * 2 * c;
                let gamma = s.graph.slice_cols(params, off, c)?;
                let gamma = s.graph.add_scalar(gamma, T::one());
                let beta = s.graph.slice_cols(params, off + c, c)?;
                t = conv.forward(s, store, t)?;
                t = adain(s, t, gamma, beta)?;
                if j == 0 {
                    t = s.graph.relu(t);
                }
            }
            h = s.graph.add(h, t)?;
        }
        for conv in &self.up {
            h = s.graph.upsample2(h)?;
            h = conv.forward(s, store, h)?;
            h = instance_norm(s, h)?;
            h = s.graph.relu(h);
        }
        let logits = self.out.forward(s, store, h)?;
        Ok(s.graph.sigmoid(logits))
    }
}

//! Learnable functions: content and prior encoders, the prior mapping MLP,
//! AdaIN generators and multi-scale discriminators.

mod bundle;
pub mod checkpoint;
mod discriminator;
mod encoders;
mod generator;
pub mod layers;
mod params;

pub use bundle::ModelBundle;
pub use discriminator::Discriminator;
pub use encoders::{ContentEncoder, PriorEncoder};
pub use generator::Generator;
pub use layers::{adain, Mlp};
pub use params::{ParamBuilder, ParamEntry, ParamId, ParamStore, Session};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Image,
    Reflectance,
    Shading,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Image, Domain::Reflectance, Domain::Shading];

    pub fn channels(self) -> usize {
        match self {
            Domain::Shading => 1,
            _ => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Domain::Image => "i",
            Domain::Reflectance => "r",
            Domain::Shading => "s",
        }
    }
}

/// Identifies one sub-network of a [`ModelBundle`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Network {
    Content(Domain),
    Prior(Domain),
    Generator(Domain),
    Mapping,
    Discriminator(Domain),
}

impl Network {
    pub fn all() -> Vec<Network> {
        let mut out = Vec::with_capacity(12);
        out.extend(Domain::ALL.map(Network::Content));
        out.extend(Domain::ALL.map(Network::Prior));
        out.extend(Domain::ALL.map(Network::Generator));
        out.push(Network::Mapping);
        out.push(Network::Discriminator(Domain::Reflectance));
        out.push(Network::Discriminator(Domain::Shading));
        out
    }

    pub fn name(self) -> &'static str {
        use Domain::*;
        match self {
            Network::Content(Image) => "content_i",
            Network::Content(Reflectance) => "content_r",
            Network::Content(Shading) => "content_s",
            Network::Prior(Image) => "prior_i",
            Network::Prior(Reflectance) => "prior_r",
            Network::Prior(Shading) => "prior_s",
            Network::Generator(Image) => "gen_i",
            Network::Generator(Reflectance) => "gen_r",
            Network::Generator(Shading) => "gen_s",
            Network::Mapping => "mapping",
            Network::Discriminator(Image) => "disc_i",
            Network::Discriminator(Reflectance) => "disc_r",
            Network::Discriminator(Shading) => "disc_s",
        }
    }

    pub fn from_name(name: &str) -> Option<Network> {
        Network::all().into_iter().find(|n| n.name() == name)
    }

    pub fn is_discriminator(self) -> bool {
        matches!(self, Network::Discriminator(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub base_channels: usize,
    pub content_channels: usize,
    pub prior_dim: usize,
    pub n_res_blocks: usize,
    pub n_down_content: usize,
    pub n_down_prior: usize,
    pub mlp_width: usize,
    pub disc_scales: usize,
    pub disc_layers_per_scale: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            content_channels: 64,
            prior_dim: 8,
            n_res_blocks: 2,
            n_down_content: 2,
            n_down_prior: 3,
            mlp_width: 32,
            disc_scales: 3,
            disc_layers_per_scale: 3,
        }
    }
}

impl NetConfig {
    /// Small widths for fast tests on 16x16 images.
    pub fn tiny() -> Self {
        Self {
            base_channels: 4,
            content_channels: 8,
            prior_dim: 3,
            n_res_blocks: 1,
            n_down_content: 2,
            n_down_prior: 2,
            mlp_width: 6,
            disc_scales: 2,
            disc_layers_per_scale: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("base_channels", self.base_channels),
            ("content_channels", self.content_channels),
            ("prior_dim", self.prior_dim),
            ("n_res_blocks", self.n_res_blocks),
            ("n_down_prior", self.n_down_prior),
            ("mlp_width", self.mlp_width),
            ("disc_scales", self.disc_scales),
            ("disc_layers_per_scale", self.disc_layers_per_scale),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("net.{name} must be at least 1")));
        }
        if self.n_down_content != 2 {
            return Err(Error::Config(format!(
                "net.n_down_content is fixed at 2, got {}",
                self.n_down_content
            )));
        }
        Ok(())
    }

    /// Total stride of the content encoder.
    pub fn content_stride(&self) -> usize {
        1 << self.n_down_content
    }

    /// Number of AdaIN parameters the generator MLP emits per sample.
    pub fn adain_params(&self) -> usize {
        self.n_res_blocks * 2 * 2 * self.content_channels
    }

    /// Checks an image of `height x width` can pass through every network.
    pub fn check_image_dims(&self, height: usize, width: usize) -> Result<()> {
        let stride = self.content_stride();
        if height < 8 || width < 8 || height % stride != 0 || width % stride != 0 {
            return Err(Error::Dimension(format!(
                "image {height}x{width} must be at least 8x8 and divisible by {stride}"
            )));
        }
        let pool = 1usize << (self.disc_scales - 1);
        let min_side = pool << self.disc_layers_per_scale;
        if height % pool != 0 || width % pool != 0 || height < min_side || width < min_side {
            return Err(Error::Dimension(format!(
                "image {height}x{width} must be divisible by {pool} and at least {min_side} on each side \
                 for {} discriminator scales of {} layers",
                self.disc_scales, self.disc_layers_per_scale
            )));
        }
        Ok(())
    }
}

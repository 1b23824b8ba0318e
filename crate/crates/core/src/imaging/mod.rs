//! Image data model, synthetic scenes, PNG IO and unpaired sampling.

mod image;
pub mod io;
mod sampler;
pub mod synth;

pub use image::{compose_image, from_batch, to_batch, Image};
pub use sampler::{sample_batch, Batch, SamplerState};
pub use synth::{generate_scene, generate_synthetic_collections, SceneTriple, SynthConfig};

use crate::{Error, Result};

/// Three independently gathered image lists with no correspondence between
/// them. This is the only data the trainer sees.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnpairedCollections {
    inputs: Vec<Image>,
    reflectances: Vec<Image>,
    shadings: Vec<Image>,
}

impl UnpairedCollections {
    pub fn new(inputs: Vec<Image>, reflectances: Vec<Image>, shadings: Vec<Image>) -> Self {
        Self {
            inputs,
            reflectances,
            shadings,
        }
    }

    pub fn inputs(&self) -> &[Image] {
        &self.inputs
    }

    pub fn reflectances(&self) -> &[Image] {
        &self.reflectances
    }

    pub fn shadings(&self) -> &[Image] {
        &self.shadings
    }

    pub fn sizes(&self) -> [usize; 3] {
        [
            self.inputs.len(),
            self.reflectances.len(),
            self.shadings.len(),
        ]
    }

    /// Keep at most `max` images of each list.
    pub fn truncated(mut self, max: usize) -> Self {
        self.inputs.truncate(max);
        self.reflectances.truncate(max);
        self.shadings.truncate(max);
        self
    }

    /// Checks the lists are non-empty, channel counts match their domain and
    /// every image shares the same size.
    pub fn validate(&self) -> Result<(usize, usize)> {
        let lists = [
            ("inputs", &self.inputs, 3),
            ("reflectances", &self.reflectances, 3),
            ("shadings", &self.shadings, 1),
        ];
        let mut dims = None;
        for (name, list, channels) in lists {
            if list.is_empty() {
                return Err(Error::Config(format!("collection `{name}` is empty")));
            }
            for im in list.iter() {
                if im.channels() != channels {
                    return Err(Error::Dimension(format!(
                        "{name} must have {channels} channels, found {}",
                        im.describe()
                    )));
                }
                let hw = (im.height(), im.width());
                if *dims.get_or_insert(hw) != hw {
                    return Err(Error::Dimension(format!(
                        "{name} mixes image sizes {:?} and {hw:?}",
                        dims.unwrap()
                    )));
                }
            }
        }
        Ok(dims.expect("lists are non-empty"))
    }
}

use intrinsic_tensor::{Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamBuilder, ParamStore, Session};
use super::{
    ContentEncoder, Discriminator, Domain, Generator, Mlp, NetConfig, Network, PriorEncoder,
};
use crate::imaging::{to_batch, Image};
use crate::{Error, Result};

/// All networks of the model together with their parameters.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    config: NetConfig,
    store: ParamStore,
    content: [ContentEncoder; 3],
    prior: [PriorEncoder; 3],
    generators: [Generator; 3],
    mapping: Mlp,
    disc_r: Discriminator,
    disc_s: Discriminator,
}

impl ModelBundle {
    /// Freshly initialised networks. Parameters depend only on `config` and
    /// `seed`.
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Creation order must follow `Network::all()` so the store stays grouped.
        let content = Domain::ALL.map(|d| {
            ContentEncoder::new(
                &mut ParamBuilder::new(&mut store, Network::Content(d), &mut rng),
                config,
                d.channels(),
            )
        });
        let prior = Domain::ALL.map(|d| {
            PriorEncoder::new(
                &mut ParamBuilder::new(&mut store, Network::Prior(d), &mut rng),
                config,
                d.channels(),
            )
        });
        let generators = Domain::ALL.map(|d| {
            Generator::new(
                &mut ParamBuilder::new(&mut store, Network::Generator(d), &mut rng),
                config,
                d.channels(),
            )
        });
        let d = config.prior_dim;
        let w = config.mlp_width;
        let mapping = Mlp::new(
            &mut ParamBuilder::new(&mut store, Network::Mapping, &mut rng),
            &[d, w, w, 2 * d],
        );
        let disc_r = Discriminator::new(
            &mut ParamBuilder::new(
                &mut store,
                Network::Discriminator(Domain::Reflectance),
                &mut rng,
            ),
            config,
            3,
        );
        let disc_s = Discriminator::new(
            &mut ParamBuilder::new(
                &mut store,
                Network::Discriminator(Domain::Shading),
                &mut rng,
            ),
            config,
            1,
        );
        Ok(Self {
            config: config.clone(),
            store,
            content,
            prior,
            generators,
            mapping,
            disc_r,
            disc_s,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replace every parameter value. Names and shapes must match.
    pub fn load_params(&mut self, other: ParamStore) -> Result<()> {
        if other.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.store.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.store.entries().iter().zip(other.entries()) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    theirs.name,
                    theirs.tensor.shape(),
                    mine.name,
                    mine.tensor.shape()
                )));
            }
        }
        self.store = other;
        Ok(())
    }

    pub fn encode_content<T: Real>(
        &self,
        s: &mut Session<T>,
        domain: Domain,
        x: Var,
    ) -> Result<Var> {
        self.content[domain.index()].forward(s, &self.store, x)
    }

    pub fn encode_prior<T: Real>(&self, s: &mut Session<T>, domain: Domain, x: Var) -> Result<Var> {
        self.prior[domain.index()].forward(s, &self.store, x)
    }

    /// Split an image prior code into reflectance and shading prior codes.
    pub fn map_priors<T: Real>(&self, s: &mut Session<T>, z: Var) -> Result<(Var, Var)> {
        let d = self.config.prior_dim;
        let shape = s.graph.shape(z);
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::Dimension(format!(
                "mapping expects [N, {d}], got {shape:?}"
            )));
        }
        let out = self.mapping.forward(s, &self.store, z)?;
        let zr = s.graph.slice_cols(out, 0, d)?;
        let zs = s.graph.slice_cols(out, d, d)?;
        Ok((zr, zs))
    }

    pub fn generate<T: Real>(
        &self,
        s: &mut Session<T>,
        domain: Domain,
        content: Var,
        prior: Var,
    ) -> Result<Var> {
        self.generators[domain.index()].forward(s, &self.store, content, prior)
    }

    /// Score maps, one per scale. Only reflectance and shading have a
    /// discriminator.
    pub fn discriminate<T: Real>(
        &self,
        s: &mut Session<T>,
        domain: Domain,
        x: Var,
    ) -> Result<Vec<Var>> {
        match domain {
            Domain::Reflectance => self.disc_r.forward(s, &self.store, x),
            Domain::Shading => self.disc_s.forward(s, &self.store, x),
            Domain::Image => Err(Error::Dimension(
                "natural images have no discriminator".into(),
            )),
        }
    }

    /// `(R, S)` prediction graph for a batch of images.
    pub fn decompose_vars<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<(Var, Var)> {
        let c = self.encode_content(s, Domain::Image, x)?;
        let z = self.encode_prior(s, Domain::Image, x)?;
        let (zr, zs) = self.map_priors(s, z)?;
        let r = self.generate(s, Domain::Reflectance, c, zr)?;
        let sh = self.generate(s, Domain::Shading, c, zs)?;
        Ok((r, sh))
    }

    /// Decompose every image, evaluated one at a time.
    pub fn decompose_all(&self, images: &[Image]) -> Result<Vec<(Image, Image)>> {
        images.iter().map(|im| self.decompose(im)).collect()
    }

    pub fn decompose(&self, image: &Image) -> Result<(Image, Image)> {
        if image.channels() != 3 {
            return Err(Error::Dimension(format!(
                "decompose expects RGB, got {}",
                image.describe()
            )));
        }
        self.config
            .check_image_dims(image.height(), image.width())?;
        let mut s = Session::<f32>::inference();
        let x = s.input(image.to_tensor());
        let (r, sh) = self.decompose_vars(&mut s, x)?;
        Ok((
            Image::from_tensor(s.value(r), 0)?,
            Image::from_tensor(s.value(sh), 0)?,
        ))
    }

    /// Content code of one image as `[1, c_ch, H/4, W/4]`.
    pub fn content_code(&self, domain: Domain, image: &Image) -> Result<Tensor<f32>> {
        let mut s = Session::<f32>::inference();
        let x = s.input(to_batch(std::slice::from_ref(image))?);
        let c = self.encode_content(&mut s, domain, x)?;
        Ok(s.value(c).clone())
    }

    /// Prior code of one image as `[1, d_p]`.
    pub fn prior_code(&self, domain: Domain, image: &Image) -> Result<Tensor<f32>> {
        let mut s = Session::<f32>::inference();
        let x = s.input(to_batch(std::slice::from_ref(image))?);
        let z = self.encode_prior(&mut s, domain, x)?;
        Ok(s.value(z).clone())
    }
}

use intrinsic_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::imaging::{to_batch, Batch};
use crate::losses::{
    content_consistency_loss, image_recon_loss, kld_loss, lsgan_d_loss, lsgan_g_loss,
    physical_loss, prior_recon_loss, reflectance_smoothness_loss, total_generator_objective,
    weighted_total, GeneratorTerms,
};
use crate::networks::{Domain, ModelBundle, Session};
use crate::{Error, Result};

/// The three training batches as `[N, C, H, W]` tensors.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    pub inputs: Tensor<f32>,
    pub reflectances: Tensor<f32>,
    pub shadings: Tensor<f32>,
}

impl BatchTensors {
    pub fn from_batch(batch: &Batch) -> Result<Self> {
        Ok(Self {
            inputs: to_batch(&batch.inputs)?,
            reflectances: to_batch(&batch.reflectances)?,
            shadings: to_batch(&batch.shadings)?,
        })
    }
}

/// Every term of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub generator: GeneratorTerms<f64>,
    pub generator_total: f64,
    pub discriminator: f64,
    /// Median of `|I - R S|` over the input batch.
    pub physical_median: f64,
}

/// Generator-side graph of one step, short of the adversarial term.
pub struct GeneratorForward {
    pub session: Session<f32>,
    pub inputs: Var,
    pub reflectance: Var,
    pub shading: Var,
    terms: GeneratorTerms<Option<Var>>,
}

impl GeneratorForward {
    pub fn fake_reflectance(&self) -> &Tensor<f32> {
        self.session.value(self.reflectance)
    }

    pub fn fake_shading(&self) -> &Tensor<f32> {
        self.session.value(self.shading)
    }
}

fn median_abs_residual(image: &Tensor<f32>, r: &Tensor<f32>, s: &Tensor<f32>) -> Result<f64> {
    let (n, c, h, w) = image.dims4()?;
    let plane = h * w;
    let mut res: Vec<f64> = Vec::with_capacity(image.len());
    for b in 0..n {
        for ch in 0..c {
            for i in 0..plane {
                let k = (b * c + ch) * plane + i;
                let prod = r.data()[k] as f64 * s.data()[b * plane + i] as f64;
                res.push((image.data()[k] as f64 - prod).abs());
            }
        }
    }
    Ok(median(&mut res))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Build the generator-side graph: decomposition of the inputs, the
/// re-encoded content codes, the three auto-encoder streams and the
/// prior-code reconstructions. Discriminators are not touched.
pub fn generator_forward(
    bundle: &ModelBundle,
    cfg: &TrainConfig,
    batch: &BatchTensors,
    mut session: Session<f32>,
) -> Result<GeneratorForward> {
    let s = &mut session;
    let weights = cfg.effective_weights();
    let x_i = s.input(batch.inputs.clone());
    let x_r = s.input(batch.reflectances.clone());
    let x_s = s.input(batch.shadings.clone());

    // Decomposition path.
    let c_i = bundle.encode_content(s, Domain::Image, x_i)?;
    let z_i = bundle.encode_prior(s, Domain::Image, x_i)?;
    let (z_ri, z_si) = bundle.map_priors(s, z_i)?;
    let r_i = bundle.generate(s, Domain::Reflectance, c_i, z_ri)?;
    let s_i = bundle.generate(s, Domain::Shading, c_i, z_si)?;

    // Content consistency between the input and its decomposition.
    let c_ri = bundle.encode_content(s, Domain::Reflectance, r_i)?;
    let c_si = bundle.encode_content(s, Domain::Shading, s_i)?;
    let content = content_consistency_loss(&mut s.graph, c_i, c_ri, c_si)?;

    // Mapped prior codes against codes of real reflectances and shadings.
    let z_r = bundle.encode_prior(s, Domain::Reflectance, x_r)?;
    let z_s = bundle.encode_prior(s, Domain::Shading, x_s)?;
    let kl_r = kld_loss(&mut s.graph, z_ri, z_r)?;
    let kl_s = kld_loss(&mut s.graph, z_si, z_s)?;
    let kl = s.graph.add(kl_r, kl_s)?;

    // Auto-encoder streams.
    let c_r = bundle.encode_content(s, Domain::Reflectance, x_r)?;
    let c_s = bundle.encode_content(s, Domain::Shading, x_s)?;
    let rec_i = bundle.generate(s, Domain::Image, c_i, z_i)?;
    let rec_r = bundle.generate(s, Domain::Reflectance, c_r, z_r)?;
    let rec_s = bundle.generate(s, Domain::Shading, c_s, z_s)?;
    let mut image_recon = image_recon_loss(&mut s.graph, x_i, rec_i)?;
    for (x, rec) in [(x_r, rec_r), (x_s, rec_s)] {
        let l = image_recon_loss(&mut s.graph, x, rec)?;
        image_recon = s.graph.add(image_recon, l)?;
    }

    // Prior codes recovered from the reconstructions; the encoded codes act
    // as fixed samples.
    let mut prior_recon: Option<Var> = None;
    for (domain, z, rec) in [
        (Domain::Image, z_i, rec_i),
        (Domain::Reflectance, z_r, rec_r),
        (Domain::Shading, z_s, rec_s),
    ] {
        let z_rec = bundle.encode_prior(s, domain, rec)?;
        let target = s.graph.detach(z);
        let l = prior_recon_loss(&mut s.graph, target, z_rec)?;
        prior_recon = Some(match prior_recon {
            Some(acc) => s.graph.add(acc, l)?,
            None => l,
        });
    }

    let physical = physical_loss(&mut s.graph, x_i, r_i, s_i)?;
    let smoothness = if weights.smoothness > 0.0 {
        Some(reflectance_smoothness_loss(
            &mut s.graph,
            r_i,
            x_i,
            &cfg.smoothness_sigma,
        )?)
    } else {
        None
    };

    Ok(GeneratorForward {
        session,
        inputs: x_i,
        reflectance: r_i,
        shading: s_i,
        terms: GeneratorTerms {
            adversarial: None,
            content: Some(content),
            kl: Some(kl),
            image_recon: Some(image_recon),
            prior_recon,
            physical: Some(physical),
            smoothness,
        },
    })
}

/// One discriminator update on real batches against detached fakes. Returns
/// the discriminator loss before the update.
pub fn discriminator_update(
    bundle: &mut ModelBundle,
    adam: &mut Adam,
    batch: &BatchTensors,
    fake_r: &Tensor<f32>,
    fake_s: &Tensor<f32>,
) -> Result<f64> {
    let mut s = Session::<f32>::new(|n| n.is_discriminator());
    let loss = discriminator_loss(bundle, &mut s, batch, fake_r, fake_s)?;
    let value = s.value(loss).item().expect("scalar") as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss = {value}")));
    }
    let grads = s.graph.backward(loss)?;
    let g: Vec<Option<Tensor<f32>>> = adam
        .ids()
        .iter()
        .map(|&id| s.param_grad(&grads, id).cloned())
        .collect();
    adam.step(bundle.store_mut(), &g)?;
    Ok(value)
}

fn discriminator_loss(
    bundle: &ModelBundle,
    s: &mut Session<f32>,
    batch: &BatchTensors,
    fake_r: &Tensor<f32>,
    fake_s: &Tensor<f32>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (domain, real, fake) in [
        (Domain::Reflectance, &batch.reflectances, fake_r),
        (Domain::Shading, &batch.shadings, fake_s),
    ] {
        let real = s.input(real.clone());
        let fake = s.input(fake.clone());
        let sr = bundle.discriminate(s, domain, real)?;
        let sf = bundle.discriminate(s, domain, fake)?;
        let l = lsgan_d_loss(&mut s.graph, &sr, &sf)?;
        total = Some(match total {
            Some(t) => s.graph.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("two domains"))
}

/// Attach the adversarial term using the current discriminators.
fn finish_generator(
    bundle: &ModelBundle,
    cfg: &TrainConfig,
    fwd: &mut GeneratorForward,
) -> Result<(Var, GeneratorTerms<f64>)> {
    let s = &mut fwd.session;
    let sr = bundle.discriminate(s, Domain::Reflectance, fwd.reflectance)?;
    let ss = bundle.discriminate(s, Domain::Shading, fwd.shading)?;
    let adv_r = lsgan_g_loss(&mut s.graph, &sr)?;
    let adv_s = lsgan_g_loss(&mut s.graph, &ss)?;
    let adversarial = s.graph.add(adv_r, adv_s)?;
    fwd.terms.adversarial = Some(adversarial);
    let zero = s.graph.constant(Tensor::scalar(0.0));
    let vars = fwd.terms.map(|v| v.unwrap_or(zero));
    let values = vars.map(|v| s.value(v).item().expect("scalar") as f64);
    let total = weighted_total(&mut s.graph, &vars, &cfg.effective_weights())?;
    Ok((total, values))
}

/// Evaluate every term without updating anything.
pub fn forward_pass(
    bundle: &ModelBundle,
    cfg: &TrainConfig,
    batch: &BatchTensors,
) -> Result<TermValues> {
    let mut fwd = generator_forward(bundle, cfg, batch, Session::inference())?;
    let (total, generator) = finish_generator(bundle, cfg, &mut fwd)?;
    let generator_total = total_generator_objective(&generator, &cfg.effective_weights())?;
    debug_assert!((generator_total - fwd.session.value(total).data()[0] as f64).abs() < 1e-3);
    let mut ds = Session::<f32>::inference();
    let d = discriminator_loss(
        bundle,
        &mut ds,
        batch,
        fwd.fake_reflectance(),
        fwd.fake_shading(),
    )?;
    let discriminator = ds.value(d).item().expect("scalar") as f64;
    if !discriminator.is_finite() {
        return Err(Error::NonFinite(format!(
            "discriminator loss = {discriminator}"
        )));
    }
    Ok(TermValues {
        generator,
        generator_total,
        discriminator,
        physical_median: median_abs_residual(
            &batch.inputs,
            fwd.fake_reflectance(),
            fwd.fake_shading(),
        )?,
    })
}

/// One discriminator update followed by one update of every other network.
pub fn train_step(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    adam_g: &mut Adam,
    adam_d: &mut Adam,
    batch: &BatchTensors,
) -> Result<TermValues> {
    let mut fwd = generator_forward(bundle, cfg, batch, Session::new(|n| !n.is_discriminator()))?;
    let physical_median =
        median_abs_residual(&batch.inputs, fwd.fake_reflectance(), fwd.fake_shading())?;
    let fake_r = fwd.fake_reflectance().clone();
    let fake_s = fwd.fake_shading().clone();
    let discriminator = discriminator_update(bundle, adam_d, batch, &fake_r, &fake_s)?;

    let (total, generator) = finish_generator(bundle, cfg, &mut fwd)?;
    let generator_total = total_generator_objective(&generator, &cfg.effective_weights())?;
    let grads = fwd.session.graph.backward(total)?;
    let g: Vec<Option<Tensor<f32>>> = adam_g
        .ids()
        .iter()
        .map(|&id| fwd.session.param_grad(&grads, id).cloned())
        .collect();
    adam_g.step(bundle.store_mut(), &g)?;
    Ok(TermValues {
        generator,
        generator_total,
        discriminator,
        physical_median,
    })
}

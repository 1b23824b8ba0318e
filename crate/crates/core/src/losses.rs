//! Training objective terms, built as autodiff graph expressions.
//!
//! Every L1 term reduces by the mean over elements.

use intrinsic_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to fitted variances in [`kld_loss`].
pub const VAR_FLOOR: f64 = 1e-6;
/// Added inside logarithms of predicted images.
pub const LOG_EPS: f64 = 1e-6;
/// Added to the channel sum when computing chromaticity.
pub const CHROMA_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub content: f64,
    pub kl: f64,
    pub image_recon: f64,
    pub prior_recon: f64,
    pub physical: f64,
    pub smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 10.0,
            kl: 0.1,
            image_recon: 10.0,
            prior_recon: 0.1,
            physical: 5.0,
            smoothness: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("content", self.content),
            ("kl", self.kl),
            ("image_recon", self.image_recon),
            ("prior_recon", self.prior_recon),
            ("physical", self.physical),
            ("smoothness", self.smoothness),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "weights.{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Standard deviations of the diagonal feature covariance used by
/// [`reflectance_smoothness_loss`], ordered `(p_x, p_y, intensity, r1, r2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SmoothnessSigma(pub [f64; 5]);

impl Default for SmoothnessSigma {
    fn default() -> Self {
        Self([0.1, 0.1, 0.03, 0.01, 0.01])
    }
}

impl SmoothnessSigma {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "smoothness sigma entries must be positive, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// Per-term values of the generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms<V> {
    pub adversarial: V,
    pub content: V,
    pub kl: V,
    pub image_recon: V,
    pub prior_recon: V,
    pub physical: V,
    pub smoothness: V,
}

impl<V: Copy> GeneratorTerms<V> {
    pub const NAMES: [&'static str; 7] = [
        "adversarial",
        "content",
        "kl",
        "image_recon",
        "prior_recon",
        "physical",
        "smoothness",
    ];

    pub fn to_array(&self) -> [V; 7] {
        [
            self.adversarial,
            self.content,
            self.kl,
            self.image_recon,
            self.prior_recon,
            self.physical,
            self.smoothness,
        ]
    }

    pub fn map<U>(&self, mut f: impl FnMut(V) -> U) -> GeneratorTerms<U> {
        GeneratorTerms {
            adversarial: f(self.adversarial),
            content: f(self.content),
            kl: f(self.kl),
            image_recon: f(self.image_recon),
            prior_recon: f(self.prior_recon),
            physical: f(self.physical),
            smoothness: f(self.smoothness),
        }
    }
}

fn weight_array(w: &LossWeights) -> [f64; 7] {
    [
        1.0,
        w.content,
        w.kl,
        w.image_recon,
        w.prior_recon,
        w.physical,
        w.smoothness,
    ]
}

/// Weighted sum of already evaluated terms. Any non-finite term is an error
/// naming that term.
pub fn total_generator_objective(parts: &GeneratorTerms<f64>, w: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for ((name, v), k) in GeneratorTerms::<f64>::NAMES
        .iter()
        .zip(parts.to_array())
        .zip(weight_array(w))
    {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term `{name}` = {v}")));
        }
        total += k * v;
    }
    Ok(total)
}

/// Graph form of [`total_generator_objective`]. Terms with zero weight are
/// left out of the graph.
pub fn weighted_total<T: Real>(
    g: &mut Graph<T>,
    parts: &GeneratorTerms<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (v, k) in parts.to_array().into_iter().zip(weight_array(w)) {
        if k == 0.0 {
            continue;
        }
        let term = if k == 1.0 { v } else { g.scale(v, T::of(k)) };
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero()))))
}

/// `mean |a - b|`.
pub fn l1_mean<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `mean |c_r - c| + mean |c_s - c|`.
pub fn content_consistency_loss<T: Real>(
    g: &mut Graph<T>,
    c: Var,
    c_r: Var,
    c_s: Var,
) -> Result<Var> {
    let a = l1_mean(g, c_r, c)?;
    let b = l1_mean(g, c_s, c)?;
    Ok(g.add(a, b)?)
}

pub fn image_recon_loss<T: Real>(g: &mut Graph<T>, x: Var, x_rec: Var) -> Result<Var> {
    l1_mean(g, x_rec, x)
}

pub fn prior_recon_loss<T: Real>(g: &mut Graph<T>, z: Var, z_rec: Var) -> Result<Var> {
    l1_mean(g, z_rec, z)
}

/// Per-dimension mean and population variance (floored) of `[N, d]` codes.
pub fn gaussian_moments<T: Real>(g: &mut Graph<T>, codes: Var) -> Result<(Var, Var)> {
    let (n, _) = g.value(codes).dims2()?;
    if n < 2 {
        return Err(Error::Dimension(format!(
            "fitting code moments needs at least 2 samples, got {n}"
        )));
    }
    let mean = g.mean_rows(codes)?;
    let centered = g.sub_row(codes, mean)?;
    let sq = g.square(centered);
    let var = g.mean_rows(sq)?;
    Ok((mean, g.clamp_min(var, T::of(VAR_FLOOR))))
}

/// `KL(N(pred) || N(real))` between diagonal Gaussians fitted to the two
/// batches, averaged over code dimensions.
pub fn kld_loss<T: Real>(g: &mut Graph<T>, codes_pred: Var, codes_real: Var) -> Result<Var> {
    let dp = g.shape(codes_pred).to_vec();
    let dr = g.shape(codes_real).to_vec();
    if dp.len() != 2 || dr.len() != 2 || dp[1] != dr[1] {
        return Err(Error::Dimension(format!(
            "kld_loss needs [N, d] batches with equal d, got {dp:?} and {dr:?}"
        )));
    }
    let (mu_p, var_p) = gaussian_moments(g, codes_pred)?;
    let (mu_r, var_r) = gaussian_moments(g, codes_real)?;
    let diff = g.sub(mu_p, mu_r)?;
    let diff_sq = g.square(diff);
    let a = g.div(diff_sq, var_r)?;
    let ratio = g.div(var_p, var_r)?;
    // Variances are floored, so the logarithms need no extra guard.
    let log_p = g.log(var_p, T::zero());
    let log_r = g.log(var_r, T::zero());
    let log_ratio = g.sub(log_p, log_r)?;
    let t = g.add(a, ratio)?;
    let t = g.sub(t, log_ratio)?;
    let t = g.add_scalar(t, -T::one());
    let m = g.mean(t);
    Ok(g.scale(m, T::of(0.5)))
}

fn check_scales(op: &str, a: &[Var], b: Option<&[Var]>) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Dimension(format!("{op}: empty score list")));
    }
    if let Some(b) = b {
        if a.len() != b.len() {
            return Err(Error::Dimension(format!(
                "{op}: {} real scales vs {} fake scales",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// `mean(0.5 * (s - target)^2)`.
fn half_mse_to<T: Real>(g: &mut Graph<T>, s: Var, target: f64) -> Var {
    let d = g.add_scalar(s, T::of(-target));
    let sq = g.square(d);
    let m = g.mean(sq);
    g.scale(m, T::of(0.5))
}

/// Least-squares discriminator loss averaged over scales.
pub fn lsgan_d_loss<T: Real>(
    g: &mut Graph<T>,
    scores_real: &[Var],
    scores_fake: &[Var],
) -> Result<Var> {
    check_scales("lsgan_d_loss", scores_real, Some(scores_fake))?;
    let mut total: Option<Var> = None;
    for (&r, &f) in scores_real.iter().zip(scores_fake) {
        let a = half_mse_to(g, r, 1.0);
        let b = half_mse_to(g, f, 0.0);
        let s = g.add(a, b)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.expect("non-empty");
    Ok(g.scale(total, T::of(1.0 / scores_real.len() as f64)))
}

/// Least-squares generator loss averaged over scales.
pub fn lsgan_g_loss<T: Real>(g: &mut Graph<T>, scores_fake: &[Var]) -> Result<Var> {
    check_scales("lsgan_g_loss", scores_fake, None)?;
    let mut total: Option<Var> = None;
    for &f in scores_fake {
        let s = half_mse_to(g, f, 1.0);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.expect("non-empty");
    Ok(g.scale(total, T::of(1.0 / scores_fake.len() as f64)))
}

/// `mean |I - R * S|` with the one-channel shading broadcast over colour.
pub fn physical_loss<T: Real>(g: &mut Graph<T>, image: Var, r_hat: Var, s_hat: Var) -> Result<Var> {
    let prod = g.mul_channels(r_hat, s_hat)?;
    l1_mean(g, image, prod)
}

/// Neighbour offsets covering the 8-neighbourhood once per unordered pair.
pub const NEIGHBOUR_OFFSETS: [(usize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Edge-aware piecewise-constancy prior on the predicted reflectance.
///
/// For every pixel `i` and 8-connected neighbour `j` the mean absolute
/// log-reflectance difference is weighted by a Gaussian affinity of the
/// input-image features `(position, intensity, chromaticity)`. The sum runs
/// over ordered pairs and is divided by `N * H * W`.
pub fn reflectance_smoothness_loss<T: Real>(
    g: &mut Graph<T>,
    r_hat: Var,
    image: Var,
    sigma: &SmoothnessSigma,
) -> Result<Var> {
    let (n, c, h, w) = g.value(image).dims4()?;
    if c != 3 || g.shape(r_hat) != g.shape(image) {
        return Err(Error::Dimension(format!(
            "smoothness expects two [N, 3, H, W] tensors, got {:?} and {:?}",
            g.shape(r_hat),
            g.shape(image)
        )));
    }
    let [s_px, s_py, s_int, s_r1, s_r2] = sigma.0;
    let log_r = g.log(r_hat, T::of(LOG_EPS));
    let intensity = g.mean_channels(image)?;
    let sum = g.scale(intensity, T::of(3.0));
    let denom = g.add_scalar(sum, T::of(CHROMA_EPS));
    let red = g.slice_channels(image, 0, 1)?;
    let green = g.slice_channels(image, 1, 1)?;
    let r1 = g.div(red, denom)?;
    let r2 = g.div(green, denom)?;

    let step_x = 1.0 / (w.max(2) - 1) as f64;
    let step_y = 1.0 / (h.max(2) - 1) as f64;
    let mut total: Option<Var> = None;
    for (dy, dx) in NEIGHBOUR_OFFSETS {
        if dy >= h || dx.unsigned_abs() >= w {
            continue;
        }
        let pos_q = (dx as f64 * step_x / s_px).powi(2) + (dy as f64 * step_y / s_py).powi(2);
        let mut q: Option<Var> = None;
        for (feat, s) in [(intensity, s_int), (r1, s_r1), (r2, s_r2)] {
            let d = g.shift_diff(feat, dy, dx)?;
            let d = g.square(d);
            let d = g.scale(d, T::of(1.0 / (s * s)));
            q = Some(match q {
                Some(acc) => g.add(acc, d)?,
                None => d,
            });
        }
        let q = g.add_scalar(q.expect("three features"), T::of(pos_q));
        let q = g.scale(q, T::of(-0.5));
        let v = g.exp(q);
        let dl = g.shift_diff(log_r, dy, dx)?;
        let dl = g.abs(dl);
        let dl = g.mean_channels(dl)?;
        let weighted = g.mul(v, dl)?;
        let s = g.sum(weighted);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let Some(total) = total else {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    };
    Ok(g.scale(total, T::of(2.0 / (n * h * w) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    #[test]
    fn weighted_total_skips_zero_weights() {
        let mut g = Graph::<f64>::new();
        let one = g.constant(Tensor::scalar(1.0));
        let parts = GeneratorTerms {
            adversarial: one,
            content: one,
            kl: one,
            image_recon: one,
            prior_recon: one,
            physical: one,
            smoothness: one,
        };
        let t = weighted_total(&mut g, &parts, &LossWeights::default()).unwrap();
        assert!((scalar(&g, t) - 26.2).abs() < 1e-12);
    }

    #[test]
    fn kld_rejects_single_sample() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![1, 3]));
        let b = g.constant(Tensor::zeros(vec![4, 3]));
        assert!(kld_loss(&mut g, a, b).is_err());
        assert!(kld_loss(&mut g, b, a).is_err());
    }

    #[test]
    fn nan_term_is_named() {
        let parts = GeneratorTerms {
            physical: f64::NAN,
            ..GeneratorTerms::default()
        };
        let err = total_generator_objective(&parts, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("physical"), "{err}");
    }
}

//! Decomposition quality metrics and the evaluation report.

mod report;
mod whdr;

pub use report::{
    const_reflectance_prediction, const_shading_prediction, evaluate, evaluate_predictions,
    EvalConfig, Report, ReportRow, CONST_REFLECTANCE_ROW, CONST_SHADING_ROW, MODEL_ROW,
};
pub use whdr::{synth_judgments, whdr, Judgment, JudgmentSet, Label};

use crate::imaging::Image;
use crate::{Error, Result};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 8;

fn check_same(op: &str, pred: &Image, gt: &Image) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::Dimension(format!(
            "{op}: prediction {} vs ground truth {}",
            pred.describe(),
            gt.describe()
        )));
    }
    Ok(())
}

/// Sums needed for the best-scale fit of `pred` to `gt` over an index set.
#[derive(Clone, Copy, Default)]
struct FitSums {
    pp: f64,
    pg: f64,
    gg: f64,
}

impl FitSums {
    fn add(&mut self, p: f64, g: f64) {
        self.pp += p * p;
        self.pg += p * g;
        self.gg += g * g;
    }

    fn alpha(&self) -> f64 {
        if self.pp > 0.0 {
            self.pg / self.pp
        } else {
            0.0
        }
    }
}

/// Scale-invariant MSE: `min_a mean((a * pred - gt)^2)` with one `a` per image.
pub fn si_mse(pred: &Image, gt: &Image) -> Result<f64> {
    check_same("si_mse", pred, gt)?;
    let mut s = FitSums::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        s.add(p as f64, g as f64);
    }
    let a = s.alpha();
    let sse: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (a * p as f64 - g as f64).powi(2))
        .sum();
    Ok(sse / pred.data().len() as f64)
}

/// Window size and stride actually used for an image of `h x w`.
pub fn lmse_geometry(h: usize, w: usize, window: usize, stride: usize) -> (usize, usize) {
    if window > h.min(w) {
        let win = h.min(w);
        (win, (win / 2).max(1))
    } else {
        (window, stride.max(1))
    }
}

/// Local scale-invariant MSE over sliding windows, normalised so that an
/// all-zero prediction scores 1.
pub fn lmse(pred: &Image, gt: &Image, window: usize, stride: usize) -> Result<f64> {
    check_same("lmse", pred, gt)?;
    if window == 0 {
        return Err(Error::Config("lmse window must be positive".into()));
    }
    let (h, w, c) = (gt.height(), gt.width(), gt.channels());
    let (win, step) = lmse_geometry(h, w, window, stride);
    let (mut num, mut den) = (0.0, 0.0);
    for y0 in (0..=h - win).step_by(step) {
        for x0 in (0..=w - win).step_by(step) {
            let pixels = || {
                (y0..y0 + win).flat_map(move |y| {
                    (x0..x0 + win).flat_map(move |x| {
                        (0..c).map(move |ch| (pred.get(y, x, ch) as f64, gt.get(y, x, ch) as f64))
                    })
                })
            };
            let mut s = FitSums::default();
            for (p, g) in pixels() {
                s.add(p, g);
            }
            let a = s.alpha();
            num += pixels().map(|(p, g)| (a * p - g).powi(2)).sum::<f64>();
            den += s.gg;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Inclusive prefix sums of a plane with a zero border.
fn integral(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y, x);
            out[(y + 1) * (w + 1) + x + 1] = out[y * (w + 1) + x + 1] + row;
        }
    }
    out
}

fn box_sum(t: &[f64], w: usize, y: usize, x: usize, k: usize) -> f64 {
    let s = w + 1;
    t[(y + k) * s + x + k] - t[y * s + x + k] - t[(y + k) * s + x] + t[y * s + x]
}

/// Structural dissimilarity `(1 - SSIM) / 2`, SSIM averaged over every
/// `8 x 8` window at stride 1 and then over channels.
pub fn dssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_same("dssim", pred, gt)?;
    let (h, w, c) = (gt.height(), gt.width(), gt.channels());
    let k = SSIM_WINDOW.min(h).min(w);
    let n = (k * k) as f64;
    let mut total = 0.0;
    for ch in 0..c {
        let p = |y: usize, x: usize| pred.get(y, x, ch) as f64;
        let g = |y: usize, x: usize| gt.get(y, x, ch) as f64;
        let sp = integral(h, w, p);
        let sg = integral(h, w, g);
        let spp = integral(h, w, |y, x| p(y, x) * p(y, x));
        let sgg = integral(h, w, |y, x| g(y, x) * g(y, x));
        let spg = integral(h, w, |y, x| p(y, x) * g(y, x));
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 0..=h - k {
            for x in 0..=w - k {
                let mp = box_sum(&sp, w, y, x, k) / n;
                let mg = box_sum(&sg, w, y, x, k) / n;
                let vp = (box_sum(&spp, w, y, x, k) / n - mp * mp).max(0.0);
                let vg = (box_sum(&sgg, w, y, x, k) / n - mg * mg).max(0.0);
                let cov = box_sum(&spg, w, y, x, k) / n - mp * mg;
                acc += ssim_from_stats(mp, mg, vp, vg, cov);
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    let ssim = total / c as f64;
    Ok(((1.0 - ssim) / 2.0).clamp(0.0, 1.0))
}

/// SSIM of one window from its means, variances and covariance.
pub fn ssim_from_stats(mp: f64, mg: f64, vp: f64, vg: f64, cov: f64) -> f64 {
    ((2.0 * mp * mg + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mp * mp + mg * mg + SSIM_C1) * (vp + vg + SSIM_C2))
}

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.10;
const LUMA_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Equal,
    FirstDarker,
    SecondDarker,
}

impl Label {
    /// Swap the two darker labels; `Equal` is unchanged.
    pub fn flipped(self) -> Label {
        match self {
            Label::Equal => Label::Equal,
            Label::FirstDarker => Label::SecondDarker,
            Label::SecondDarker => Label::FirstDarker,
        }
    }

    /// Label implied by two reflectance intensities under threshold `delta`.
    pub fn from_intensities(l1: f64, l2: f64, delta: f64) -> Label {
        let ratio = l1 / l2;
        if ratio > 1.0 + delta {
            Label::SecondDarker
        } else if ratio < 1.0 / (1.0 + delta) {
            Label::FirstDarker
        } else {
            Label::Equal
        }
    }
}

/// Relative reflectance judgment between two pixels given as `y * W + x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub idx1: usize,
    pub idx2: usize,
    pub label: Label,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSet {
    pub judgments: Vec<Judgment>,
    pub delta: f64,
}

fn intensity(im: &Image, idx: usize) -> f64 {
    let (y, x) = (idx / im.width(), idx % im.width());
    let c = im.channels();
    (0..c).map(|ch| im.get(y, x, ch) as f64).sum::<f64>() / c as f64 + LUMA_EPS
}

/// Weighted fraction of judgments the predicted reflectance disagrees with.
pub fn whdr(pred_reflectance: &Image, set: &JudgmentSet) -> Result<f64> {
    if set.judgments.is_empty() {
        return Err(Error::Config("whdr needs at least one judgment".into()));
    }
    let pixels = pred_reflectance.height() * pred_reflectance.width();
    let (mut wrong, mut total) = (0.0, 0.0);
    for j in &set.judgments {
        if j.idx1 >= pixels || j.idx2 >= pixels {
            return Err(Error::Dimension(format!(
                "judgment ({}, {}) outside a {}-pixel image",
                j.idx1, j.idx2, pixels
            )));
        }
        let pred = Label::from_intensities(
            intensity(pred_reflectance, j.idx1),
            intensity(pred_reflectance, j.idx2),
            set.delta,
        );
        if pred != j.label {
            wrong += j.weight;
        }
        total += j.weight;
    }
    if total <= 0.0 {
        return Err(Error::Config("judgment weights sum to zero".into()));
    }
    Ok(wrong / total)
}

/// Map `k < n(n-1)/2` to the `k`-th unordered pair `(i, j)`, `i < j`, in
/// row-major order of the strict upper triangle.
pub(crate) fn pair_from_index(k: usize, n: usize) -> (usize, usize) {
    // Row i starts at i*n - i(i+1)/2.
    let start = |i: usize| i * n - i * (i + 1) / 2;
    let nf = n as f64;
    let kf = k as f64;
    let mut i =
        (((2.0 * nf - 1.0) - ((2.0 * nf - 1.0).powi(2) - 8.0 * kf).max(0.0).sqrt()) / 2.0) as usize;
    i = i.min(n - 2);
    while i > 0 && start(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && start(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + k - start(i))
}

/// Judgments labelled from a ground-truth reflectance, over distinct
/// unordered pixel pairs drawn uniformly, with weights uniform in `[0.1, 1]`.
pub fn synth_judgments(
    gt_reflectance: &Image,
    n_pairs: usize,
    delta: f64,
    seed: u64,
) -> Result<JudgmentSet> {
    let n = gt_reflectance.height() * gt_reflectance.width();
    if n < 2 {
        return Err(Error::Dimension(
            "need at least two pixels for judgments".into(),
        ));
    }
    let total_pairs = n * (n - 1) / 2;
    let count = n_pairs.min(total_pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, total_pairs, count);
    let judgments = picks
        .into_iter()
        .map(|k| {
            let (idx1, idx2) = pair_from_index(k, n);
            let label = Label::from_intensities(
                intensity(gt_reflectance, idx1),
                intensity(gt_reflectance, idx2),
                delta,
            );
            Judgment {
                idx1,
                idx2,
                label,
                weight: rng.random_range(0.1..=1.0),
            }
        })
        .collect();
    Ok(JudgmentSet { judgments, delta })
}

//! Synthetic Lambertian scenes: piecewise-constant reflectance times smooth
//! achromatic shading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compose_image, Image, UnpairedCollections};
use crate::{Error, Result};

/// Reflectance colours are drawn from this range so that products never
/// saturate and logarithms stay finite.
pub const REFLECTANCE_RANGE: (f32, f32) = (0.1, 0.9);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub num_scenes: usize,
    /// Number of rectangles painted over the background, inclusive range.
    pub regions_min: usize,
    pub regions_max: usize,
    /// Side of the coarse random shading grid.
    pub shading_low_freq: usize,
    pub shading_range: [f32; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_scenes: 64,
            regions_min: 2,
            regions_max: 5,
            shading_low_freq: 4,
            shading_range: [0.2, 1.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.shading_range;
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be >= 8 and divisible by 4, got {}",
                self.image_size
            )));
        }
        if self.num_scenes < 2 {
            return Err(Error::Config(format!(
                "num_scenes must be at least 2 to build disjoint halves, got {}",
                self.num_scenes
            )));
        }
        if self.regions_min > self.regions_max {
            return Err(Error::Config(format!(
                "regions_min {} exceeds regions_max {}",
                self.regions_min, self.regions_max
            )));
        }
        if self.shading_low_freq == 0 {
            return Err(Error::Config("shading_low_freq must be positive".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "shading_range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Largest per-pixel step a generated shading can take along one axis.
    pub fn shading_step_bound(&self) -> f32 {
        let [lo, hi] = self.shading_range;
        let cells = self.shading_low_freq.saturating_sub(1) as f32;
        (hi - lo) * cells / (self.image_size - 1) as f32
    }
}

/// Paired ground truth for one scene. Only used for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriple {
    pub input: Image,
    pub reflectance: Image,
    pub shading: Image,
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let (lo, hi) = REFLECTANCE_RANGE;
    [
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    ]
}

fn reflectance(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Image {
    let size = cfg.image_size;
    let mut cells = vec![random_color(rng); size * size];
    let regions = rng.random_range(cfg.regions_min..=cfg.regions_max);
    let (min_side, max_side) = ((size / 8).max(1), (size / 2).max(1));
    for _ in 0..regions {
        let h = rng.random_range(min_side..=max_side);
        let w = rng.random_range(min_side..=max_side);
        let y0 = rng.random_range(0..=size - h);
        let x0 = rng.random_range(0..=size - w);
        let color = random_color(rng);
        for y in y0..y0 + h {
            cells[y * size + x0..y * size + x0 + w].fill(color);
        }
    }
    Image::from_fn(size, size, 3, |y, x, c| cells[y * size + x][c])
}

fn shading(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Image {
    let size = cfg.image_size;
    let g = cfg.shading_low_freq;
    let [lo, hi] = cfg.shading_range;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.random_range(0.0..=1.0)).collect();
    let coord = |p: usize| -> (usize, usize, f32) {
        if g == 1 {
            return (0, 0, 0.0);
        }
        let t = p as f32 / (size - 1) as f32 * (g - 1) as f32;
        let i = (t.floor() as usize).min(g - 2);
        (i, i + 1, t - i as f32)
    };
    Image::from_fn(size, size, 1, |y, x, _| {
        let (y0, y1, fy) = coord(y);
        let (x0, x1, fx) = coord(x);
        let top = grid[y0 * g + x0] * (1.0 - fx) + grid[y0 * g + x1] * fx;
        let bottom = grid[y1 * g + x0] * (1.0 - fx) + grid[y1 * g + x1] * fx;
        let u = top * (1.0 - fy) + bottom * fy;
        lo + (hi - lo) * u
    })
}

/// Scene `index` of the stream defined by `cfg.seed`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<SceneTriple> {
    let mut rng = scene_rng(cfg.seed, index);
    let reflectance = reflectance(cfg, &mut rng);
    let shading = shading(cfg, &mut rng);
    let input = compose_image(&reflectance, &shading)?;
    Ok(SceneTriple {
        input,
        reflectance,
        shading,
    })
}

/// Generate `cfg.num_scenes` triples plus training collections: inputs come
/// from the first half of the scenes, reflectances and shadings from the
/// second half.
pub fn generate_synthetic_collections(
    cfg: &SynthConfig,
) -> Result<(Vec<SceneTriple>, UnpairedCollections)> {
    cfg.validate()?;
    let triples = (0..cfg.num_scenes)
        .map(|i| generate_scene(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let half = cfg.num_scenes / 2;
    let collections = UnpairedCollections::new(
        triples[..half].iter().map(|t| t.input.clone()).collect(),
        triples[half..]
            .iter()
            .map(|t| t.reflectance.clone())
            .collect(),
        triples[half..].iter().map(|t| t.shading.clone()).collect(),
    );
    Ok((triples, collections))
}

/// Scene indices feeding the input list and the reflectance/shading lists.
pub fn split_indices(num_scenes: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let half = num_scenes / 2;
    (0..half, half..num_scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            image_size: 16,
            num_scenes: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(SynthConfig::default().validate().is_ok());
        for bad in [
            SynthConfig {
                num_scenes: 1,
                ..small()
            },
            SynthConfig {
                image_size: 18,
                ..small()
            },
            SynthConfig {
                shading_range: [0.0, 1.0],
                ..small()
            },
            SynthConfig {
                shading_range: [0.8, 0.4],
                ..small()
            },
            SynthConfig {
                regions_min: 4,
                regions_max: 3,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_synthetic_collections(&bad),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn scenes_differ_by_index() {
        let cfg = small();
        let a = generate_scene(&cfg, 0).unwrap();
        let b = generate_scene(&cfg, 1).unwrap();
        assert_ne!(a.reflectance, b.reflectance);
    }

    #[test]
    fn single_cell_shading_is_constant() {
        let cfg = SynthConfig {
            shading_low_freq: 1,
            ..small()
        };
        let s = generate_scene(&cfg, 0).unwrap().shading;
        let first = s.data()[0];
        assert!(s.data().iter().all(|&v| v == first));
    }
}

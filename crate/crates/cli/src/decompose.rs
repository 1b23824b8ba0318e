use intrinsic_core::imaging::io::{load_image, save_image_with_depth, BitDepth};
use intrinsic_core::imaging::Image;
use intrinsic_core::networks::checkpoint::load_model;
use serde_json::json;

use crate::manifest::{to_value, RunClock, RunManifest};
use crate::train::resolve_model_dir;
use crate::{create_dir, DecomposeArgs, Result};

pub const REFLECTANCE_FILE: &str = "reflectance.png";
pub const SHADING_FILE: &str = "shading.png";

/// Mean, median and max of `|I - R S|` over every pixel and channel.
fn residual_stats(input: &Image, r: &Image, s: &Image) -> (f64, f64, f64) {
    let mut res = Vec::with_capacity(input.data().len());
    for y in 0..input.height() {
        for x in 0..input.width() {
            let sv = s.get(y, x, 0) as f64;
            for c in 0..input.channels() {
                res.push((input.get(y, x, c) as f64 - r.get(y, x, c) as f64 * sv).abs());
            }
        }
    }
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    res.sort_by(f64::total_cmp);
    let n = res.len();
    let median = if n % 2 == 1 {
        res[n / 2]
    } else {
        (res[n / 2 - 1] + res[n / 2]) / 2.0
    };
    (mean, median, res[n - 1])
}

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<RunManifest> {
    let clock = RunClock::start();
    let model_dir = resolve_model_dir(&args.checkpoint)?;
    let bundle = load_model(&model_dir)?;
    let input = load_image(&args.input)?;
    let (r, s) = bundle.decompose(&input)?;
    let (mean, median, max) = residual_stats(&input, &r, &s);

    create_dir(&args.out)?;
    let (r_path, s_path) = (args.out.join(REFLECTANCE_FILE), args.out.join(SHADING_FILE));
    save_image_with_depth(&r, &r_path, BitDepth::Sixteen)?;
    save_image_with_depth(&s, &s_path, BitDepth::Sixteen)?;

    let mut manifest = RunManifest::new("decompose", args, &clock);
    manifest.config = to_value(bundle.config());
    manifest.add_artifacts(&args.out, [r_path, s_path]);
    manifest.details = json!({
        "model": model_dir,
        "height": input.height(),
        "width": input.width(),
        "residual": { "mean": mean, "median": median, "max": max },
    });
    manifest.finish(&args.out, &clock)
}

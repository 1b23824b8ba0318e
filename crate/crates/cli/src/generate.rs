use intrinsic_core::imaging::io::{write_dataset, GT_DIR, INPUT_DIR, REFLECTANCE_DIR, SHADING_DIR};
use intrinsic_core::imaging::synth::split_indices;
use intrinsic_core::imaging::{generate_synthetic_collections, SynthConfig};
use serde_json::json;

use crate::manifest::{to_value, RunClock, RunManifest};
use crate::{create_dir, GenerateArgs, Result};

/// Largest `|I - R S|` over every scene, before quantisation.
fn max_composition_residual(triples: &[intrinsic_core::imaging::SceneTriple]) -> f64 {
    let mut worst = 0.0f64;
    for t in triples {
        let (h, w) = (t.input.height(), t.input.width());
        for y in 0..h {
            for x in 0..w {
                let s = t.shading.get(y, x, 0) as f64;
                for c in 0..3 {
                    let r = t.reflectance.get(y, x, c) as f64;
                    worst = worst.max((t.input.get(y, x, c) as f64 - r * s).abs());
                }
            }
        }
    }
    worst
}

pub fn cmd_generate_data(args: &GenerateArgs) -> Result<RunManifest> {
    let clock = RunClock::start();
    let cfg = SynthConfig {
        image_size: args.size,
        num_scenes: args.scenes,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let (triples, collections) = generate_synthetic_collections(&cfg)?;
    create_dir(&args.out)?;
    let written = write_dataset(&args.out, &triples)?;

    let (inputs, layers) = split_indices(args.scenes);
    let [n_in, n_r, n_s] = collections.sizes();
    let mut manifest = RunManifest::new("generate-data", args, &clock);
    manifest.config = to_value(&cfg);
    manifest.seed = Some(args.seed);
    manifest.add_artifacts(&args.out, written);
    manifest.details = json!({
        "disjoint_halves": inputs.end <= layers.start,
        "input_scenes": [inputs.start, inputs.end],
        "reflectance_shading_scenes": [layers.start, layers.end],
        "files": {
            INPUT_DIR: n_in,
            REFLECTANCE_DIR: n_r,
            SHADING_DIR: n_s,
            GT_DIR: 3 * triples.len(),
        },
        "max_composition_residual": max_composition_residual(&triples),
    });
    manifest.finish(&args.out, &clock)
}

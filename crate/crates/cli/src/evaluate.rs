use std::fs;

use intrinsic_core::imaging::io::load_eval_triples;
use intrinsic_core::metrics::{
    const_reflectance_prediction, const_shading_prediction, evaluate, evaluate_predictions,
    EvalConfig, Report, CONST_REFLECTANCE_ROW, CONST_SHADING_ROW,
};
use intrinsic_core::networks::checkpoint::load_model;
use serde_json::json;

use crate::manifest::{to_value, RunClock, RunManifest};
use crate::train::resolve_model_dir;
use crate::{create_dir, CliError, EvaluateArgs, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const GROUND_TRUTH_ROW: &str = "ground_truth";

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<RunManifest> {
    let clock = RunClock::start();
    let cfg = EvalConfig {
        judgments_per_image: args.judgments,
        seed: args.seed,
        ..EvalConfig::default()
    };
    let triples = load_eval_triples(&args.data)?;
    if triples.is_empty() {
        return Err(CliError::Usage(format!(
            "no ground-truth triples under {}",
            args.data.display()
        )));
    }

    let (report, model_dir) = if args.gt_as_prediction {
        let gt: Vec<_> = triples
            .iter()
            .map(|t| (t.reflectance.clone(), t.shading.clone()))
            .collect();
        let inputs = triples.iter().map(|t| &t.input);
        let const_r: Vec<_> = inputs.clone().map(const_reflectance_prediction).collect();
        let const_s: Vec<_> = inputs.map(const_shading_prediction).collect();
        let rows = vec![
            evaluate_predictions(GROUND_TRUTH_ROW, &triples, &gt, &cfg)?,
            evaluate_predictions(CONST_REFLECTANCE_ROW, &triples, &const_r, &cfg)?,
            evaluate_predictions(CONST_SHADING_ROW, &triples, &const_s, &cfg)?,
        ];
        let report = Report {
            num_images: triples.len(),
            config: cfg.clone(),
            rows,
        };
        (report, None)
    } else {
        let checkpoint = args.checkpoint.as_ref().ok_or_else(|| {
            CliError::Usage("--checkpoint is required unless --gt-as-prediction is set".into())
        })?;
        let dir = resolve_model_dir(checkpoint)?;
        let bundle = load_model(&dir)?;
        (evaluate(&bundle, &triples, &cfg)?, Some(dir))
    };

    create_dir(&args.out)?;
    let json_path = args.out.join(REPORT_JSON);
    let text_path = args.out.join(REPORT_TEXT);
    fs::write(&json_path, report.to_json()).map_err(|e| CliError::io(&json_path, e))?;
    fs::write(&text_path, report.to_text()).map_err(|e| CliError::io(&text_path, e))?;

    let mut manifest = RunManifest::new("evaluate", args, &clock);
    manifest.config = to_value(&cfg);
    manifest.seed = Some(cfg.seed);
    manifest.add_artifacts(&args.out, [json_path, text_path]);
    manifest.details = json!({
        "model": model_dir,
        "num_images": report.num_images,
        "rows": report.rows,
    });
    manifest.finish(&args.out, &clock)
}

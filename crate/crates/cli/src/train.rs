use std::fs::File;
use std::path::{Path, PathBuf};

use intrinsic_core::imaging::io::load_unpaired;
use intrinsic_core::losses::GeneratorTerms;
use intrinsic_core::networks::checkpoint::MANIFEST_FILE;
use intrinsic_core::trainer::{
    load_checkpoint, run_steps, save_checkpoint, RunConfig, StepRecord, TrainState,
};
use serde_json::json;

use crate::manifest::{to_value, RunClock, RunManifest};
use crate::plot::plot_losses;
use crate::{create_dir, CliError, Result, TrainArgs};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOSS_CSV: &str = "losses.csv";
pub const LOSS_PLOT: &str = "losses.png";
const MODEL_SUBDIR: &str = "model";

/// Step directory with the highest step number under `run_dir/checkpoints`.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(step) = step {
            if best.as_ref().is_none_or(|(s, _)| step > *s) {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Accepts a model directory, a training checkpoint, or a training run
/// directory, and returns the model directory inside it.
pub fn resolve_model_dir(path: &Path) -> Result<PathBuf> {
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    if path.join(MODEL_SUBDIR).join(MANIFEST_FILE).is_file() {
        return Ok(path.join(MODEL_SUBDIR));
    }
    if let Some(latest) = latest_checkpoint(path)? {
        return Ok(latest.join(MODEL_SUBDIR));
    }
    Err(CliError::Usage(format!(
        "no model found under {}",
        path.display()
    )))
}

fn effective_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.max_samples {
        cfg.train.max_samples = Some(m);
    }
    if let Some(mode) = args.mode {
        cfg.train.mode = mode;
    }
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

const CSV_TOTALS: [&str; 3] = ["generator_total", "discriminator", "physical_median"];

fn write_loss_csv(path: &Path, history: &[StepRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let header = std::iter::once("step")
        .chain(GeneratorTerms::<f64>::NAMES)
        .chain(CSV_TOTALS);
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in history {
        let t = &r.terms;
        let mut row = vec![r.step.to_string()];
        row.extend(t.generator.to_array().iter().map(f64::to_string));
        row.extend(
            [t.generator_total, t.discriminator, t.physical_median]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn log_every(steps: usize) -> usize {
    (steps / 20).max(1)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let clock = RunClock::start();
    let mut cfg = effective_config(args)?;
    create_dir(&args.out)?;
    let ckpt_root = args.out.join(CHECKPOINT_DIR);

    let (mut state, resumed_from) = match args
        .resume
        .then(|| latest_checkpoint(&args.out))
        .transpose()?
        .flatten()
    {
        Some(dir) => {
            let mut state = load_checkpoint(&dir)?;
            if cfg.train.steps < state.step {
                return Err(CliError::Usage(format!(
                    "cannot resume at step {} with a target of {} steps",
                    state.step, cfg.train.steps
                )));
            }
            state.config.steps = cfg.train.steps;
            cfg.net = state.bundle.config().clone();
            cfg.weights = state.config.weights.clone();
            cfg.train = state.config.clone();
            (state, Some(dir))
        }
        None if args.resume => {
            return Err(CliError::Usage(format!(
                "nothing to resume under {}",
                ckpt_root.display()
            )));
        }
        None => (TrainState::new(&cfg.net, &cfg.train)?, None),
    };

    let mut collections = load_unpaired(&args.data)?;
    if let Some(m) = state.config.max_samples {
        collections = collections.truncated(m);
    }

    let target = state.config.steps;
    let every = log_every(target);
    let quiet = args.quiet;
    let outcome = run_steps(&mut state, &collections, target, Some(&ckpt_root), |r| {
        if !quiet && (r.step % every == 0 || r.step == target) {
            eprintln!(
                "step {:>6}/{target}  generator {:.5}  discriminator {:.5}  residual {:.5}",
                r.step, r.terms.generator_total, r.terms.discriminator, r.terms.physical_median
            );
        }
    });
    let csv_path = args.out.join(LOSS_CSV);
    write_loss_csv(&csv_path, &state.history)?;
    outcome?;

    let final_dir = ckpt_root.join(format!("step_{:06}", state.step));
    if !final_dir.join(MODEL_SUBDIR).join(MANIFEST_FILE).is_file() {
        save_checkpoint(&state, &final_dir)?;
    }
    let plot_path = args.out.join(LOSS_PLOT);
    plot_losses(&state.history, &plot_path)?;

    let last = state.history.last().map(|r| r.terms);
    let mut manifest = RunManifest::new("train", args, &clock);
    manifest.config = to_value(&cfg);
    manifest.seed = Some(cfg.train.seed);
    manifest.add_artifacts(&args.out, [csv_path, plot_path, final_dir.clone()]);
    manifest.details = json!({
        "steps": state.step,
        "resumed_from": resumed_from,
        "final_checkpoint": final_dir,
        "collection_sizes": collections.sizes(),
        "final_terms": last,
    });
    manifest.finish(&args.out, &clock)
}

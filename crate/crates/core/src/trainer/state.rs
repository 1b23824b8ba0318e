use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::step::{train_step, BatchTensors, TermValues};
use crate::imaging::{sample_batch, SamplerState, UnpairedCollections};
use crate::losses::LossWeights;
use crate::networks::checkpoint::{load_model, save_model};
use crate::networks::{ModelBundle, NetConfig, ParamId};
use crate::{Error, Result};

pub const STATE_FORMAT_VERSION: u32 = 1;
const STATE_FILE: &str = "state.json";
const MODEL_DIR: &str = "model";
const ADAM_G_FILE: &str = "adam_generator.bin";
const ADAM_D_FILE: &str = "adam_discriminator.bin";

/// Offsets the sampler seed away from the initialisation seed.
const SAMPLER_SEED_SALT: u64 = 0x5EED_0F_DA7A;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub terms: TermValues,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub step: usize,
    pub sampler: SamplerState,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(net: &NetConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::new(net, config.seed)?;
        let (gen_ids, disc_ids): (Vec<ParamId>, Vec<ParamId>) = bundle
            .store()
            .ids()
            .partition(|&id| !bundle.store().entry(id).network.is_discriminator());
        let adam_g = Adam::new(bundle.store(), gen_ids, config.lr, config.betas);
        let adam_d = Adam::new(bundle.store(), disc_ids, config.lr, config.betas);
        Ok(Self {
            bundle,
            config: config.clone(),
            adam_g,
            adam_d,
            step: 0,
            sampler: SamplerState::new(config.seed ^ SAMPLER_SEED_SALT),
            history: Vec::new(),
        })
    }

    /// Draw the next batches and apply one training step.
    pub fn step_once(&mut self, collections: &UnpairedCollections) -> Result<&StepRecord> {
        let batch = sample_batch(collections, self.config.batch_size, &mut self.sampler)?;
        let tensors = BatchTensors::from_batch(&batch)?;
        let terms = train_step(
            &mut self.bundle,
            &self.config,
            &mut self.adam_g,
            &mut self.adam_d,
            &tensors,
        )?;
        self.step += 1;
        self.history.push(StepRecord {
            step: self.step,
            terms,
        });
        Ok(self.history.last().expect("just pushed"))
    }
}

/// Train until `state.step == until`, saving a checkpoint under
/// `checkpoint_dir/step_XXXXXX` every `checkpoint_every` steps.
pub fn run_steps(
    state: &mut TrainState,
    collections: &UnpairedCollections,
    until: usize,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<()> {
    let (h, w) = collections.validate()?;
    state.bundle.config().check_image_dims(h, w)?;
    while state.step < until {
        on_step(state.step_once(collections)?);
        let every = state.config.checkpoint_every;
        if let Some(dir) = checkpoint_dir {
            if every > 0 && state.step % every == 0 {
                save_checkpoint(state, &step_dir(dir, state.step))?;
            }
        }
    }
    Ok(())
}

pub fn step_dir(root: &Path, step: usize) -> PathBuf {
    root.join(format!("step_{step:06}"))
}

/// Fresh training run of `cfg.steps` steps.
pub fn fit(
    net: &NetConfig,
    cfg: &TrainConfig,
    collections: &UnpairedCollections,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainState> {
    let mut state = TrainState::new(net, cfg)?;
    run_steps(&mut state, collections, cfg.steps, checkpoint_dir, |_| {})?;
    Ok(state)
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    format_version: u32,
    step: usize,
    sampler: SamplerState,
    config: TrainConfig,
    weights: LossWeights,
    adam_g_t: u64,
    adam_d_t: u64,
    history: Vec<StepRecord>,
}

fn write_moments(adam: &Adam, path: &Path) -> Result<()> {
    let (m, v) = adam.moments();
    let bytes: Vec<u8> = m
        .iter()
        .chain(v)
        .flat_map(|b| b.iter().flat_map(|x| x.to_le_bytes()))
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_moments(adam: &mut Adam, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m0, _) = adam.moments();
    let sizes: Vec<usize> = m0.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum::<usize>() * 2;
    if bytes.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            total * 4,
            bytes.len()
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut take = || -> Vec<Vec<f32>> {
        sizes
            .iter()
            .map(|&n| floats.by_ref().take(n).collect())
            .collect()
    };
    let m = take();
    let v = take();
    adam.set_moments(m, v)
}

pub fn save_checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_model(&state.bundle, &dir.join(MODEL_DIR))?;
    write_moments(&state.adam_g, &dir.join(ADAM_G_FILE))?;
    write_moments(&state.adam_d, &dir.join(ADAM_D_FILE))?;
    let file = StateFile {
        format_version: STATE_FORMAT_VERSION,
        step: state.step,
        sampler: state.sampler.clone(),
        config: state.config.clone(),
        weights: state.config.weights.clone(),
        adam_g_t: state.adam_g.t,
        adam_d_t: state.adam_d.t,
        history: state.history.clone(),
    };
    let path = dir.join(STATE_FILE);
    let text = serde_json::to_string(&file).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(STATE_FORMAT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "training state version {version:?} is not supported (expected {STATE_FORMAT_VERSION})"
        )));
    }
    let file: StateFile = serde_json::from_value(value)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let bundle = load_model(&dir.join(MODEL_DIR))?;
    let mut config = file.config;
    config.weights = file.weights;
    let mut state = TrainState::new(bundle.config(), &config)?;
    state.bundle = bundle;
    read_moments(&mut state.adam_g, &dir.join(ADAM_G_FILE))?;
    read_moments(&mut state.adam_d, &dir.join(ADAM_D_FILE))?;
    state.adam_g.t = file.adam_g_t;
    state.adam_d.t = file.adam_d_t;
    state.step = file.step;
    state.sampler = file.sampler;
    state.history = file.history;
    Ok(state)
}

//! Alternating least-squares adversarial training with checkpointing.

mod adam;
mod config;
mod state;
mod step;

pub use adam::Adam;
pub use config::{Mode, RunConfig, TrainConfig};
pub use state::{
    fit, load_checkpoint, run_steps, save_checkpoint, StepRecord, TrainState, STATE_FORMAT_VERSION,
};
pub use step::{
    discriminator_update, forward_pass, generator_forward, train_step, BatchTensors,
    GeneratorForward, TermValues,
};

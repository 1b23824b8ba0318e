use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Image, UnpairedCollections};
use crate::{Error, Result};

/// Position of the sampler in three independent shuffled streams.
///
/// Each collection is walked through a fresh permutation per epoch; the
/// permutation for `(collection, epoch)` is derived from `seed` alone, so the
/// state is just the seed plus one draw counter per collection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub drawn: [u64; 3],
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            drawn: [0; 3],
        }
    }

    pub fn epoch(&self, collection: usize, len: usize) -> u64 {
        self.drawn[collection] / len as u64
    }

    fn permutation(&self, collection: usize, epoch: u64, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((collection as u64) << 40) | epoch);
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut rng);
        perm
    }

    /// Draw the next `count` indices from collection `collection` of size `len`.
    pub fn next_indices(&mut self, collection: usize, len: usize, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for _ in 0..count {
            let d = self.drawn[collection];
            let epoch = d / len as u64;
            let pos = (d % len as u64) as usize;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.permutation(collection, epoch, len)));
            }
            out.push(cached.as_ref().expect("set above").1[pos]);
            self.drawn[collection] += 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Image>,
    pub reflectances: Vec<Image>,
    pub shadings: Vec<Image>,
    /// Indices drawn from each list, in the same order as the fields above.
    pub indices: [Vec<usize>; 3],
}

/// Draw one batch from each collection, independently shuffled.
pub fn sample_batch(
    collections: &UnpairedCollections,
    batch_size: usize,
    state: &mut SamplerState,
) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let lists = [
        collections.inputs(),
        collections.reflectances(),
        collections.shadings(),
    ];
    let names = ["inputs", "reflectances", "shadings"];
    if let Some(k) = lists.iter().position(|l| l.is_empty()) {
        return Err(Error::Config(format!(
            "cannot sample from empty collection `{}`",
            names[k]
        )));
    }
    let indices: [Vec<usize>; 3] =
        std::array::from_fn(|k| state.next_indices(k, lists[k].len(), batch_size));
    let pick = |k: usize| indices[k].iter().map(|&i| lists[k][i].clone()).collect();
    Ok(Batch {
        inputs: pick(0),
        reflectances: pick(1),
        shadings: pick(2),
        indices,
    })
}

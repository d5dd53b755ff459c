//! The patch classifier: topology, parameter counting, batched forward and
//! training passes, and model files.

mod arch;
mod io;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use arch::{count_params, ArchitectureConfig, ParamCount, Preset, PATCH_SIZE};
pub use io::{
    load_model, read_model, read_model_header, save_model, write_model, ModelHeader, MODEL_MAGIC, MODEL_VERSION,
};
pub use network::{BlobKind, Gradients, Network, Tape};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Batch};
use crate::par::{self, Exec};

/// Patches per inference chunk.
pub const INFER_CHUNK: usize = 2048;

/// A trained (or freshly initialized) classifier together with its
/// provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: ArchitectureConfig,
    pub net: Network<f32>,
    pub zone_id: String,
    pub seed: u64,
    pub epochs: u32,
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_validation(&self) -> Option<f64> {
        self.validation_loss.iter().copied().reduce(f64::min)
    }
}

/// Builds the network with weights drawn from `rng`.
pub fn build_model<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Model> {
    Ok(Model { arch: arch.clone(), net: Network::init(arch, rng)?, zone_id: String::new(), seed: 0, epochs: 0 })
}

impl Model {
    /// Seeded initialization; the same seed always yields the same weights.
    pub fn new(arch: &ArchitectureConfig, zone_id: &str, seed: u64) -> Result<Self> {
        let mut model = build_model(arch, &mut ChaCha8Rng::seed_from_u64(seed))?;
        model.zone_id = zone_id.to_string();
        model.seed = seed;
        Ok(model)
    }

    pub fn param_count(&self) -> ParamCount {
        self.net.enumerate_params()
    }

    /// Inference-mode probabilities, one per patch, in input order.
    pub fn forward_batch(&self, patches: &Batch<f32>) -> Result<Vec<f32>> {
        self.forward_batch_with(patches, Exec::Sequential)
    }

    /// Like [`Model::forward_batch`] but spreads fixed-size chunks over
    /// workers. Chunk boundaries depend only on the batch, never on `exec`.
    pub fn forward_batch_with(&self, patches: &Batch<f32>, exec: Exec) -> Result<Vec<f32>> {
        if patches.n == 0 {
            return Ok(Vec::new());
        }
        let item = patches.item_len();
        let chunks: Vec<&[f32]> = patches.data.chunks(INFER_CHUNK * item).collect();
        let outputs = par::map(exec, &chunks, |chunk| {
            let n = chunk.len() / item;
            let batch = Batch::new(n, patches.height, patches.width, patches.channels, chunk.to_vec())?;
            self.net.forward_infer(&batch)
        });
        let mut probs = Vec::with_capacity(patches.n);
        for out in outputs {
            probs.extend(out?);
        }
        Ok(probs)
    }

    /// One forward/backward/Adam update. Returns the batch loss measured
    /// before the update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        patches: &Batch<f32>,
        labels: &[f32],
        optimizer: &mut Optimizer,
        rng: &mut R,
    ) -> Result<f64> {
        let (loss, grads) = self.net.loss_and_gradients(patches, labels, rng)?;
        optimizer.apply(&mut self.net, &grads)?;
        Ok(loss)
    }
}

/// Adam state for every trainable tensor of a network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(net: &Network<f32>, config: AdamConfig) -> Self {
        Optimizer { states: net.trainable().iter().map(|t| AdamState::new(t.len(), config)).collect() }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    pub fn apply(&mut self, net: &mut Network<f32>, grads: &Gradients<f32>) -> Result<()> {
        if grads.tensors.len() != self.states.len() {
            return Err(Error::shape("gradient tensor count does not match optimizer state"));
        }
        // Validate everything first so a bad gradient leaves the network untouched.
        let mut offset = 0;
        for g in &grads.tensors {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at parameter index {}", offset + i)));
            }
            offset += g.len();
        }
        for ((params, g), state) in net.trainable_mut().into_iter().zip(&grads.tensors).zip(&mut self.states) {
            adam_step(params, g, state)?;
        }
        Ok(())
    }
}

/// Worst relative error between the analytic loss gradient of a full
/// training pass and central finite differences over every trainable
/// parameter. Each loss evaluation replays the same dropout masks.
pub fn network_grad_check(
    net: &Network<f64>,
    patches: &Batch<f64>,
    labels: &[f64],
    dropout_seed: u64,
    step: f64,
) -> Result<f64> {
    let mut probe = net.clone();
    let (_, grads) = probe.loss_and_gradients(patches, labels, &mut ChaCha8Rng::seed_from_u64(dropout_seed))?;
    let analytic = grads.tensors.concat();
    let params = net.trainable_flat();
    crate::nn::grad_check(&params, &analytic, step, |values| {
        let mut n = net.clone();
        n.set_trainable_flat(values).expect("same length");
        n.loss_and_gradients(patches, labels, &mut ChaCha8Rng::seed_from_u64(dropout_seed))
            .map(|(loss, _)| loss)
            .unwrap_or(f64::NAN)
    })
}

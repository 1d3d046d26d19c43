//! Receiver-side Bernoulli packet loss with replayable per-receiver streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("packet error rate {0} outside [0, 1]")]
pub struct PerOutOfRange(pub f64);

/// Drops each frame independently with probability `per`.
#[derive(Debug, Clone)]
pub struct LossModel {
    per: f64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl LossModel {
    pub fn new(per: f64, seed: u64) -> Result<Self, PerOutOfRange> {
        Self::with_stream(per, seed, 0)
    }

    /// Loss model for one receiver. Each receiver draws from its own ChaCha
    /// stream of the master seed, so one receiver's settings never shift
    /// another's draws.
    pub fn for_receiver(
        per: f64,
        master_seed: u64,
        receiver: VehicleId,
    ) -> Result<Self, PerOutOfRange> {
        Self::with_stream(per, master_seed, u64::from(receiver.0) + 1)
    }

    fn with_stream(per: f64, seed: u64, stream: u64) -> Result<Self, PerOutOfRange> {
        if !(0.0..=1.0).contains(&per) {
            return Err(PerOutOfRange(per));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self { per, seed, rng })
    }

    pub fn per(&self) -> f64 {
        self.per
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One Bernoulli(1 − per) draw. Every call consumes exactly one sample.
    pub fn deliver(&mut self, _frame: &[u8]) -> bool {
        let u: f64 = self.rng.random();
        u >= self.per
    }
}

pub fn loss_gate(model: &mut LossModel, frame: &[u8]) -> bool {
    model.deliver(frame)
}

//! Minimal differentiable network engine.
//!
//! Networks are one or more convolutional/dense branches whose tapped
//! features are concatenated and mapped to the output by a dense head.
//! Everything is generic over the scalar type; gradient checks run at `f64`.

mod adam;
mod gradcheck;
mod io;
mod layer;
mod network;
mod tensor;

use std::io::Write;
use std::path::Path;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use layer::{Layer, LayerSpec};
pub use network::{mse_loss, BranchLayout, BranchSpec, ForwardCache, Gradients, Network, NetworkSpec, TapInfo};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// One row of a training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Writes `epoch,train_loss,val_loss` rows at full precision.
pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

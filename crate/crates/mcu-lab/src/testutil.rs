//! Shared fixtures for unit tests.

use crate::data::{make_moons, split_forget_retain, SplitDataset};
use crate::nn::{Activation, MlpArch, MlpModel};
use crate::optim::OptimizerSpec;
use crate::unlearn::{train_supervised, TrainSchedule};

/// A trained two-moons classifier with a 5% forget split. Deterministic.
pub fn trained_moons(n: usize, seed: u64) -> (MlpModel, SplitDataset) {
    let ds = make_moons(n, 0.12, seed).unwrap();
    let ds = split_forget_retain(&ds, 0.05, 0.2, seed).unwrap();
    let arch = MlpArch::new(vec![2, 16, 2], Activation::Tanh).unwrap();
    let schedule = TrainSchedule {
        epochs: 60,
        batch_size: 32,
        optimizer: OptimizerSpec::adam(0.01),
    };
    let (params, _curve, _) =
        train_supervised(&arch, &ds, &ds.train_idx(), &schedule, seed ^ 0x5eed).unwrap();
    (MlpModel::new(arch, params).unwrap(), ds)
}

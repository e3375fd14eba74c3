//! Shared fixtures for the criterion benchmarks.

use gncl::data::{gen_spirals, Dataset};
use gncl::losses::LossKind;
use gncl::network::{Activation, DenseNet, LrSchedule, OptimizerConfig};
use gncl::training::{NetTemplate, TrainConfig};

pub fn bench_dataset() -> Dataset {
    gen_spirals(1, 100, 2, 0.08).expect("generator arguments are valid")
}

pub fn bench_members(count: usize, dims: &[usize]) -> Vec<DenseNet> {
    (0..count)
        .map(|i| DenseNet::init(100 + i as u64, dims, false).expect("dims are valid"))
        .collect()
}

pub fn bench_config(members: usize) -> TrainConfig {
    TrainConfig {
        members,
        epochs: 2,
        batch_size: 32,
        seed: 42,
        optimizer: OptimizerConfig::default(),
        schedule: LrSchedule::new(0.05, 10).expect("valid schedule"),
        loss: LossKind::cross_entropy(2).expect("valid loss"),
        template: NetTemplate {
            layer_dims: vec![2, 16, 2],
            binarized: false,
            activation: Activation::ReLU,
        },
    }
}

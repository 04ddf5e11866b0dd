#![allow(dead_code)]

use pfedmb::data::{partition_splits, LabeledDataset, PartitionScheme, PartitionSpec, SyntheticTaskSpec};
use pfedmb::federation::{Method, ProtocolConfig};

pub type Shards = Vec<(LabeledDataset, LabeledDataset)>;

/// Small synthetic task split over `clients` with two classes each.
pub fn shards(clients: usize, seed: u64) -> Shards {
    let splits = SyntheticTaskSpec {
        num_classes: 4,
        input_dim: 5,
        class_mean_scale: 1.0,
        noise_std: 0.6,
        samples_per_class: 12 * clients,
        validation_samples_per_class: 0,
        test_samples_per_class: 4 * clients,
        seed,
    }
    .generate_splits()
    .unwrap();
    let part = partition_splits(
        &splits.as_list(),
        &PartitionSpec {
            scheme: PartitionScheme::RandomKClasses { k: 2 },
            num_clients: clients,
            seed,
        },
    )
    .unwrap();
    part.train_test_shards(&splits.train, splits.test.as_ref().unwrap(), 1)
        .unwrap()
}

pub fn config(method: Method, branches: usize, rounds: usize, clients: usize) -> ProtocolConfig {
    ProtocolConfig {
        method,
        rounds,
        clients_per_round: clients,
        epochs: 2,
        batch_size: 8,
        lr_alpha: 0.2,
        lr_w: 0.1,
        num_branches: branches,
        shared_alpha: false,
        hidden_dims: vec![6],
        seed: 11,
    }
}

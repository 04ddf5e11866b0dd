//! Labeled datasets, synthetic task generation, non-IID partitioning and
//! CSV ingestion.

mod csv_io;
pub mod dataset;
pub mod partition;

pub use csv_io::{load_csv, load_csv_many, write_csv};
pub use dataset::{generate_synthetic, DataSplits, LabeledDataset, SyntheticTaskSpec};
pub use partition::{
    largest_remainder, partition, partition_splits, Partition, PartitionScheme, PartitionSpec,
};

//! The federated protocol: client sampling, two-phase local learning,
//! aggregation, baselines, fine-tuning and checkpoints.

pub mod aggregate;
pub mod checkpoint;
pub mod client;
pub mod protocol;
pub mod server;

pub use aggregate::{aggregate, aggregation_coefficients, AggregationStrategy, MASS_EPSILON};
pub use checkpoint::{Architecture, Checkpoint, RngPosition};
pub use client::{
    client_local_learning, fine_tune, local_learning, ClientState, ClientUpdate, LocalConfig, Pass,
    PersonalizedModel, Phase,
};
pub use protocol::{run_baseline, run_protocol, BaselineKind, Method, ProtocolConfig, ProtocolOutcome};
pub use server::{
    evaluate_all, initialize, run_round, run_training, sample_clients, RoundConfig, RoundReport,
    ServerState,
};

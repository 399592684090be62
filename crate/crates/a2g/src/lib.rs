//! Federated-learning simulation with dual-gain adaptive aggregation: trust
//! weights driven by teleportation QoS (fidelity, latency, instability) and a
//! geometry gain blending the global model toward the manifold-corrected
//! average of client models, which may live on circles and tori.
//!
//! The crate is organized around the round protocol:
//!
//! * [`manifold`]: Log/Exp maps on products of circles and lines, weighted
//!   tangent averages, the correction operator, dispersion.
//! * [`qos`]: QoS factors and normalized trust weights.
//! * [`channel`]: bit-flip fidelity sampling, synthetic latency, instability.
//! * [`model`]: statevector variational-circuit classifier and a logistic
//!   surrogate.
//! * [`optimizer`]: SPSA local training.
//! * [`data`]: CSV/synthetic datasets, standardize + PCA, federated
//!   partitions.
//! * [`aggregation`]: the dual-gain server update and its FedAvg oracle.
//! * [`orchestrator`]: the round loop, experiments, and sweeps.
//! * [`config`], [`report`], [`selftest`]: the CLI's config schema, result
//!   files, and fast invariant suite.
//!
//! The `book/` directory in the repository walks through the concepts with
//! runnable snippets; those snippets compile as doc-tests of this crate.

pub mod aggregation;
pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod manifold;
pub mod model;
pub mod optimizer;
pub mod orchestrator;
pub mod qos;
pub mod report;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};

// The book's code blocks double as doc-tests so the guide cannot drift from
// the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }
    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Geometry, "../../../book/src/geometry.md");
    chapter!(TrustWeights, "../../../book/src/trust-weights.md");
    chapter!(Channel, "../../../book/src/channel.md");
    chapter!(Model, "../../../book/src/model.md");
    chapter!(LocalTraining, "../../../book/src/local-training.md");
    chapter!(DataPartitions, "../../../book/src/data-partitions.md");
    chapter!(ServerUpdate, "../../../book/src/server-update.md");
    chapter!(Experiments, "../../../book/src/experiments.md");
    chapter!(CliReference, "../../../book/src/cli.md");
}

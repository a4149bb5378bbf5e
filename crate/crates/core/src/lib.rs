//! Region-graph message passing for Ising and Edwards-Anderson lattice models.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod factor_graph;
pub mod instance;
pub mod lattice;
pub mod oracles;
pub mod region_graph;
pub mod stability;
pub mod table;
pub mod thermo;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use engine::{
    select_dropped_edges, ActiveEdges, EngineConfig, Init, Message, MessagePlan, MessageState, Schedule, Solution,
    Variant,
};
pub use error::{Error, Result};
pub use factor_graph::{Configuration, FactorGraph, InteractionSpec, VertexSpec};
pub use instance::{read_instance, write_instance, Instance};
pub use lattice::{build_lattice, CouplingKind, LatticeSpec, RegionFamily, RegionLayout};
pub use region_graph::{Edge, Region, RegionGraph};

//! Temporal biomarker graphs and the graph-convolution encoder.

mod build;
mod gcn;

pub use build::{
    build_graph, normalize_adjacency, Biomarker, BiomarkerSeries, ChainAndSameTime, GraphBuilder, NodeKey,
    TemporalGraph, Topology, ValueScaling,
};
pub use gcn::{Gcn, GcnConfig, READOUT_DIM};

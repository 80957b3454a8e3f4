use rand::Rng;
use serde::{Deserialize, Serialize};

use super::build::{normalize_adjacency, TemporalGraph};
use crate::error::{Error, Result};
use crate::numerics::{fan_in_uniform, Bindings, Linear, ParamId, ParamStore, Tape, Var};

/// Width of the graph embedding handed to fusion.
pub const READOUT_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcnConfig {
    pub node_dim: usize,
    /// Output width of each propagation layer; its length is `L`.
    pub hidden: Vec<usize>,
}

impl GcnConfig {
    pub fn desk() -> Self {
        Self {
            node_dim: TemporalGraph::NODE_DIM,
            hidden: vec![16, 16, 16],
        }
    }

    pub fn paper() -> Self {
        Self {
            node_dim: TemporalGraph::NODE_DIM,
            hidden: vec![64, 64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("GCN widths must be positive with at least one layer"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut w = self.node_dim;
        for &h in &self.hidden {
            n += w * h;
            w = h;
        }
        n + Linear::param_count(w, READOUT_DIM, true)
    }
}

/// `L` layers of `H ← ReLU(Â H W)` followed by mean pooling and a projection to 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gcn {
    pub config: GcnConfig,
    pub layers: Vec<ParamId>,
    pub readout: Linear,
}

impl Gcn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &GcnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut w = config.node_dim;
        let mut layers = Vec::with_capacity(config.hidden.len());
        for (i, &h) in config.hidden.iter().enumerate() {
            layers.push(store.add(format!("{name}.layer{i}"), fan_in_uniform(&[w, h], w, 6.0, rng)));
            w = h;
        }
        let readout = Linear::new(store, &format!("{name}.readout"), w, READOUT_DIM, true, rng);
        Ok(Self {
            config: config.clone(),
            layers,
            readout,
        })
    }

    /// `H⁽ᴸ⁾` from `H⁰ = v` with a constant normalised adjacency `a_hat`.
    pub fn propagate(&self, tape: &mut Tape, params: &Bindings, a_hat: Var, v: Var) -> Result<Var> {
        let width = tape.value(v).cols();
        if tape.value(v).ndim() != 2 || width != self.config.node_dim {
            return Err(Error::config(format!(
                "node features have width {width}, GCN expects {}",
                self.config.node_dim
            )));
        }
        let mut h = v;
        for &w in &self.layers {
            let m = tape.matmul(a_hat, h)?;
            let m = tape.matmul(m, params.var(w))?;
            h = tape.relu(m);
        }
        Ok(h)
    }

    /// Mean over node rows, then the `[1×64]` projection.
    pub fn readout(&self, tape: &mut Tape, params: &Bindings, h: Var) -> Result<Var> {
        if tape.value(h).rows() == 0 {
            return Err(Error::contract("readout needs at least one node"));
        }
        let pooled = tape.mean_rows(h)?;
        self.readout.forward(tape, params, pooled)
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, graph: &TemporalGraph) -> Result<Var> {
        let a_hat = tape.constant(normalize_adjacency(&graph.adjacency)?);
        let v = tape.constant(graph.features.clone());
        let h = self.propagate(tape, params, a_hat, v)?;
        self.readout(tape, params, h)
    }
}

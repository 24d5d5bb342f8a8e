//! The forward network and its hand-written reverse pass.
//!
//! Pipeline per window (nodes are rows):
//!
//! 1. location embedding `v = H · W_prob`, `ṽ = Norm(LeakyReLU(v))`
//! 2. temporal encoder `h = ReLU(W_t [x window ‖ ṽ ‖ u window] + b_t)`
//! 3. `L_mp` spatial layers, each an edge-gated message-passing step over the
//!    union of the proximity and functional graphs, followed by a diffusion
//!    convolution when the proximity graph is enabled
//! 4. `L_ffn` residual blocks `h + ReLU(W_r h + b_r)` (3 and 4 swap under
//!    [`LayerOrder::FfnThenMp`])
//! 5. a shared two-layer readout over `[h ‖ u future ‖ v]` for the forecast,
//!    and a linear head over `h` that reconstructs the input window

mod backward;
pub mod checkpoint;
mod forward;
mod state;

pub use backward::backward;
pub use forward::{
    diffusion_conv, forward, message_pass, readout, residual_block, temporal_encode, EdgeList, ForwardOutput,
    GraphContext, Scene, Tape, Window,
};
pub use state::{ModelState, MpParams, ResParams, TensorMut, TensorRef};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ingest::COVARIATE_DIM;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOrder {
    MpThenFfn,
    FfnThenMp,
}

impl fmt::Display for LayerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerOrder::MpThenFfn => "mp-then-ffn",
            LayerOrder::FfnThenMp => "ffn-then-mp",
        })
    }
}

impl FromStr for LayerOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mp-then-ffn" => Ok(LayerOrder::MpThenFfn),
            "ffn-then-mp" => Ok(LayerOrder::FfnThenMp),
            _ => Err(Error::Config(format!("layer order {s:?}: expected mp-then-ffn or ffn-then-mp"))),
        }
    }
}

/// Architecture hyperparameters and pathway switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig {
    pub window: usize,
    pub horizon: usize,
    pub d_x: usize,
    pub d_u: usize,
    pub node_dim: usize,
    pub graph_dim: usize,
    pub hidden: usize,
    pub mp_layers: usize,
    pub ffn_layers: usize,
    pub diffusion_k: usize,
    /// Hop order of adjacency neighborhoods in message passing.
    pub neighbor_order: usize,
    pub use_llm_graph: bool,
    pub use_adjacency_graph: bool,
    pub use_encoding: bool,
    /// When false the spatial layers are bypassed entirely.
    pub spatial: bool,
    pub layer_order: LayerOrder,
    /// Above this many nodes the functional graph is sparsified to top-k.
    pub functional_dense_max: usize,
    pub functional_top_k: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            window: 24,
            horizon: 24,
            d_x: 1,
            d_u: COVARIATE_DIM,
            node_dim: 32,
            graph_dim: 16,
            hidden: 64,
            mp_layers: 1,
            ffn_layers: 3,
            diffusion_k: 2,
            neighbor_order: 1,
            use_llm_graph: true,
            use_adjacency_graph: true,
            use_encoding: true,
            spatial: true,
            layer_order: LayerOrder::MpThenFfn,
            functional_dense_max: 64,
            functional_top_k: 8,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("d_x", self.d_x),
            ("node_dim", self.node_dim),
            ("graph_dim", self.graph_dim),
            ("hidden", self.hidden),
            ("mp_layers", self.mp_layers),
            ("ffn_layers", self.ffn_layers),
            ("diffusion_k", self.diffusion_k),
            ("neighbor_order", self.neighbor_order),
            ("functional_top_k", self.functional_top_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.spatial && !self.use_llm_graph && !self.use_adjacency_graph {
            return Err(Error::Config(
                "message passing needs the functional graph, the adjacency graph, or both".into(),
            ));
        }
        if self.use_llm_graph && !self.use_encoding {
            return Err(Error::Config("the functional graph is built from encodings; enable use_encoding".into()));
        }
        Ok(())
    }

    pub fn temporal_input_dim(&self) -> usize {
        self.window * self.d_x + self.node_dim + self.window * self.d_u
    }

    pub fn message_input_dim(&self) -> usize {
        2 * self.hidden + self.node_dim + 2
    }

    pub fn readout_input_dim(&self) -> usize {
        self.hidden + self.horizon * self.d_u + self.node_dim
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("window", self.window.to_string()),
            kv("horizon", self.horizon.to_string()),
            kv("d_x", self.d_x.to_string()),
            kv("d_u", self.d_u.to_string()),
            kv("node_dim", self.node_dim.to_string()),
            kv("graph_dim", self.graph_dim.to_string()),
            kv("hidden", self.hidden.to_string()),
            kv("mp_layers", self.mp_layers.to_string()),
            kv("ffn_layers", self.ffn_layers.to_string()),
            kv("diffusion_k", self.diffusion_k.to_string()),
            kv("neighbor_order", self.neighbor_order.to_string()),
            kv("use_llm_graph", self.use_llm_graph.to_string()),
            kv("use_adjacency_graph", self.use_adjacency_graph.to_string()),
            kv("use_encoding", self.use_encoding.to_string()),
            kv("spatial", self.spatial.to_string()),
            kv("layer_order", self.layer_order.to_string()),
            kv("functional_dense_max", self.functional_dense_max.to_string()),
            kv("functional_top_k", self.functional_top_k.to_string()),
        ]
    }

    /// Applies recognized keys, returning the keys it did not recognize.
    pub fn apply_pairs<'a>(&mut self, pairs: &'a BTreeMap<String, String>) -> Result<Vec<&'a str>> {
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            let bad = || Error::Config(format!("invalid value {v:?} for {k}"));
            let int = || v.parse::<usize>().map_err(|_| bad());
            let flag = || v.parse::<bool>().map_err(|_| bad());
            match k.as_str() {
                "window" => self.window = int()?,
                "horizon" => self.horizon = int()?,
                "d_x" => self.d_x = int()?,
                "d_u" => self.d_u = int()?,
                "node_dim" => self.node_dim = int()?,
                "graph_dim" => self.graph_dim = int()?,
                "hidden" => self.hidden = int()?,
                "mp_layers" => self.mp_layers = int()?,
                "ffn_layers" => self.ffn_layers = int()?,
                "diffusion_k" => self.diffusion_k = int()?,
                "neighbor_order" => self.neighbor_order = int()?,
                "use_llm_graph" => self.use_llm_graph = flag()?,
                "use_adjacency_graph" => self.use_adjacency_graph = flag()?,
                "use_encoding" => self.use_encoding = flag()?,
                "spatial" => self.spatial = flag()?,
                "layer_order" => self.layer_order = v.parse()?,
                "functional_dense_max" => self.functional_dense_max = int()?,
                "functional_top_k" => self.functional_top_k = int()?,
                _ => unknown.push(k.as_str()),
            }
        }
        Ok(unknown)
    }
}

//! Model architecture: hypothesis text encoder, locally/globally aligned
//! attention over frame features, BiGRU streams, QA / span / contrastive
//! heads, and whole-example graph assembly.

pub mod attention;
pub mod contrastive;
pub mod encoder;
pub mod forward;
pub mod gru;
pub mod heads;
pub mod params;
pub mod span;

pub use params::{init_params, load_checkpoint, save_checkpoint, ParamSet};

use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Local,
    Global,
}

/// Architecture hyperparameters (everything the parameter shapes depend on).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_answers: usize,
    pub t_segments: usize,
    pub i_frames: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub l_max: usize,
    pub use_self_attention: bool,
    pub use_multi_token_type: bool,
    pub attention_mode: AttentionMode,
}

impl ModelConfig {
    /// Desk-scale dimensions; `vocab_size` comes from the built vocabulary.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            n_answers: 5,
            t_segments: 6,
            i_frames: 4,
            d_t: 32,
            d_v: 48,
            l_max: 32,
            use_self_attention: false,
            use_multi_token_type: true,
            attention_mode: AttentionMode::Local,
        }
    }
}

/// Parameter leaves bound into one graph, addressable by name.
pub struct ModelVars {
    nodes: HashMap<String, NodeId>,
}

impl ModelVars {
    /// Register every parameter as a trainable leaf of `g`, in set order.
    pub fn bind<F: Scalar>(g: &mut Graph<F>, params: &ParamSet<F>) -> Self {
        let mut nodes = HashMap::new();
        for (name, t) in params.iter() {
            nodes.insert(name.to_string(), g.var(t.clone()));
        }
        ModelVars { nodes }
    }

    /// Bind from pre-created leaves in `params.names()` order (used by the
    /// finite-difference gradient checker, which owns the leaves).
    pub fn from_leaves(names: &[String], leaves: &[NodeId]) -> Self {
        assert_eq!(names.len(), leaves.len());
        let nodes = names
            .iter()
            .cloned()
            .zip(leaves.iter().copied())
            .collect();
        ModelVars { nodes }
    }

    pub fn get(&self, name: &str) -> NodeId {
        *self
            .nodes
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

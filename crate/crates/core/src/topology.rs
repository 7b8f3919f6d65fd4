use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cluster of `num_nodes` nodes with `gpus_per_node` GPUs each.
///
/// GPU ids are node-major: `gpu = node * gpus_per_node + local`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterTopology {
    #[serde(rename = "nodes")]
    pub num_nodes: usize,
    pub gpus_per_node: usize,
}

impl ClusterTopology {
    pub fn new(num_nodes: usize, gpus_per_node: usize) -> Result<Self> {
        if num_nodes == 0 || gpus_per_node == 0 {
            return Err(Error::invalid(format!(
                "topology {num_nodes}x{gpus_per_node} must have at least one node and one GPU per node"
            )));
        }
        Ok(Self {
            num_nodes,
            gpus_per_node,
        })
    }

    /// Parses the `NxG` form used on the command line, e.g. `2x4`.
    pub fn parse(s: &str) -> Result<Self> {
        let (n, g) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("topology `{s}` is not of the form NxG")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("topology `{s}` is not of the form NxG")))
        };
        Self::new(parse(n)?, parse(g)?)
    }

    #[inline]
    pub fn total_gpus(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    #[inline]
    pub fn node_of(&self, gpu: usize) -> usize {
        gpu / self.gpus_per_node
    }

    #[inline]
    pub fn local_index(&self, gpu: usize) -> usize {
        gpu % self.gpus_per_node
    }

    #[inline]
    pub fn gpu_id(&self, node: usize, local: usize) -> usize {
        node * self.gpus_per_node + local
    }

    pub fn gpus_on_node(&self, node: usize) -> std::ops::Range<usize> {
        let start = node * self.gpus_per_node;
        start..start + self.gpus_per_node
    }
}

impl std::fmt::Display for ClusterTopology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.num_nodes, self.gpus_per_node)
    }
}

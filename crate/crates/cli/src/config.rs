//! Run configuration: a flat TOML document with dotted keys, overridden by
//! command-line flags.

use std::path::Path;

use moeplan_core::grouping::GroupingMode;
use moeplan_core::replication::ReplicationOptions;
use moeplan_core::{
    ClusterTopology, ModelShape, RatioChoice, ReplicationMode, RoutingPolicy, SharePolicy,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Workload defaults: batch 128, prefill 64, decode 16.
pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_PREFILL: usize = 64;
pub const DEFAULT_DECODE: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub topology: Option<TopologySetting>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub grouping: GroupingSection,
    #[serde(default)]
    pub replication: ReplicationSection,
    #[serde(default)]
    pub routing: RoutingSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

/// `topology = "2x4"` or `topology.nodes = 2` with `topology.gpus_per_node = 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySetting {
    Text(String),
    Fields { nodes: usize, gpus_per_node: usize },
}

impl TopologySetting {
    pub fn resolve(&self) -> Result<ClusterTopology, CliError> {
        Ok(match self {
            TopologySetting::Text(s) => ClusterTopology::parse(s)?,
            TopologySetting::Fields {
                nodes,
                gpus_per_node,
            } => ClusterTopology::new(*nodes, *gpus_per_node)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub layers: Option<usize>,
    pub experts: Option<usize>,
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub num_tokens: Option<usize>,
    pub batch: Option<usize>,
    pub prefill: Option<usize>,
    pub decode: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub blocks: Option<usize>,
    pub within_block_prob: Option<f64>,
    pub popularity_skew: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingSection {
    pub mode: Option<String>,
    pub ratio: Option<RatioSetting>,
}

/// `ratio = "auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioSetting {
    Number(f64),
    Text(String),
}

impl RatioSetting {
    pub fn resolve(&self) -> Result<RatioChoice, CliError> {
        Ok(match self {
            RatioSetting::Number(r) => RatioChoice::parse(&r.to_string())?,
            RatioSetting::Text(s) => RatioChoice::parse(s)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationSection {
    pub mode: Option<String>,
    pub every_gpu_count: Option<usize>,
    pub share: Option<String>,
    pub expert_params: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSection {
    pub policy: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub include_combine: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn topology(&self) -> Result<ClusterTopology, CliError> {
        match &self.topology {
            Some(t) => t.resolve(),
            None => Err(CliError::Usage(
                "a topology is required (--topology NxG)".into(),
            )),
        }
    }

    pub fn shape(&self) -> Result<ModelShape, CliError> {
        let m = &self.model;
        let base = match &m.preset {
            Some(name) => Some(ModelShape::preset(name).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown preset {name:?}; expected one of {}",
                    ModelShape::PRESETS.join(", ")
                ))
            })?),
            None => None,
        };
        let pick = |explicit: Option<usize>, preset: Option<usize>, what: &str| {
            explicit.or(preset).ok_or_else(|| {
                CliError::Usage(format!(
                    "model {what} is required (use --preset or --{what})"
                ))
            })
        };
        Ok(ModelShape::new(
            pick(m.layers, base.map(|s| s.num_layers), "layers")?,
            pick(m.experts, base.map(|s| s.num_experts), "experts")?,
            pick(m.top_k, base.map(|s| s.top_k), "top-k")?,
        )?)
    }

    /// Explicit token count, else `batch × (prefill + decode)`.
    pub fn num_tokens(&self) -> usize {
        let w = &self.workload;
        w.num_tokens.unwrap_or_else(|| {
            w.batch.unwrap_or(DEFAULT_BATCH)
                * (w.prefill.unwrap_or(DEFAULT_PREFILL) + w.decode.unwrap_or(DEFAULT_DECODE))
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn grouping_mode(&self) -> Result<GroupingMode, CliError> {
        Ok(GroupingMode::parse(
            self.grouping.mode.as_deref().unwrap_or("hierarchical"),
        )?)
    }

    pub fn ratio(&self) -> Result<RatioChoice, CliError> {
        match &self.grouping.ratio {
            Some(r) => r.resolve(),
            None => Ok(RatioChoice::auto()),
        }
    }

    pub fn replication(&self) -> Result<ReplicationOptions, CliError> {
        let r = &self.replication;
        let mut options = ReplicationOptions::with_mode(ReplicationMode::parse(
            r.mode.as_deref().unwrap_or("none"),
        )?);
        if let Some(c) = r.every_gpu_count {
            options.every_gpu_count = c;
        }
        options.share = match r.share.as_deref() {
            None | Some("group_load") => SharePolicy::GroupLoad,
            Some("hot_load") => SharePolicy::HotLoad,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown share policy {other:?}; expected group_load or hot_load"
                )))
            }
        };
        options.expert_params = r.expert_params;
        Ok(options)
    }

    pub fn routing(&self) -> Result<RoutingPolicy, CliError> {
        Ok(RoutingPolicy::parse(
            self.routing.policy.as_deref().unwrap_or("wrr"),
        )?)
    }
}

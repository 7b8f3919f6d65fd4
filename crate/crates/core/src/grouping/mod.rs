//! Expert grouping and GPU placement.
//!
//! [`hierarchical_group`] is the main entry point: affinity-only clustering
//! across nodes, then size-bounded clustering across the GPUs of each node.
//! [`baseline_group`] and [`plan_placement`] provide the flat schemes used for
//! comparison.

mod controlled;
mod knee;
mod spectral;

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

pub use controlled::{controlled_non_uniform_group, polish_within_band, refine_to_band, SizeBand};
pub use knee::{knee_index, select_ratio, RatioSelection, DEFAULT_RATIO_GRID};
pub use spectral::{fully_non_uniform_group, spectral_cluster};

use crate::affinity::{AffinityMatrix, ExpertLoadVector, Grouping, LayerProfile};
use crate::error::{Error, Result};
use crate::rng::derive_key;
use crate::topology::ClusterTopology;
use crate::trace::ModelShape;

/// How the non-uniformity ratio is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioChoice {
    Fixed(f64),
    /// Knee of the sweep over these candidates, chosen per node group.
    Auto {
        candidates: Vec<f64>,
    },
}

impl RatioChoice {
    pub fn auto() -> Self {
        RatioChoice::Auto {
            candidates: DEFAULT_RATIO_GRID.to_vec(),
        }
    }

    /// `auto` or a non-negative number.
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::auto());
        }
        match s.parse::<f64>() {
            Ok(r) if r >= 0.0 && r.is_finite() => Ok(RatioChoice::Fixed(r)),
            _ => Err(Error::invalid(format!(
                "ratio must be `auto` or a number >= 0, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for RatioChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatioChoice::Fixed(r) => write!(f, "{r}"),
            RatioChoice::Auto { .. } => f.write_str("auto"),
        }
    }
}

/// Placement schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// Experts sliced into equal contiguous id ranges.
    VanillaContiguous,
    /// Spectral clusters rebalanced to equal sizes.
    UniformSpectral,
    /// Flat size-bounded clustering into one group per GPU.
    Controlled,
    /// Flat affinity-only clustering into one group per GPU.
    FullyNonUniform,
    /// Node level affinity-only, GPU level size-bounded.
    Hierarchical,
}

impl GroupingMode {
    pub const ALL: [GroupingMode; 5] = [
        GroupingMode::VanillaContiguous,
        GroupingMode::UniformSpectral,
        GroupingMode::Controlled,
        GroupingMode::FullyNonUniform,
        GroupingMode::Hierarchical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupingMode::VanillaContiguous => "vanilla_contiguous",
            GroupingMode::UniformSpectral => "uniform_spectral",
            GroupingMode::Controlled => "controlled",
            GroupingMode::FullyNonUniform => "fully_non_uniform",
            GroupingMode::Hierarchical => "hierarchical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown grouping mode `{s}`")))
    }
}

/// Ratio diagnostics for one size-bounded grouping step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    pub layer: usize,
    /// Node whose experts were split; `None` for flat placements.
    pub node: Option<usize>,
    pub ratio: f64,
    pub band: SizeBand,
    pub selection: Option<RatioSelection>,
}

/// Primary expert → GPU assignment for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPlan {
    pub topology: ClusterTopology,
    pub num_experts: usize,
    /// `layers[l][e]` is the GPU holding the primary copy of expert `e`.
    pub layers: Vec<Vec<usize>>,
    pub ratio_selection: Vec<RatioDiagnostics>,
}

impl PlacementPlan {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn gpu_of(&self, layer: usize, expert: usize) -> usize {
        self.layers[layer][expert]
    }

    /// Experts held by each GPU in `layer`, ascending.
    pub fn gpu_sets(&self, layer: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.topology.total_gpus()];
        for (e, &g) in self.layers[layer].iter().enumerate() {
            sets[g].push(e);
        }
        sets
    }

    pub fn grouping(&self, layer: usize) -> Grouping {
        Grouping::new(self.gpu_sets(layer))
    }

    /// Checks that the plan covers `shape` and maps every expert to a GPU.
    pub fn check_shape(&self, shape: &ModelShape) -> Result<()> {
        if self.num_layers() != shape.num_layers || self.num_experts != shape.num_experts {
            return Err(Error::integrity(format!(
                "plan covers {} layers x {} experts, trace has {} x {}",
                self.num_layers(),
                self.num_experts,
                shape.num_layers,
                shape.num_experts
            )));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let gpus = self.topology.total_gpus();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.len() != self.num_experts {
                return Err(Error::integrity(format!(
                    "layer {l} places {} experts, expected {}",
                    layer.len(),
                    self.num_experts
                )));
            }
            if let Some(e) = layer.iter().position(|&g| g >= gpus) {
                return Err(Error::integrity(format!(
                    "layer {l} expert {e} placed on GPU {} of {gpus}",
                    layer[e]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    topology: ClusterTopology,
    experts: usize,
    layers: Vec<LayerRepr>,
    #[serde(default)]
    ratio_selection: Vec<RatioDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    layer: usize,
    placement: BTreeMap<usize, usize>,
}

impl Serialize for PlacementPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PlanRepr {
            topology: self.topology,
            experts: self.num_experts,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(layer, map)| LayerRepr {
                    layer,
                    placement: map.iter().copied().enumerate().collect(),
                })
                .collect(),
            ratio_selection: self.ratio_selection.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlacementPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = PlanRepr::deserialize(d)?;
        let mut layers = vec![Vec::new(); repr.layers.len()];
        for l in repr.layers {
            let slot = layers
                .get_mut(l.layer)
                .ok_or_else(|| D::Error::custom(format!("layer {} out of range", l.layer)))?;
            if !slot.is_empty() {
                return Err(D::Error::custom(format!("layer {} listed twice", l.layer)));
            }
            if l.placement.len() != repr.experts || l.placement.keys().copied().ne(0..repr.experts)
            {
                return Err(D::Error::custom(format!(
                    "layer {} must place experts 0..{}",
                    l.layer, repr.experts
                )));
            }
            *slot = l.placement.into_values().collect();
        }
        let plan = PlacementPlan {
            topology: repr.topology,
            num_experts: repr.experts,
            layers,
            ratio_selection: repr.ratio_selection,
        };
        plan.validate().map_err(D::Error::custom)?;
        Ok(plan)
    }
}

/// Orders groups by descending load (ties: smaller first member first).
fn by_descending_load(groups: &mut [Vec<usize>], load: &ExpertLoadVector) {
    groups.sort_by(|x, y| {
        load.sum_over(y)
            .cmp(&load.sum_over(x))
            .then(x.first().cmp(&y.first()))
    });
}

fn check_profiles(profiles: &[LayerProfile], topology: &ClusterTopology) -> Result<usize> {
    let n = profiles
        .first()
        .map(|p| p.affinity.n())
        .ok_or_else(|| Error::invalid("no layer profiles to plan from"))?;
    for (l, p) in profiles.iter().enumerate() {
        if p.layer != l || p.affinity.n() != n || p.load.n() != n {
            return Err(Error::integrity(format!(
                "profile {l} is inconsistent (layer {}, {} experts)",
                p.layer,
                p.affinity.n()
            )));
        }
    }
    if topology.total_gpus() > n {
        return Err(Error::Infeasible(format!(
            "{} GPUs cannot each hold a primary expert of {n} experts",
            topology.total_gpus()
        )));
    }
    Ok(n)
}

/// Size-bounded grouping of `a` with an explicit or automatically selected
/// ratio. An infeasible band is widened one step at a time until feasible.
fn bounded_group(
    a: &AffinityMatrix,
    groups: usize,
    ratio: &RatioChoice,
    seed: u64,
) -> Result<(Grouping, f64, SizeBand, Option<RatioSelection>)> {
    let n = a.n();
    let (r, selection) = match ratio {
        RatioChoice::Fixed(r) => (*r, None),
        RatioChoice::Auto { candidates } => {
            let sel = select_ratio(a, groups, candidates, seed)?;
            (sel.chosen_ratio(), Some(sel))
        }
    };
    let mut band = SizeBand::for_ratio(n, groups, r)?;
    while !band.is_feasible(n, groups) {
        if band.min == 1 && band.max >= n {
            band.check_feasible(n, groups)?;
        }
        band = SizeBand::with_delta(band.ideal, band.delta + 1);
    }
    let clusters = spectral_cluster(a, groups, seed)?;
    let grouping = controlled::fit_to_band(a, &clusters, band, seed)?;
    Ok((grouping, r, band, selection))
}

/// Two-level placement for every layer.
///
/// Experts are first split across nodes by affinity alone (skipped for a
/// single node); node groups with fewer experts than GPUs are topped up with
/// the weakest member of the largest node group. Each node group is then
/// split across its GPUs with size-bounded grouping. Node groups and GPU
/// groups are assigned ids in descending order of load.
pub fn hierarchical_group(
    profiles: &[LayerProfile],
    topology: ClusterTopology,
    ratio: &RatioChoice,
    seed: u64,
) -> Result<PlacementPlan> {
    let n = check_profiles(profiles, &topology)?;
    let nodes = topology.num_nodes;
    let per_node = topology.gpus_per_node;

    let mut layers = Vec::with_capacity(profiles.len());
    let mut diagnostics = Vec::new();
    for p in profiles {
        let layer = p.layer;
        let a = &p.affinity;
        let mut node_groups = if nodes == 1 {
            vec![(0..n).collect()]
        } else {
            fully_non_uniform_group(a, nodes, derive_key(seed, &[layer as u64, 0]))?.groups
        };
        while let Some(short) = node_groups.iter().position(|g| g.len() < per_node) {
            let largest = (0..node_groups.len())
                .max_by(|&x, &y| {
                    node_groups[x]
                        .len()
                        .cmp(&node_groups[y].len())
                        .then(y.cmp(&x))
                })
                .expect("at least one node");
            let pos = spectral::weakest_member(a, &node_groups[largest]);
            let e = node_groups[largest].remove(pos);
            node_groups[short].push(e);
        }
        by_descending_load(&mut node_groups, &p.load);

        let mut map = vec![usize::MAX; n];
        for (node, members) in node_groups.iter().enumerate() {
            let mut gpu_groups = if per_node == 1 {
                vec![members.clone()]
            } else {
                let sub = a.submatrix(members);
                let node_seed = derive_key(seed, &[layer as u64, 1, node as u64]);
                let (local, r, band, selection) = bounded_group(&sub, per_node, ratio, node_seed)?;
                debug!(
                    "layer {layer} node {node}: ratio {r}, band [{}, {}]",
                    band.min, band.max
                );
                diagnostics.push(RatioDiagnostics {
                    layer,
                    node: Some(node),
                    ratio: r,
                    band,
                    selection,
                });
                local
                    .groups
                    .into_iter()
                    .map(|g| g.into_iter().map(|i| members[i]).collect())
                    .collect()
            };
            by_descending_load(&mut gpu_groups, &p.load);
            for (local, g) in gpu_groups.iter().enumerate() {
                let gpu = topology.gpu_id(node, local);
                for &e in g {
                    map[e] = gpu;
                }
            }
        }
        layers.push(map);
    }

    let plan = PlacementPlan {
        topology,
        num_experts: n,
        layers,
        ratio_selection: diagnostics,
    };
    plan.validate()?;
    Ok(plan)
}

/// Contiguous id slices, remainder experts dealt round-robin from GPU 0.
pub fn vanilla_contiguous(
    num_experts: usize,
    num_layers: usize,
    topology: ClusterTopology,
) -> PlacementPlan {
    let gpus = topology.total_gpus();
    let base = num_experts / gpus;
    let map: Vec<usize> = (0..num_experts)
        .map(|e| {
            if e < base * gpus {
                e / base
            } else {
                e - base * gpus
            }
        })
        .collect();
    PlacementPlan {
        topology,
        num_experts,
        layers: vec![map; num_layers],
        ratio_selection: Vec::new(),
    }
}

/// Baseline placements: contiguous slices, or spectral clusters rebalanced
/// to equal sizes.
pub fn baseline_group(
    shape: &ModelShape,
    profiles: &[LayerProfile],
    topology: ClusterTopology,
    mode: GroupingMode,
    seed: u64,
) -> Result<PlacementPlan> {
    match mode {
        GroupingMode::VanillaContiguous => {
            if topology.total_gpus() > shape.num_experts {
                return Err(Error::Infeasible(format!(
                    "{} GPUs cannot each hold a primary expert of {} experts",
                    topology.total_gpus(),
                    shape.num_experts
                )));
            }
            Ok(vanilla_contiguous(
                shape.num_experts,
                shape.num_layers,
                topology,
            ))
        }
        GroupingMode::UniformSpectral => flat_group(profiles, topology, seed, |a, d, s| {
            let clusters = spectral_cluster(a, d, s)?;
            let band = SizeBand::exact(a.n(), d);
            Ok((refine_to_band(a, &clusters, band)?, None))
        }),
        other => Err(Error::invalid(format!(
            "`{}` is not a baseline mode",
            other.name()
        ))),
    }
}

fn flat_group(
    profiles: &[LayerProfile],
    topology: ClusterTopology,
    seed: u64,
    step: impl Fn(&AffinityMatrix, usize, u64) -> Result<(Grouping, Option<RatioDiagnostics>)>,
) -> Result<PlacementPlan> {
    let n = check_profiles(profiles, &topology)?;
    let mut layers = Vec::with_capacity(profiles.len());
    let mut diagnostics = Vec::new();
    for p in profiles {
        let (grouping, diag) = step(
            &p.affinity,
            topology.total_gpus(),
            derive_key(seed, &[p.layer as u64, 2]),
        )?;
        if let Some(mut d) = diag {
            d.layer = p.layer;
            diagnostics.push(d);
        }
        let mut groups = grouping.groups;
        by_descending_load(&mut groups, &p.load);
        let mut map = vec![usize::MAX; n];
        for (gpu, g) in groups.iter().enumerate() {
            for &e in g {
                map[e] = gpu;
            }
        }
        layers.push(map);
    }
    let plan = PlacementPlan {
        topology,
        num_experts: n,
        layers,
        ratio_selection: diagnostics,
    };
    plan.validate()?;
    Ok(plan)
}

/// Placement for any [`GroupingMode`].
pub fn plan_placement(
    shape: &ModelShape,
    profiles: &[LayerProfile],
    topology: ClusterTopology,
    mode: GroupingMode,
    ratio: &RatioChoice,
    seed: u64,
) -> Result<PlacementPlan> {
    if profiles.len() != shape.num_layers {
        return Err(Error::integrity(format!(
            "{} layer profiles for a {}-layer model",
            profiles.len(),
            shape.num_layers
        )));
    }
    match mode {
        GroupingMode::VanillaContiguous | GroupingMode::UniformSpectral => {
            baseline_group(shape, profiles, topology, mode, seed)
        }
        GroupingMode::FullyNonUniform => flat_group(profiles, topology, seed, |a, d, s| {
            Ok((fully_non_uniform_group(a, d, s)?, None))
        }),
        GroupingMode::Controlled => flat_group(profiles, topology, seed, |a, d, s| {
            let (g, r, band, selection) = bounded_group(a, d, ratio, s)?;
            Ok((
                g,
                Some(RatioDiagnostics {
                    layer: 0,
                    node: None,
                    ratio: r,
                    band,
                    selection,
                }),
            ))
        }),
        GroupingMode::Hierarchical => hierarchical_group(profiles, topology, ratio, seed),
    }
}

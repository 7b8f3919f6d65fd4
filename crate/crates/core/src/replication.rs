//! Load-skew driven replication of hot experts.
//!
//! For each layer the heaviest GPU's load skew `ρ = W_max / W̄` sets the
//! replica count `min(max(1, ⌊ρ⌋), n_gpu − 1)`. The most loaded experts of
//! that GPU whose ranked cumulative load first exceeds
//! `W_max · n_replica / (1 + n_replica)` are copied to the `n_replica` GPUs
//! with the lowest pre-replication load. Primary placement is never touched.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::affinity::{ExpertLoadVector, LayerProfile};
use crate::error::{Error, Result};
use crate::grouping::PlacementPlan;
use crate::routing::{polling_weights, predict_loads, PollingWeights, PredictedLoads, SharePolicy};

/// Per-GPU load statistics of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLoadStats {
    pub loads: Vec<u64>,
    pub heaviest: usize,
    pub w_max: u64,
    pub w_mean: f64,
    /// `None` when every load is zero.
    pub rho: Option<f64>,
}

/// Sums expert loads per GPU for every layer of `plan`.
pub fn compute_group_loads(
    plan: &PlacementPlan,
    loads: &[ExpertLoadVector],
) -> Result<Vec<GroupLoadStats>> {
    if loads.len() != plan.num_layers() {
        return Err(Error::integrity(format!(
            "{} load vectors for a {}-layer plan",
            loads.len(),
            plan.num_layers()
        )));
    }
    let gpus = plan.topology.total_gpus();
    loads
        .iter()
        .enumerate()
        .map(|(layer, lv)| {
            if lv.n() != plan.num_experts {
                return Err(Error::integrity(format!(
                    "layer {layer}: {} expert loads for {} experts",
                    lv.n(),
                    plan.num_experts
                )));
            }
            let mut per_gpu = vec![0u64; gpus];
            for (e, &l) in lv.load.iter().enumerate() {
                per_gpu[plan.gpu_of(layer, e)] += l;
            }
            Ok(group_stats(per_gpu))
        })
        .collect()
}

pub fn group_stats(loads: Vec<u64>) -> GroupLoadStats {
    let (heaviest, w_max) =
        loads.iter().copied().enumerate().fold(
            (0, 0),
            |best, (g, l)| if l > best.1 { (g, l) } else { best },
        );
    let w_mean = loads.iter().sum::<u64>() as f64 / loads.len().max(1) as f64;
    let rho = (w_mean > 0.0).then(|| w_max as f64 / w_mean);
    GroupLoadStats {
        loads,
        heaviest,
        w_max,
        w_mean,
        rho,
    }
}

/// `min(max(1, ⌊ρ⌋), n_gpu − 1)`.
pub fn replica_count(rho: f64, n_gpu: usize) -> Result<usize> {
    if n_gpu < 2 {
        return Err(Error::invalid(format!(
            "replication needs at least 2 GPUs, got {n_gpu}"
        )));
    }
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::invalid(format!(
            "load skew must be finite and >= 1, got {rho}"
        )));
    }
    Ok((rho.floor() as usize).max(1).min(n_gpu - 1))
}

/// Shortest prefix of the experts ranked by descending load (ties by id)
/// whose cumulative load strictly exceeds `w_max · n/(1 + n)`.
pub fn select_hot_experts(
    group_loads: &[(usize, f64)],
    w_max: f64,
    n_replica: usize,
) -> Vec<usize> {
    let mut ranked = group_loads.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let threshold = w_max * n_replica as f64 / (1.0 + n_replica as f64);
    let mut cumulative = 0.0;
    let mut hot = Vec::new();
    for (e, l) in ranked {
        hot.push(e);
        cumulative += l;
        if cumulative > threshold {
            break;
        }
    }
    hot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationMode {
    #[default]
    None,
    /// One replica of the hot experts on the least-loaded GPU.
    FixedOne,
    /// Replica count from load skew.
    Dynamic,
    /// The most loaded experts of each layer copied to every GPU.
    EveryGpuHot,
    /// The experts with the highest affinity degree copied to every GPU.
    EveryGpuCollaborative,
}

impl ReplicationMode {
    pub const ALL: [ReplicationMode; 5] = [
        ReplicationMode::None,
        ReplicationMode::FixedOne,
        ReplicationMode::Dynamic,
        ReplicationMode::EveryGpuHot,
        ReplicationMode::EveryGpuCollaborative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReplicationMode::None => "none",
            ReplicationMode::FixedOne => "fixed_one",
            ReplicationMode::Dynamic => "dynamic",
            ReplicationMode::EveryGpuHot => "every_gpu_hot",
            ReplicationMode::EveryGpuCollaborative => "every_gpu_collaborative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown replication mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub mode: ReplicationMode,
    /// Experts per layer copied by the `every_gpu_*` modes. An experiment
    /// knob with no canonical value.
    pub every_gpu_count: usize,
    pub share: SharePolicy,
    /// Parameters per expert, for the memory overhead report.
    pub expert_params: Option<u64>,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        Self {
            mode: ReplicationMode::None,
            every_gpu_count: 2,
            share: SharePolicy::GroupLoad,
            expert_params: None,
        }
    }
}

impl ReplicationOptions {
    pub fn with_mode(mode: ReplicationMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotExpert {
    pub expert: usize,
    pub primary_gpu: usize,
    pub replicas: Vec<usize>,
    pub load: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReplicas {
    pub layer: usize,
    pub rho: Option<f64>,
    pub n_replica: usize,
    pub hot: Vec<HotExpert>,
    #[serde(rename = "W_r")]
    pub w_r: u64,
    /// Polling weights keyed by expert, then GPU.
    pub weights: BTreeMap<usize, PollingWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<PredictedLoads>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl LayerReplicas {
    fn skipped(layer: usize, rho: Option<f64>, reason: impl Into<String>) -> Self {
        Self {
            layer,
            rho,
            n_replica: 0,
            hot: Vec::new(),
            w_r: 0,
            weights: BTreeMap::new(),
            predicted: None,
            skipped: Some(reason.into()),
        }
    }
}

/// Replica locations and routing weights for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPlan {
    pub mode: ReplicationMode,
    pub layers: Vec<LayerReplicas>,
    /// Secondary copies hosted by each GPU, summed over layers.
    pub replicas_per_gpu: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead_params_per_gpu: Option<Vec<u64>>,
}

impl ReplicaPlan {
    /// A plan without replicas.
    pub fn none(num_layers: usize, num_gpus: usize) -> Self {
        Self {
            mode: ReplicationMode::None,
            layers: (0..num_layers)
                .map(|l| LayerReplicas::skipped(l, None, "replication disabled"))
                .collect(),
            replicas_per_gpu: vec![0; num_gpus],
            overhead_params_per_gpu: None,
        }
    }

    /// Per-layer `expert → weights` lookup tables for the simulator. Experts
    /// without replicas map to `None`.
    pub fn routing_tables(
        &self,
        num_layers: usize,
        num_experts: usize,
    ) -> Result<Vec<Vec<Option<&PollingWeights>>>> {
        let mut tables = vec![vec![None; num_experts]; num_layers];
        for lr in &self.layers {
            let table = tables.get_mut(lr.layer).ok_or_else(|| {
                Error::integrity(format!(
                    "replica plan names layer {} of {num_layers}",
                    lr.layer
                ))
            })?;
            for (&e, w) in &lr.weights {
                let slot = table.get_mut(e).ok_or_else(|| {
                    Error::integrity(format!("replica plan names expert {e} of {num_experts}"))
                })?;
                *slot = Some(w);
            }
        }
        Ok(tables)
    }

    /// Checks replica invariants against the primary placement.
    pub fn validate(&self, plan: &PlacementPlan) -> Result<()> {
        let gpus = plan.topology.total_gpus();
        for lr in &self.layers {
            if lr.layer >= plan.num_layers() {
                return Err(Error::integrity(format!(
                    "replica layer {} outside plan",
                    lr.layer
                )));
            }
            for h in &lr.hot {
                if h.expert >= plan.num_experts || h.primary_gpu != plan.gpu_of(lr.layer, h.expert)
                {
                    return Err(Error::integrity(format!(
                        "layer {} expert {}: primary GPU disagrees with placement",
                        lr.layer, h.expert
                    )));
                }
                let mut all = h.replicas.clone();
                all.push(h.primary_gpu);
                all.sort_unstable();
                all.dedup();
                if all.len() != h.replicas.len() + 1 || all.iter().any(|&g| g >= gpus) {
                    return Err(Error::integrity(format!(
                        "layer {} expert {}: replicas must be distinct GPUs other than the primary",
                        lr.layer, h.expert
                    )));
                }
                let w = lr.weights.get(&h.expert).ok_or_else(|| {
                    Error::integrity(format!(
                        "layer {} expert {} has no weights",
                        lr.layer, h.expert
                    ))
                })?;
                if !w.gpus().eq(all.iter().copied()) {
                    return Err(Error::integrity(format!(
                        "layer {} expert {}: weights do not match hosts",
                        lr.layer, h.expert
                    )));
                }
            }
        }
        Ok(())
    }
}

/// GPUs other than `exclude`, by ascending (load, id).
fn least_loaded(loads: &[u64], exclude: usize, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..loads.len()).filter(|&g| g != exclude).collect();
    order.sort_by_key(|&g| (loads[g], g));
    order.truncate(count);
    order
}

fn top_by<K: PartialOrd>(n: usize, count: usize, key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order
}

/// Builds the replica plan for `plan` from profiled loads.
pub fn plan_replication(
    plan: &PlacementPlan,
    profiles: &[LayerProfile],
    options: &ReplicationOptions,
) -> Result<ReplicaPlan> {
    let gpus = plan.topology.total_gpus();
    if options.mode == ReplicationMode::None {
        return Ok(ReplicaPlan::none(plan.num_layers(), gpus));
    }
    if gpus < 2 {
        return Err(Error::invalid(format!(
            "replication mode `{}` needs at least 2 GPUs",
            options.mode.name()
        )));
    }
    let loads: Vec<ExpertLoadVector> = profiles.iter().map(|p| p.load.clone()).collect();
    let stats = compute_group_loads(plan, &loads)?;

    let mut layers = Vec::with_capacity(plan.num_layers());
    for (layer, st) in stats.iter().enumerate() {
        let load = &loads[layer];
        let Some(rho) = st.rho else {
            warn!("layer {layer}: no load recorded, not replicating");
            layers.push(LayerReplicas::skipped(layer, None, "no load recorded"));
            continue;
        };
        let lr = match options.mode {
            ReplicationMode::None => unreachable!("handled above"),
            ReplicationMode::Dynamic | ReplicationMode::FixedOne => {
                let n_replica = match options.mode {
                    ReplicationMode::Dynamic => replica_count(rho, gpus)?,
                    _ => 1,
                };
                let primary = st.heaviest;
                let members: Vec<(usize, f64)> = plan.gpu_sets(layer)[primary]
                    .iter()
                    .map(|&e| (e, load.load[e] as f64))
                    .collect();
                let hot = select_hot_experts(&members, st.w_max as f64, n_replica);
                let targets = least_loaded(&st.loads, primary, n_replica);
                if targets.is_empty() {
                    warn!("layer {layer}: no replica target available");
                    layers.push(LayerReplicas::skipped(
                        layer,
                        Some(rho),
                        "no replica target",
                    ));
                    continue;
                }
                let w_r = load.sum_over(&hot);
                let target_loads: Vec<f64> = targets.iter().map(|&g| st.loads[g] as f64).collect();
                let predicted = predict_loads(
                    st.w_max as f64,
                    w_r as f64,
                    &target_loads,
                    n_replica,
                    options.share,
                )?;
                let mut hosts = vec![(primary, predicted.heaviest)];
                hosts.extend(
                    targets
                        .iter()
                        .copied()
                        .zip(predicted.replicas.iter().copied()),
                );
                let weights = polling_weights(&hosts)?;
                LayerReplicas {
                    layer,
                    rho: Some(rho),
                    n_replica,
                    hot: hot
                        .iter()
                        .map(|&e| HotExpert {
                            expert: e,
                            primary_gpu: primary,
                            replicas: targets.clone(),
                            load: load.load[e],
                        })
                        .collect(),
                    w_r,
                    weights: hot.iter().map(|&e| (e, weights.clone())).collect(),
                    predicted: Some(predicted),
                    skipped: None,
                }
            }
            ReplicationMode::EveryGpuHot | ReplicationMode::EveryGpuCollaborative => {
                let n = plan.num_experts;
                let count = options.every_gpu_count.min(n);
                let chosen = if options.mode == ReplicationMode::EveryGpuHot {
                    top_by(n, count, |e| load.load[e] as f64)
                } else {
                    let a = &profiles[layer].affinity;
                    top_by(n, count, |e| a.degree(e))
                };
                // no heaviest-group prediction applies; weights follow the
                // inverse pre-replication GPU loads
                let gpu_weights = polling_weights(
                    &st.loads
                        .iter()
                        .enumerate()
                        .map(|(g, &l)| (g, l as f64))
                        .collect::<Vec<_>>(),
                )?;
                LayerReplicas {
                    layer,
                    rho: Some(rho),
                    n_replica: gpus - 1,
                    hot: chosen
                        .iter()
                        .map(|&e| {
                            let primary = plan.gpu_of(layer, e);
                            HotExpert {
                                expert: e,
                                primary_gpu: primary,
                                replicas: (0..gpus).filter(|&g| g != primary).collect(),
                                load: load.load[e],
                            }
                        })
                        .collect(),
                    w_r: load.sum_over(&chosen),
                    weights: chosen.iter().map(|&e| (e, gpu_weights.clone())).collect(),
                    predicted: None,
                    skipped: None,
                }
            }
        };
        layers.push(lr);
    }

    let mut replicas_per_gpu = vec![0usize; gpus];
    for lr in &layers {
        for h in &lr.hot {
            for &g in &h.replicas {
                replicas_per_gpu[g] += 1;
            }
        }
    }
    let overhead_params_per_gpu = options
        .expert_params
        .map(|p| replicas_per_gpu.iter().map(|&c| c as u64 * p).collect());
    let out = ReplicaPlan {
        mode: options.mode,
        layers,
        replicas_per_gpu,
        overhead_params_per_gpu,
    };
    out.validate(plan)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::AffinityMatrix;
    use crate::topology::ClusterTopology;

    fn one_per_gpu(loads: &[u64]) -> (PlacementPlan, Vec<LayerProfile>) {
        let n = loads.len();
        let plan = PlacementPlan {
            topology: ClusterTopology::new(1, n).unwrap(),
            num_experts: n,
            layers: vec![(0..n).collect()],
            ratio_selection: Vec::new(),
        };
        let profiles = vec![LayerProfile {
            layer: 0,
            affinity: AffinityMatrix::zeros(n),
            load: ExpertLoadVector {
                load: loads.to_vec(),
            },
        }];
        (plan, profiles)
    }

    #[test]
    fn group_load_examples() {
        let (plan, p) = one_per_gpu(&[10, 2, 2, 2]);
        let st = &compute_group_loads(&plan, &[p[0].load.clone()]).unwrap()[0];
        assert_eq!((st.w_max, st.heaviest), (10, 0));
        assert_eq!(st.w_mean, 4.0);
        assert_eq!(st.rho, Some(2.5));
        assert_eq!(group_stats(vec![3, 3, 3]).rho, Some(1.0));
        assert_eq!(group_stats(vec![0, 0]).rho, None);
    }

    #[test]
    fn replica_count_examples() {
        assert_eq!(replica_count(2.5, 4).unwrap(), 2);
        assert_eq!(replica_count(1.0, 8).unwrap(), 1);
        assert_eq!(replica_count(7.8, 4).unwrap(), 3);
        assert!(replica_count(2.0, 1).is_err());
        assert!(replica_count(0.5, 4).is_err());
    }

    #[test]
    fn hot_expert_examples() {
        let g = [(0, 50.0), (1, 30.0), (2, 15.0), (3, 5.0)];
        assert_eq!(select_hot_experts(&g, 100.0, 1), vec![0, 1]);
        assert_eq!(
            select_hot_experts(&[(0, 90.0), (1, 10.0)], 100.0, 1),
            vec![0]
        );
        assert_eq!(select_hot_experts(&[(7, 12.0)], 12.0, 3), vec![7]);
        // ties rank by id
        assert_eq!(
            select_hot_experts(&[(5, 10.0), (2, 10.0), (9, 10.0)], 30.0, 1),
            vec![2, 5]
        );
    }

    #[test]
    fn dynamic_on_skewed_layer() {
        let (plan, p) = one_per_gpu(&[10, 2, 2, 2]);
        let rp = plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::Dynamic),
        )
        .unwrap();
        let lr = &rp.layers[0];
        assert_eq!(lr.n_replica, 2);
        assert_eq!(lr.hot.len(), 1);
        assert_eq!(lr.hot[0].replicas, vec![1, 2]);
        assert_eq!(lr.w_r, 10);
        assert_eq!(rp.replicas_per_gpu, vec![0, 1, 1, 0]);
        let w = &lr.weights[&0];
        assert_eq!(w.gpus().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!((w.entries().iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_layer_still_gets_one_replica() {
        let (plan, p) = one_per_gpu(&[5, 5, 5, 5]);
        let rp = plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::Dynamic),
        )
        .unwrap();
        assert_eq!(rp.layers[0].n_replica, 1);
        assert_eq!(rp.layers[0].hot[0].expert, 0);
        assert_eq!(rp.layers[0].hot[0].replicas, vec![1]);
    }

    #[test]
    fn fixed_one_targets_least_loaded() {
        let (plan, p) = one_per_gpu(&[10, 4, 1, 2]);
        let rp = plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::FixedOne),
        )
        .unwrap();
        assert_eq!(rp.layers[0].n_replica, 1);
        assert_eq!(rp.layers[0].hot[0].replicas, vec![2]);
    }

    #[test]
    fn every_gpu_modes() {
        let n = 4;
        let plan = PlacementPlan {
            topology: ClusterTopology::new(1, 2).unwrap(),
            num_experts: n,
            layers: vec![vec![0, 0, 1, 1]],
            ratio_selection: Vec::new(),
        };
        let profiles = vec![LayerProfile {
            layer: 0,
            affinity: AffinityMatrix::from_pairs(4, [(0, 3, 9.0), (1, 3, 1.0)]).unwrap(),
            load: ExpertLoadVector {
                load: vec![1, 8, 5, 2],
            },
        }];
        let mut opts = ReplicationOptions::with_mode(ReplicationMode::EveryGpuHot);
        let rp = plan_replication(&plan, &profiles, &opts).unwrap();
        let experts: Vec<_> = rp.layers[0].hot.iter().map(|h| h.expert).collect();
        assert_eq!(experts, vec![1, 2]);
        opts.mode = ReplicationMode::EveryGpuCollaborative;
        opts.every_gpu_count = 1;
        let rp = plan_replication(&plan, &profiles, &opts).unwrap();
        assert_eq!(rp.layers[0].hot[0].expert, 3);
        assert_eq!(rp.layers[0].hot[0].replicas, vec![0]);
    }

    #[test]
    fn none_and_degenerate_layers() {
        let (plan, p) = one_per_gpu(&[0, 0, 0]);
        let rp = plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::Dynamic),
        )
        .unwrap();
        assert!(rp.layers[0].skipped.is_some());
        let rp = plan_replication(&plan, &p, &ReplicationOptions::default()).unwrap();
        assert_eq!(rp, ReplicaPlan::none(1, 3));
        let (plan, p) = one_per_gpu(&[4]);
        assert!(plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::Dynamic)
        )
        .is_err());
    }

    #[test]
    fn overhead_accounting() {
        let (plan, p) = one_per_gpu(&[10, 2, 2, 2]);
        let mut opts = ReplicationOptions::with_mode(ReplicationMode::Dynamic);
        opts.expert_params = Some(1000);
        let rp = plan_replication(&plan, &p, &opts).unwrap();
        assert_eq!(rp.overhead_params_per_gpu, Some(vec![0, 1000, 1000, 0]));
    }

    #[test]
    fn json_shape() {
        let (plan, p) = one_per_gpu(&[10, 2, 2, 2]);
        let rp = plan_replication(
            &plan,
            &p,
            &ReplicationOptions::with_mode(ReplicationMode::Dynamic),
        )
        .unwrap();
        let v = serde_json::to_value(&rp).unwrap();
        let layer = &v["layers"][0];
        assert_eq!(layer["n_replica"], 2);
        assert_eq!(layer["W_r"], 10);
        assert_eq!(layer["hot"][0]["primary_gpu"], 0);
        assert!(layer["weights"]["0"]["1"].is_number());
        let back: ReplicaPlan = serde_json::from_value(v).unwrap();
        back.validate(&plan).unwrap();
    }
}

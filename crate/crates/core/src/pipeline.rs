//! End-to-end stages with content-hashed artifacts.
//!
//! Each artifact records the hash of what it was built from, so that a
//! report can always be traced back to its trace and plans.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_profile, LayerProfile};
use crate::error::{Error, Result};
use crate::grouping::{plan_placement, GroupingMode, PlacementPlan, RatioChoice};
use crate::hashing::json_hash;
use crate::replication::{plan_replication, ReplicaPlan, ReplicationOptions};
use crate::simulator::{simulate, SimOptions, SimReport};
use crate::topology::ClusterTopology;
use crate::trace::{ModelShape, RoutingTrace};

/// Affinity and load statistics of one or more traces of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub shape: ModelShape,
    pub num_tokens: usize,
    pub trace_hashes: Vec<String>,
    pub layers: Vec<LayerProfile>,
}

impl Profile {
    pub fn content_hash(&self) -> String {
        json_hash(self)
    }
}

/// Profiles the given traces jointly; their statistics are summed.
pub fn profile_traces(traces: &[RoutingTrace]) -> Result<Profile> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("no traces to profile"))?;
    let shape = first.shape();
    let mut layers: Option<Vec<LayerProfile>> = None;
    let mut hashes = Vec::with_capacity(traces.len());
    let mut num_tokens = 0;
    for t in traces {
        if t.shape() != shape {
            return Err(Error::integrity(format!(
                "cannot profile traces of different shapes: {:?} vs {:?}",
                shape,
                t.shape()
            )));
        }
        num_tokens += t.num_tokens();
        hashes.push(t.content_hash());
        let p = build_profile(t);
        match layers.as_mut() {
            None => layers = Some(p),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&p) {
                    a.merge(b)?;
                }
            }
        }
    }
    if num_tokens == 0 {
        return Err(Error::integrity("trace contains no tokens"));
    }
    Ok(Profile {
        shape,
        num_tokens,
        trace_hashes: hashes,
        layers: layers.expect("at least one trace"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub topology: ClusterTopology,
    pub grouping: GroupingMode,
    pub ratio: RatioChoice,
    pub replication: ReplicationOptions,
    pub seed: u64,
}

/// Placement plan plus provenance, as written to disk. The provenance
/// fields sit next to the plan's own top-level fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanArtifact {
    pub grouping: GroupingMode,
    pub ratio: String,
    pub seed: u64,
    pub shape: ModelShape,
    pub profile_hash: String,
    pub placement: PlacementPlan,
}

#[derive(Serialize, Deserialize)]
struct PlanProvenance {
    grouping: GroupingMode,
    ratio: String,
    seed: u64,
    shape: ModelShape,
    profile_hash: String,
}

impl PlanArtifact {
    pub fn content_hash(&self) -> String {
        json_hash(self)
    }
}

/// Replica plan plus provenance, as written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaArtifact {
    pub profile_hash: String,
    pub placement_hash: String,
    pub options: ReplicationOptions,
    pub replicas: ReplicaPlan,
}

#[derive(Serialize, Deserialize)]
struct ReplicaProvenance {
    profile_hash: String,
    placement_hash: String,
    options: ReplicationOptions,
}

// `#[serde(flatten)]` cannot carry the integer-keyed maps inside the plans,
// so both artifacts merge JSON objects by hand.
fn merge_objects<S: serde::Serializer>(
    a: serde_json::Value,
    b: serde_json::Value,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::Error as _;
    match (a, b) {
        (serde_json::Value::Object(mut a), serde_json::Value::Object(b)) => {
            a.extend(b);
            a.serialize(s)
        }
        _ => Err(S::Error::custom("artifact parts must be JSON objects")),
    }
}

fn split_object<'de, D, P, T>(d: D) -> std::result::Result<(P, T), D::Error>
where
    D: serde::Deserializer<'de>,
    P: serde::de::DeserializeOwned,
    T: serde::de::DeserializeOwned,
{
    use serde::de::Error as _;
    let v = serde_json::Value::deserialize(d)?;
    let p = P::deserialize(&v).map_err(D::Error::custom)?;
    let t = T::deserialize(&v).map_err(D::Error::custom)?;
    Ok((p, t))
}

impl Serialize for PlanArtifact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let prov = serde_json::to_value(PlanProvenance {
            grouping: self.grouping,
            ratio: self.ratio.clone(),
            seed: self.seed,
            shape: self.shape,
            profile_hash: self.profile_hash.clone(),
        })
        .map_err(S::Error::custom)?;
        let plan = serde_json::to_value(&self.placement).map_err(S::Error::custom)?;
        merge_objects(plan, prov, s)
    }
}

impl<'de> Deserialize<'de> for PlanArtifact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (p, placement): (PlanProvenance, PlacementPlan) = split_object(d)?;
        Ok(Self {
            grouping: p.grouping,
            ratio: p.ratio,
            seed: p.seed,
            shape: p.shape,
            profile_hash: p.profile_hash,
            placement,
        })
    }
}

impl Serialize for ReplicaArtifact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let prov = serde_json::to_value(ReplicaProvenance {
            profile_hash: self.profile_hash.clone(),
            placement_hash: self.placement_hash.clone(),
            options: self.options.clone(),
        })
        .map_err(S::Error::custom)?;
        let plan = serde_json::to_value(&self.replicas).map_err(S::Error::custom)?;
        merge_objects(plan, prov, s)
    }
}

impl<'de> Deserialize<'de> for ReplicaArtifact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (p, replicas): (ReplicaProvenance, ReplicaPlan) = split_object(d)?;
        Ok(Self {
            profile_hash: p.profile_hash,
            placement_hash: p.placement_hash,
            options: p.options,
            replicas,
        })
    }
}

impl ReplicaArtifact {
    pub fn content_hash(&self) -> String {
        json_hash(self)
    }
}

/// Placement for the configured grouping mode, then replicas and weights.
pub fn build_plans(
    profile: &Profile,
    config: &PlanConfig,
) -> Result<(PlanArtifact, ReplicaArtifact)> {
    let placement = plan_placement(
        &profile.shape,
        &profile.layers,
        config.topology,
        config.grouping,
        &config.ratio,
        config.seed,
    )?;
    let replicas = plan_replication(&placement, &profile.layers, &config.replication)?;
    let profile_hash = profile.content_hash();
    let plan = PlanArtifact {
        grouping: config.grouping,
        ratio: config.ratio.to_string(),
        seed: config.seed,
        shape: profile.shape,
        profile_hash: profile_hash.clone(),
        placement,
    };
    let replica = ReplicaArtifact {
        profile_hash,
        placement_hash: plan.content_hash(),
        options: config.replication.clone(),
        replicas,
    };
    Ok((plan, replica))
}

/// Simulates `trace` under the given plans. The trace may differ from the
/// one the plans were profiled on as long as the shapes agree.
pub fn run_simulation(
    trace: &RoutingTrace,
    plan: &PlanArtifact,
    replicas: &ReplicaArtifact,
    options: &SimOptions,
    name: Option<&str>,
) -> Result<SimReport> {
    if trace.shape() != plan.shape {
        return Err(Error::integrity(format!(
            "plan was built for {:?}, trace has {:?}",
            plan.shape,
            trace.shape()
        )));
    }
    if replicas.placement_hash != plan.content_hash() {
        return Err(Error::integrity(
            "replica plan was built for a different placement",
        ));
    }
    let mut report = simulate(trace, &plan.placement, &replicas.replicas, options)?;
    let mut labels = BTreeMap::new();
    labels.insert("grouping".into(), plan.grouping.name().into());
    labels.insert("ratio".into(), plan.ratio.clone());
    labels.insert("replication".into(), replicas.options.mode.name().into());
    labels.insert("plan_hash".into(), plan.content_hash());
    labels.insert("replica_hash".into(), replicas.content_hash());
    labels.insert("profile_hash".into(), plan.profile_hash.clone());
    let default_name = format!(
        "{}+{}+{}",
        plan.grouping.name(),
        replicas.options.mode.name(),
        options.policy.name()
    );
    labels.insert("name".into(), name.map_or(default_name, str::to_owned));
    report.config.labels = labels;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replication::ReplicationMode;
    use crate::routing::RoutingPolicy;
    use crate::trace::{generate_synthetic_trace, SyntheticSpec};

    fn trace(seed: u64) -> RoutingTrace {
        generate_synthetic_trace(&SyntheticSpec {
            shape: ModelShape::new(2, 16, 4).unwrap(),
            num_tokens: 400,
            num_blocks: 4,
            within_block_prob: 0.9,
            popularity_skew: 1.0,
            seed,
        })
        .unwrap()
    }

    fn config() -> PlanConfig {
        PlanConfig {
            topology: ClusterTopology::new(2, 2).unwrap(),
            grouping: GroupingMode::Hierarchical,
            ratio: RatioChoice::auto(),
            replication: ReplicationOptions::with_mode(ReplicationMode::Dynamic),
            seed: 3,
        }
    }

    #[test]
    fn joint_profile_sums_counts() {
        let (a, b) = (trace(1), trace(2));
        let joint = profile_traces(&[a.clone(), b.clone()]).unwrap();
        let pa = profile_traces(&[a]).unwrap();
        let pb = profile_traces(&[b]).unwrap();
        assert_eq!(joint.num_tokens, 800);
        assert_eq!(joint.trace_hashes.len(), 2);
        for l in 0..2 {
            let total = pa.layers[l].load.total() + pb.layers[l].load.total();
            assert_eq!(joint.layers[l].load.total(), total);
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(profile_traces(&[]).is_err());
        let empty = RoutingTrace::from_records(ModelShape::new(1, 4, 2).unwrap(), 0, []).unwrap();
        assert!(profile_traces(&[empty]).is_err());
    }

    #[test]
    fn artifacts_round_trip_and_cross_trace_simulation() {
        let profile = profile_traces(&[trace(1)]).unwrap();
        let (plan, rep) = build_plans(&profile, &config()).unwrap();
        let plan_back: PlanArtifact =
            serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(plan_back, plan);
        let rep_back: ReplicaArtifact =
            serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(rep_back.replicas.layers.len(), 2);

        let opts = SimOptions::new(RoutingPolicy::Tar, 5);
        let same = run_simulation(&trace(1), &plan, &rep, &opts, None).unwrap();
        let other = run_simulation(&trace(2), &plan, &rep, &opts, None).unwrap();
        assert_ne!(same.config.trace_hash, other.config.trace_hash);
        let again = run_simulation(&trace(1), &plan, &rep, &opts, None).unwrap();
        assert_eq!(same.content_hash(), again.content_hash());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let profile = profile_traces(&[trace(1)]).unwrap();
        let (plan, rep) = build_plans(&profile, &config()).unwrap();
        let wide = generate_synthetic_trace(&SyntheticSpec {
            shape: ModelShape::new(2, 32, 4).unwrap(),
            num_tokens: 10,
            num_blocks: 2,
            within_block_prob: 0.5,
            popularity_skew: 0.0,
            seed: 1,
        })
        .unwrap();
        assert!(run_simulation(
            &wide,
            &plan,
            &rep,
            &SimOptions::new(RoutingPolicy::Wrr, 0),
            None
        )
        .is_err());
    }
}

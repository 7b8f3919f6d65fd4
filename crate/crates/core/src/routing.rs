//! Replica selection: post-replication load prediction, inverse-load polling
//! weights, weighted random choice and the locality-first policy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::ClusterTopology;

/// Predicted loads of the hosts of replicated experts, floored at this many
/// tokens before inversion.
pub const LOAD_FLOOR: f64 = 1.0;

/// Quantity that is split evenly across the `n_replica + 1` instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharePolicy {
    /// `W_p = W_max / (n_replica + 1)`.
    #[default]
    GroupLoad,
    /// `W_p = W_r / (n_replica + 1)`, the load of the replicated experts only.
    HotLoad,
}

/// Predicted post-replication loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLoads {
    /// Per-instance share `W_p`.
    pub per_instance: f64,
    /// `W'_max = W_max − W_r + W_p`, for the GPU that was heaviest.
    pub heaviest: f64,
    /// `W'_i = W_i + W_p` for each replica-hosting GPU, in input order.
    pub replicas: Vec<f64>,
}

pub fn predict_loads(
    w_max: f64,
    w_r: f64,
    replica_loads: &[f64],
    n_replica: usize,
    share: SharePolicy,
) -> Result<PredictedLoads> {
    if n_replica == 0 {
        return Err(Error::invalid("load prediction needs at least one replica"));
    }
    if w_r > w_max {
        return Err(Error::integrity(format!(
            "replicated load {w_r} exceeds the heaviest group load {w_max}"
        )));
    }
    let per_instance = match share {
        SharePolicy::GroupLoad => w_max,
        SharePolicy::HotLoad => w_r,
    } / (n_replica as f64 + 1.0);
    Ok(PredictedLoads {
        per_instance,
        heaviest: w_max - w_r + per_instance,
        replicas: replica_loads.iter().map(|w| w + per_instance).collect(),
    })
}

/// Normalized routing probabilities over the GPUs hosting one expert,
/// ordered by ascending GPU id.
#[derive(Debug, Clone, PartialEq)]
pub struct PollingWeights {
    entries: Vec<(usize, f64)>,
}

impl PollingWeights {
    /// Normalizes arbitrary positive weights.
    pub fn from_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = weights.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::invalid("polling weights need at least one GPU"));
        }
        entries.sort_by_key(|&(g, _)| g);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::integrity("polling weights list a GPU twice"));
        }
        if let Some(&(g, w)) = entries.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::integrity(format!(
                "GPU {g} has non-positive weight {w}"
            )));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        entries.iter_mut().for_each(|(_, w)| *w /= total);
        Ok(Self { entries })
    }

    pub fn single(gpu: usize) -> Self {
        Self {
            entries: vec![(gpu, 1.0)],
        }
    }

    pub fn gpus(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(g, _)| g)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn weight(&self, gpu: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|&&(g, _)| g == gpu)
            .map(|&(_, w)| w)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inverse-CDF choice for a uniform draw `u ∈ [0, 1)`.
    pub fn choose_with(&self, u: f64) -> usize {
        pick(self.entries.iter().copied(), 1.0, u)
    }

    /// Inverse-CDF choice restricted to GPUs accepted by `keep`, with the
    /// kept weights renormalized. `None` if nothing is kept.
    pub fn choose_within(&self, u: f64, keep: impl Fn(usize) -> bool) -> Option<usize> {
        let total: f64 = self
            .entries
            .iter()
            .filter(|(g, _)| keep(*g))
            .map(|(_, w)| w)
            .sum();
        if total <= 0.0 {
            return None;
        }
        Some(pick(
            self.entries.iter().copied().filter(|(g, _)| keep(*g)),
            total,
            u,
        ))
    }
}

fn pick(entries: impl Iterator<Item = (usize, f64)>, total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (g, w) in entries {
        acc += w;
        last = g;
        if target < acc {
            return g;
        }
    }
    last
}

fn round_significant(x: f64, digits: usize) -> f64 {
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

impl Serialize for PollingWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<usize, f64> = self
            .entries
            .iter()
            .map(|&(g, w)| (g, round_significant(w, 12)))
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PollingWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = BTreeMap::<usize, f64>::deserialize(d)?;
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(D::Error::custom(format!(
                "polling weights sum to {total}, not 1"
            )));
        }
        Self::from_weights(map).map_err(D::Error::custom)
    }
}

/// Weights inversely proportional to predicted host loads, each load
/// floored at [`LOAD_FLOOR`].
pub fn polling_weights(predicted: &[(usize, f64)]) -> Result<PollingWeights> {
    if let Some(&(g, l)) = predicted.iter().find(|(_, l)| l.is_nan() || *l < 0.0) {
        return Err(Error::invalid(format!(
            "GPU {g} has negative predicted load {l}"
        )));
    }
    PollingWeights::from_weights(predicted.iter().map(|&(g, l)| (g, 1.0 / l.max(LOAD_FLOOR))))
}

/// Weighted random choice of a host.
pub fn choose_by_polling_weight<R: Rng + ?Sized>(weights: &PollingWeights, rng: &mut R) -> usize {
    weights.choose_with(rng.random::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingPolicy {
    /// Weighted choice over all hosts.
    #[default]
    Wrr,
    /// Same GPU, then same node, then any host; weighted within a tier.
    Tar,
}

impl RoutingPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RoutingPolicy::Wrr => "wrr",
            RoutingPolicy::Tar => "tar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wrr" => Ok(RoutingPolicy::Wrr),
            "tar" => Ok(RoutingPolicy::Tar),
            _ => Err(Error::invalid(format!("unknown routing policy `{s}`"))),
        }
    }
}

/// Host for one token/expert pair given a uniform draw `u`.
///
/// Every policy consumes the same single draw, so two policies fed the same
/// stream agree whenever they fall through to the cluster-wide tier.
#[inline]
pub fn route_with_draw(
    token_gpu: usize,
    weights: &PollingWeights,
    policy: RoutingPolicy,
    topology: &ClusterTopology,
    u: f64,
) -> usize {
    if weights.len() == 1 {
        return weights.entries[0].0;
    }
    match policy {
        RoutingPolicy::Wrr => weights.choose_with(u),
        RoutingPolicy::Tar => {
            if weights.gpus().any(|g| g == token_gpu) {
                return token_gpu;
            }
            let node = topology.node_of(token_gpu);
            weights
                .choose_within(u, |g| topology.node_of(g) == node)
                .unwrap_or_else(|| weights.choose_with(u))
        }
    }
}

/// Chooses the GPU that processes `token_gpu`'s activation for an expert
/// hosted on `hosts`. Draws exactly one value from `rng`.
pub fn route_token<R: Rng + ?Sized>(
    token_gpu: usize,
    hosts: &[usize],
    weights: &PollingWeights,
    policy: RoutingPolicy,
    topology: &ClusterTopology,
    rng: &mut R,
) -> Result<usize> {
    let mut sorted = hosts.to_vec();
    sorted.sort_unstable();
    if sorted.is_empty() || !sorted.iter().copied().eq(weights.gpus()) {
        return Err(Error::integrity(format!(
            "hosts {hosts:?} do not match weighted GPUs {:?}",
            weights.gpus().collect::<Vec<_>>()
        )));
    }
    if token_gpu >= topology.total_gpus() {
        return Err(Error::invalid(format!(
            "token GPU {token_gpu} outside the cluster"
        )));
    }
    let u = rng.random::<f64>();
    Ok(route_with_draw(token_gpu, weights, policy, topology, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn prediction_examples() {
        let p = predict_loads(100.0, 80.0, &[20.0], 1, SharePolicy::GroupLoad).unwrap();
        assert!(
            close(p.per_instance, 50.0) && close(p.heaviest, 70.0) && close(p.replicas[0], 70.0)
        );
        let p = predict_loads(120.0, 60.0, &[10.0; 3], 3, SharePolicy::GroupLoad).unwrap();
        assert!(close(p.per_instance, 30.0) && close(p.heaviest, 90.0));
        assert!(p.replicas.iter().all(|&w| close(w, 40.0)));
        let p = predict_loads(64.0, 64.0, &[0.0], 1, SharePolicy::GroupLoad).unwrap();
        assert!(
            close(p.heaviest, 32.0) && close(p.per_instance, 32.0) && close(p.replicas[0], 32.0)
        );
    }

    #[test]
    fn hot_load_share() {
        let p = predict_loads(120.0, 60.0, &[10.0], 3, SharePolicy::HotLoad).unwrap();
        assert!(
            close(p.per_instance, 15.0) && close(p.heaviest, 75.0) && close(p.replicas[0], 25.0)
        );
    }

    #[test]
    fn prediction_rejects_bad_inputs() {
        assert!(matches!(
            predict_loads(10.0, 11.0, &[0.0], 1, SharePolicy::GroupLoad),
            Err(Error::Integrity(_))
        ));
        assert!(predict_loads(10.0, 1.0, &[], 0, SharePolicy::GroupLoad).is_err());
    }

    #[test]
    fn weight_examples() {
        let w = polling_weights(&[(0, 70.0), (1, 70.0)]).unwrap();
        assert!(close(w.weight(0).unwrap(), 0.5) && close(w.weight(1).unwrap(), 0.5));
        let w = polling_weights(&[(0, 90.0), (1, 30.0)]).unwrap();
        assert!(close(w.weight(0).unwrap(), 0.25) && close(w.weight(1).unwrap(), 0.75));
        let w = polling_weights(&[(4, 12.0)]).unwrap();
        assert_eq!(w.entries(), &[(4, 1.0)]);
        // zero load hits the floor instead of dividing by zero
        let w = polling_weights(&[(0, 0.0), (1, 1.0)]).unwrap();
        assert!(close(w.weight(0).unwrap(), 0.5));
        assert!(polling_weights(&[]).is_err());
    }

    #[test]
    fn weighted_choice_frequency() {
        let w = PollingWeights::from_weights([(0, 0.25), (1, 0.75)]).unwrap();
        let mut rng = rng::stream(42, &[]);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| choose_by_polling_weight(&w, &mut rng) == 1)
            .count();
        assert!((hits as f64 / draws as f64 - 0.75).abs() < 0.01);

        let one = PollingWeights::single(3);
        assert!((0..100).all(|_| choose_by_polling_weight(&one, &mut rng) == 3));
    }

    #[test]
    fn seeded_sequences_repeat() {
        let w = PollingWeights::from_weights([(0, 0.2), (1, 0.3), (2, 0.5)]).unwrap();
        let seq = |seed| {
            let mut rng = rng::stream(seed, &[1]);
            (0..50)
                .map(|_| choose_by_polling_weight(&w, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(5), seq(5));
    }

    #[test]
    fn tar_prefers_own_gpu() {
        let topo = ClusterTopology::new(2, 2).unwrap();
        let w = PollingWeights::from_weights([(0, 0.01), (3, 0.99)]).unwrap();
        let mut rng = rng::stream(1, &[]);
        for _ in 0..1000 {
            assert_eq!(
                route_token(0, &[0, 3], &w, RoutingPolicy::Tar, &topo, &mut rng).unwrap(),
                0
            );
        }
    }

    #[test]
    fn tar_stays_on_node() {
        let topo = ClusterTopology::new(2, 2).unwrap();
        let w = PollingWeights::from_weights([(1, 0.3), (2, 0.7)]).unwrap();
        let mut rng = rng::stream(2, &[]);
        for _ in 0..1000 {
            assert_eq!(
                route_token(0, &[1, 2], &w, RoutingPolicy::Tar, &topo, &mut rng).unwrap(),
                1
            );
        }
        let hits = (0..100_000)
            .filter(|_| {
                route_token(0, &[2, 1], &w, RoutingPolicy::Wrr, &topo, &mut rng).unwrap() == 2
            })
            .count();
        assert!((hits as f64 / 100_000.0 - 0.7).abs() < 0.01);
    }

    #[test]
    fn host_mismatch_is_an_error() {
        let topo = ClusterTopology::new(1, 4).unwrap();
        let w = PollingWeights::from_weights([(1, 0.3), (2, 0.7)]).unwrap();
        let mut rng = rng::stream(2, &[]);
        assert!(route_token(0, &[1, 3], &w, RoutingPolicy::Wrr, &topo, &mut rng).is_err());
        assert!(route_token(0, &[], &w, RoutingPolicy::Wrr, &topo, &mut rng).is_err());
    }

    #[test]
    fn serialized_weights_keep_twelve_digits() {
        let w = PollingWeights::from_weights([(0, 1.0), (2, 2.0)]).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, "{\"0\":0.333333333333,\"2\":0.666666666667}");
        let back: PollingWeights = serde_json::from_str(&s).unwrap();
        assert!(close(back.weight(2).unwrap(), 2.0 / 3.0));
        assert!(serde_json::from_str::<PollingWeights>("{\"0\":0.5}").is_err());
    }
}

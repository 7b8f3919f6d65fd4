//! Trace replay over a modeled cluster.
//!
//! Every token lives on a home GPU. Per layer its activation is dispatched to
//! the GPUs that process its selected experts: one copy per distinct target
//! GPU inside the home node, one copy per distinct remote node (landing on
//! the lowest-id target GPU there) plus one intra-node forward per further
//! target GPU in that node. Counts are in tokens.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::PlacementPlan;
use crate::replication::ReplicaPlan;
use crate::rng;
use crate::routing::{route_with_draw, RoutingPolicy};
use crate::topology::ClusterTopology;
use crate::trace::RoutingTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomeScheme {
    #[default]
    RoundRobin,
}

/// Home GPU of each token; fixed across layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenHomeMap {
    homes: Vec<usize>,
}

impl TokenHomeMap {
    #[inline]
    pub fn home(&self, token: usize) -> usize {
        self.homes[token]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.homes
    }
}

/// Token `t` lives on GPU `t mod n_gpu`.
pub fn assign_token_homes(
    num_tokens: usize,
    topology: &ClusterTopology,
    scheme: HomeScheme,
) -> TokenHomeMap {
    match scheme {
        HomeScheme::RoundRobin => TokenHomeMap {
            homes: (0..num_tokens).map(|t| t % topology.total_gpus()).collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub policy: RoutingPolicy,
    pub seed: u64,
    /// Also count the combine phase, which mirrors dispatch.
    #[serde(default)]
    pub include_combine: bool,
    #[serde(default)]
    pub homes: HomeScheme,
}

impl SimOptions {
    pub fn new(policy: RoutingPolicy, seed: u64) -> Self {
        Self {
            policy,
            seed,
            include_combine: false,
            homes: HomeScheme::RoundRobin,
        }
    }
}

/// Inputs echoed into a report for auditing and identity checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: ClusterTopology,
    pub trace_hash: String,
    pub num_tokens: usize,
    #[serde(flatten)]
    pub options: SimOptions,
    /// Free-form descriptors added by the caller (modes, plan hashes, ...).
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransferTotals {
    pub cross_node_tokens: u64,
    pub intra_node_tokens: u64,
}

impl TransferTotals {
    pub fn total(&self) -> u64 {
        self.cross_node_tokens + self.intra_node_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub loads: Vec<u64>,
    pub std: f64,
    pub cross: u64,
    pub intra: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub totals: TransferTotals,
    pub per_layer: Vec<LayerStats>,
    pub mean_layer_load_std: f64,
    pub idle_proxy: u64,
}

impl SimReport {
    /// SHA-256 of the compact JSON encoding.
    pub fn content_hash(&self) -> String {
        crate::hashing::json_hash(self)
    }

    /// One row per layer: `layer,cross,intra,std,gpu0,gpu1,...`.
    pub fn to_csv(&self) -> String {
        let gpus = self.config.topology.total_gpus();
        let mut out = String::from("layer,cross_node_tokens,intra_node_tokens,load_std");
        for g in 0..gpus {
            let _ = write!(out, ",gpu{g}");
        }
        out.push('\n');
        for l in &self.per_layer {
            let _ = write!(out, "{},{},{},{}", l.layer, l.cross, l.intra, l.std);
            for v in &l.loads {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Population standard deviation.
pub fn population_std(values: &[u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<u64>() as f64 / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Replays `trace` against the placement and replicas.
///
/// Each selection draws one value from the `(seed, layer, token)` stream, so
/// results do not depend on evaluation order.
pub fn simulate(
    trace: &RoutingTrace,
    plan: &PlacementPlan,
    replicas: &ReplicaPlan,
    options: &SimOptions,
) -> Result<SimReport> {
    let shape = trace.shape();
    plan.check_shape(&shape)?;
    replicas.validate(plan)?;
    let topology = plan.topology;
    let gpus = topology.total_gpus();
    let homes = assign_token_homes(trace.num_tokens(), &topology, options.homes);
    let tables = replicas.routing_tables(shape.num_layers, shape.num_experts)?;

    let mut per_layer = Vec::with_capacity(shape.num_layers);
    let mut stamp = vec![0u64; gpus];
    let mut epoch = 0u64;
    let mut targets: Vec<usize> = Vec::with_capacity(shape.top_k);
    let mut remote_nodes: Vec<usize> = Vec::with_capacity(shape.top_k);

    for (layer, (placement, table)) in plan.layers.iter().zip(&tables).enumerate() {
        let replicated = table.iter().any(Option::is_some);
        let mut loads = vec![0u64; gpus];
        let (mut cross, mut intra) = (0u64, 0u64);

        for (token, experts) in trace.layer(layer).enumerate() {
            let home = homes.home(token);
            let home_node = topology.node_of(home);
            let mut stream =
                replicated.then(|| rng::stream(options.seed, &[layer as u64, token as u64]));
            epoch += 1;
            targets.clear();
            for &e in experts {
                let e = e as usize;
                let gpu = match (&mut stream, table[e]) {
                    (Some(rng), Some(w)) => {
                        let u = rng.random::<f64>();
                        route_with_draw(home, w, options.policy, &topology, u)
                    }
                    (Some(rng), None) => {
                        let _ = rng.random::<f64>();
                        placement[e]
                    }
                    _ => placement[e],
                };
                loads[gpu] += 1;
                if stamp[gpu] != epoch {
                    stamp[gpu] = epoch;
                    targets.push(gpu);
                }
            }

            remote_nodes.clear();
            let mut remote_targets = 0u64;
            for &g in &targets {
                if g == home {
                    continue;
                }
                let node = topology.node_of(g);
                if node == home_node {
                    intra += 1;
                } else {
                    remote_targets += 1;
                    if !remote_nodes.contains(&node) {
                        remote_nodes.push(node);
                    }
                }
            }
            cross += remote_nodes.len() as u64;
            intra += remote_targets - remote_nodes.len() as u64;
        }

        if options.include_combine {
            cross *= 2;
            intra *= 2;
        }
        let expected = trace.num_tokens() as u64 * shape.top_k as u64;
        if loads.iter().sum::<u64>() != expected {
            return Err(Error::integrity(format!(
                "layer {layer}: load conservation violated"
            )));
        }
        per_layer.push(LayerStats {
            layer,
            std: population_std(&loads),
            loads,
            cross,
            intra,
        });
    }

    let totals = TransferTotals {
        cross_node_tokens: per_layer.iter().map(|l| l.cross).sum(),
        intra_node_tokens: per_layer.iter().map(|l| l.intra).sum(),
    };
    let mean_layer_load_std =
        per_layer.iter().map(|l| l.std).sum::<f64>() / per_layer.len().max(1) as f64;
    let idle_proxy = per_layer
        .iter()
        .map(|l| {
            let max = l.loads.iter().copied().max().unwrap_or(0);
            l.loads.iter().map(|&v| max - v).sum::<u64>()
        })
        .sum();

    Ok(SimReport {
        config: SimConfig {
            topology,
            trace_hash: trace.content_hash(),
            num_tokens: trace.num_tokens(),
            options: options.clone(),
            labels: BTreeMap::new(),
        },
        totals,
        per_layer,
        mean_layer_load_std,
        idle_proxy,
    })
}

// ---- Comparison ----

pub const COMPARED_METRICS: [&str; 5] = [
    "cross_node_tokens",
    "intra_node_tokens",
    "total_transfer_tokens",
    "mean_layer_load_std",
    "idle_proxy",
];

fn metric_values(r: &SimReport) -> [f64; 5] {
    [
        r.totals.cross_node_tokens as f64,
        r.totals.intra_node_tokens as f64,
        r.totals.total() as f64,
        r.mean_layer_load_std,
        r.idle_proxy as f64,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub values: Vec<f64>,
    /// Percentage change against the baseline; `None` when the baseline is
    /// zero and the value is not.
    pub delta_pct: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub baseline: usize,
    pub rows: Vec<ComparisonRow>,
}

pub fn percent_delta(baseline: f64, value: f64) -> Option<f64> {
    if baseline == 0.0 {
        (value == 0.0).then_some(0.0)
    } else {
        Some((value - baseline) / baseline * 100.0)
    }
}

/// Side-by-side metrics with deltas against `reports[baseline]`. Reports
/// must come from the same trace and topology.
pub fn compare(reports: &[SimReport], baseline: usize) -> Result<Comparison> {
    let base = reports.get(baseline).ok_or_else(|| {
        Error::invalid(format!(
            "baseline index {baseline} out of {} reports",
            reports.len()
        ))
    })?;
    for (i, r) in reports.iter().enumerate() {
        if r.config.trace_hash != base.config.trace_hash
            || r.config.topology != base.config.topology
        {
            return Err(Error::integrity(format!(
                "report {i} was produced from a different trace or topology than the baseline"
            )));
        }
    }
    let base_values = metric_values(base);
    let rows = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let values = metric_values(r);
            ComparisonRow {
                label: r
                    .config
                    .labels
                    .get("name")
                    .cloned()
                    .unwrap_or_else(|| format!("report{i}")),
                delta_pct: base_values
                    .iter()
                    .zip(&values)
                    .map(|(&b, &v)| percent_delta(b, v))
                    .collect(),
                values: values.to_vec(),
            }
        })
        .collect();
    Ok(Comparison {
        metrics: COMPARED_METRICS.iter().map(|s| s.to_string()).collect(),
        baseline,
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for m in &self.metrics {
            let _ = write!(out, ",{m},{m}_delta_pct");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.label);
            for (v, d) in row.values.iter().zip(&row.delta_pct) {
                let _ = write!(out, ",{v},");
                if let Some(d) = d {
                    let _ = write!(out, "{d}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<width$}", "label");
        for m in &self.metrics {
            let _ = write!(out, "  {m:>24}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let marker = if i == self.baseline {
                " (baseline)"
            } else {
                ""
            };
            let _ = write!(out, "{:<width$}", row.label);
            for (v, d) in row.values.iter().zip(&row.delta_pct) {
                let cell = match d {
                    Some(d) => format!("{v:.3} ({d:+.1}%)"),
                    None => format!("{v:.3} (n/a)"),
                };
                let _ = write!(out, "  {cell:>24}");
            }
            out.push_str(marker);
            out.push('\n');
        }
        out
    }
}

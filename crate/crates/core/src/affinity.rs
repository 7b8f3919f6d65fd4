//! Per-layer co-activation statistics and the scores computed over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::RoutingTrace;

/// Dense symmetric co-activation matrix with a zero diagonal.
///
/// `get(i, j)` is the number of tokens whose top-k set contains both `i` and
/// `j`. Entries are `f64` so that scaled or externally supplied weights fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl AffinityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// Builds from row-major entries, checking shape, symmetry, sign and a
    /// zero diagonal.
    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::integrity(format!(
                "affinity matrix for {n} experts needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::integrity(format!(
                    "affinity diagonal at {i} is non-zero"
                )));
            }
            for j in 0..i {
                let (a, b) = (entries[i * n + j], entries[j * n + i]);
                if a != b {
                    return Err(Error::integrity(format!(
                        "affinity not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::integrity(format!(
                        "affinity at ({i}, {j}) must be finite and non-negative, got {a}"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// Builds from upper-triangle pairs `(i, j, value)`, mirroring each one.
    pub fn from_pairs(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut m = Self::zeros(n);
        for (i, j, v) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid(format!(
                    "bad affinity pair ({i}, {j}) for n = {n}"
                )));
            }
            m.set(i, j, v);
        }
        Self::from_row_major(n, m.entries)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
        self.entries[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.entries
    }

    /// Affinity degree `∑_j A[i][j]`.
    pub fn degree(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// `∑_{j ∈ set} A[i][j]`.
    pub fn affinity_to(&self, i: usize, set: &[usize]) -> f64 {
        let row = self.row(i);
        set.iter().map(|&j| row[j]).sum()
    }

    /// Sum over unordered pairs `i < j`.
    pub fn total_pair_mass(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i)[i + 1..].iter().sum::<f64>())
            .sum()
    }

    /// Matrix induced on `members`; index `a` of the result is `members[a]`.
    pub fn submatrix(&self, members: &[usize]) -> Self {
        let m = members.len();
        let mut entries = Vec::with_capacity(m * m);
        for &i in members {
            let row = self.row(i);
            entries.extend(members.iter().map(|&j| row[j]));
        }
        Self { n: m, entries }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    /// Element-wise sum, used when profiling several traces jointly.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::integrity(format!(
                "cannot merge affinity of {} experts with {}",
                self.n, other.n
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
        Ok(())
    }
}

/// Tokens assigned to each expert of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertLoadVector {
    pub load: Vec<u64>,
}

impl ExpertLoadVector {
    pub fn n(&self) -> usize {
        self.load.len()
    }

    pub fn total(&self) -> u64 {
        self.load.iter().sum()
    }

    pub fn sum_over(&self, experts: &[usize]) -> u64 {
        experts.iter().map(|&e| self.load[e]).sum()
    }
}

/// Disjoint expert groups, usually a partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grouping {
    pub groups: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn new(groups: Vec<Vec<usize>>) -> Self {
        Self { groups }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Sorts each group ascending so equal partitions compare equal.
    pub fn normalized(mut self) -> Self {
        for g in &mut self.groups {
            g.sort_unstable();
        }
        self
    }

    /// Checks that the groups partition `0..n`.
    pub fn check_partition(&self, n: usize, allow_empty: bool) -> Result<()> {
        let mut seen = vec![false; n];
        for (d, g) in self.groups.iter().enumerate() {
            if g.is_empty() && !allow_empty {
                return Err(Error::integrity(format!("group {d} is empty")));
            }
            for &e in g {
                if e >= n {
                    return Err(Error::integrity(format!(
                        "expert {e} out of range in group {d}"
                    )));
                }
                if std::mem::replace(&mut seen[e], true) {
                    return Err(Error::integrity(format!(
                        "expert {e} appears in two groups"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::integrity(format!("expert {missing} is not grouped")));
        }
        Ok(())
    }

    /// Expert → group index. Panics if an expert is out of range.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut of = vec![usize::MAX; n];
        for (d, g) in self.groups.iter().enumerate() {
            for &e in g {
                of[e] = d;
            }
        }
        of
    }
}

/// Per-layer profile: affinity matrix and expert loads.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub layer: usize,
    pub affinity: AffinityMatrix,
    pub load: ExpertLoadVector,
}

#[derive(Serialize, Deserialize)]
struct LayerProfileRepr {
    layer: usize,
    n: usize,
    affinity: Vec<f64>,
    load: Vec<u64>,
}

impl Serialize for LayerProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LayerProfileRepr {
            layer: self.layer,
            n: self.affinity.n(),
            affinity: self.affinity.row_major().to_vec(),
            load: self.load.load.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LayerProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = LayerProfileRepr::deserialize(d)?;
        if r.load.len() != r.n {
            return Err(D::Error::custom(format!(
                "layer {}: load has {} entries for {} experts",
                r.layer,
                r.load.len(),
                r.n
            )));
        }
        let affinity = AffinityMatrix::from_row_major(r.n, r.affinity).map_err(D::Error::custom)?;
        Ok(Self {
            layer: r.layer,
            affinity,
            load: ExpertLoadVector { load: r.load },
        })
    }
}

impl LayerProfile {
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.affinity.accumulate(&other.affinity)?;
        for (a, b) in self.load.load.iter_mut().zip(&other.load.load) {
            *a += b;
        }
        Ok(())
    }
}

fn check_layer(trace: &RoutingTrace, layer: usize) -> Result<()> {
    let layers = trace.shape().num_layers;
    if layer >= layers {
        return Err(Error::invalid(format!(
            "layer {layer} out of range (layers = {layers})"
        )));
    }
    Ok(())
}

/// Co-activation pair counts of one layer.
pub fn build_affinity(trace: &RoutingTrace, layer: usize) -> Result<AffinityMatrix> {
    check_layer(trace, layer)?;
    let n = trace.shape().num_experts;
    let mut counts = vec![0u64; n * n];
    for experts in trace.layer(layer) {
        for (a, &i) in experts.iter().enumerate() {
            for &j in &experts[a + 1..] {
                counts[i as usize * n + j as usize] += 1;
                counts[j as usize * n + i as usize] += 1;
            }
        }
    }
    Ok(AffinityMatrix {
        n,
        entries: counts.into_iter().map(|c| c as f64).collect(),
    })
}

/// Tokens routed to each expert of one layer.
pub fn build_load(trace: &RoutingTrace, layer: usize) -> Result<ExpertLoadVector> {
    check_layer(trace, layer)?;
    let mut load = vec![0u64; trace.shape().num_experts];
    for experts in trace.layer(layer) {
        for &e in experts {
            load[e as usize] += 1;
        }
    }
    Ok(ExpertLoadVector { load })
}

/// Profiles every layer.
pub fn build_profile(trace: &RoutingTrace) -> Vec<LayerProfile> {
    (0..trace.shape().num_layers)
        .map(|layer| LayerProfile {
            layer,
            affinity: build_affinity(trace, layer).expect("layer in range"),
            load: build_load(trace, layer).expect("layer in range"),
        })
        .collect()
}

/// Full double sum `∑_{i∈S} ∑_{j∈S} A[i][j]`; both orientations of every
/// pair are counted.
pub fn intra_score(a: &AffinityMatrix, set: &[usize]) -> f64 {
    set.iter().map(|&i| a.affinity_to(i, set)).sum()
}

/// Share of pair affinity (`i < j`) that falls inside groups.
pub fn affinity_utilization(a: &AffinityMatrix, grouping: &Grouping) -> Result<f64> {
    let total = a.total_pair_mass();
    if total <= 0.0 {
        return Err(Error::UndefinedUtilization);
    }
    let inside: f64 = grouping
        .groups
        .iter()
        .map(|g| {
            let mut s = 0.0;
            for (x, &i) in g.iter().enumerate() {
                for &j in &g[x + 1..] {
                    s += a.get(i, j);
                }
            }
            s
        })
        .sum();
    Ok(inside / total)
}

/// Root-mean-square deviation of group sizes from `ideal`.
pub fn size_deviation(grouping: &Grouping, ideal: f64) -> f64 {
    let d = grouping.num_groups();
    if d == 0 {
        return 0.0;
    }
    let ss: f64 = grouping
        .groups
        .iter()
        .map(|g| (g.len() as f64 - ideal).powi(2))
        .sum();
    (ss / d as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ModelShape, TraceRecord};

    fn trace_of(n: usize, k: usize, tokens: &[&[usize]]) -> RoutingTrace {
        RoutingTrace::from_records(
            ModelShape::new(1, n, k).unwrap(),
            tokens.len(),
            tokens.iter().enumerate().map(|(t, e)| TraceRecord {
                layer: 0,
                token: t,
                experts: e.to_vec(),
            }),
        )
        .unwrap()
    }

    fn abc() -> AffinityMatrix {
        AffinityMatrix::from_pairs(3, [(0, 1, 1.0), (0, 2, 2.0), (1, 2, 3.0)]).unwrap()
    }

    #[test]
    fn single_pair() {
        let a = build_affinity(&trace_of(4, 2, &[&[0, 1]]), 0).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.total_pair_mass(), 1.0);
    }

    #[test]
    fn two_triples() {
        let a = build_affinity(&trace_of(4, 3, &[&[0, 1, 2], &[2, 1, 0]]), 0).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(a.get(i, j), 2.0);
        }
        assert_eq!(a.degree(3), 0.0);
    }

    #[test]
    fn top1_has_no_pairs() {
        let a = build_affinity(&trace_of(4, 1, &[&[0], &[1], &[3]]), 0).unwrap();
        assert!(a.row_major().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_out_of_range() {
        let t = trace_of(4, 1, &[&[0]]);
        assert!(build_affinity(&t, 1).is_err());
        assert!(build_load(&t, 1).is_err());
    }

    #[test]
    fn loads() {
        let l = build_load(&trace_of(6, 2, &[&[3, 5]]), 0).unwrap();
        assert_eq!(l.load, vec![0, 0, 0, 1, 0, 1]);
        let empty = RoutingTrace::from_records(ModelShape::new(1, 4, 2).unwrap(), 0, []).unwrap();
        assert_eq!(build_load(&empty, 0).unwrap().load, vec![0; 4]);
    }

    #[test]
    fn intra_score_examples() {
        let a = AffinityMatrix::from_pairs(2, [(0, 1, 2.0)]).unwrap();
        assert_eq!(intra_score(&a, &[0, 1]), 4.0);
        assert_eq!(intra_score(&a, &[0]), 0.0);
        assert_eq!(intra_score(&a, &[]), 0.0);
        assert_eq!(intra_score(&abc(), &[0, 1, 2]), 12.0);
    }

    #[test]
    fn utilization_examples() {
        let a = abc();
        let all = Grouping::new(vec![vec![0, 1, 2]]);
        let singles = Grouping::new(vec![vec![0], vec![1], vec![2]]);
        let split = Grouping::new(vec![vec![0, 2], vec![1]]);
        assert_eq!(affinity_utilization(&a, &all).unwrap(), 1.0);
        assert_eq!(affinity_utilization(&a, &singles).unwrap(), 0.0);
        assert!((affinity_utilization(&a, &split).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            affinity_utilization(&AffinityMatrix::zeros(3), &all),
            Err(Error::UndefinedUtilization)
        ));
    }

    #[test]
    fn size_deviation_examples() {
        let g = |sizes: &[usize]| {
            let mut next = 0;
            Grouping::new(
                sizes
                    .iter()
                    .map(|&s| {
                        let v: Vec<usize> = (next..next + s).collect();
                        next += s;
                        v
                    })
                    .collect(),
            )
        };
        assert_eq!(size_deviation(&g(&[3, 3]), 3.0), 0.0);
        assert_eq!(size_deviation(&g(&[4, 2]), 3.0), 1.0);
        assert!((size_deviation(&g(&[6, 1, 2]), 3.0) - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matrix_validation() {
        assert!(AffinityMatrix::from_row_major(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(AffinityMatrix::from_row_major(2, vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(AffinityMatrix::from_row_major(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(AffinityMatrix::from_row_major(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn profile_json_round_trip() {
        let p = LayerProfile {
            layer: 3,
            affinity: abc(),
            load: ExpertLoadVector {
                load: vec![1, 2, 3],
            },
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"n\":3"));
        let back: LayerProfile = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn partition_checks() {
        assert!(Grouping::new(vec![vec![0, 2], vec![1]])
            .check_partition(3, false)
            .is_ok());
        assert!(Grouping::new(vec![vec![0, 2], vec![]])
            .check_partition(3, true)
            .is_err());
        assert!(Grouping::new(vec![vec![0, 1], vec![]])
            .check_partition(2, false)
            .is_err());
        assert!(Grouping::new(vec![vec![0, 1], vec![1]])
            .check_partition(2, false)
            .is_err());
    }
}

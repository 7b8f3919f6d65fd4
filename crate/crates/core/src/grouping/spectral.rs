//! Spectral clustering of an affinity matrix.
//!
//! Symmetric normalized Laplacian `L = I - D^-1/2 A D^-1/2`, the eigenvectors
//! of its `k` smallest eigenvalues as an embedding, unit-normalized rows, then
//! k-means with seeded farthest-point initialization.

use nalgebra::DMatrix;
use rand::Rng;

use crate::affinity::{AffinityMatrix, Grouping};
use crate::error::{Error, Result};
use crate::rng;

const KMEANS_MAX_ITERS: usize = 100;

/// Spectral clustering into `k` groups. Deterministic for a fixed `seed`.
///
/// Experts with zero affinity degree take no part in the embedding; they are
/// dealt one at a time into the currently smallest group. If fewer than `k`
/// experts carry affinity, experts are dealt round-robin instead. Empty
/// clusters are repaired by moving the weakest-affinity expert of the
/// largest cluster into each of them. Groups come back sorted, ordered by
/// their smallest member.
pub fn spectral_cluster(a: &AffinityMatrix, k: usize, seed: u64) -> Result<Grouping> {
    let n = a.n();
    if k == 0 {
        return Err(Error::invalid("cannot form zero groups"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot form {k} groups from {n} experts"
        )));
    }
    if k == 1 {
        return Ok(Grouping::new(vec![(0..n).collect()]));
    }

    let (active, idle): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| a.degree(i) > 0.0);
    if active.len() < k {
        let mut groups = vec![Vec::new(); k];
        for e in 0..n {
            groups[e % k].push(e);
        }
        return Ok(canonical(groups));
    }

    let sub = a.submatrix(&active);
    let embedding = spectral_embedding(&sub, k);
    let labels = kmeans(&embedding, k, seed);

    let mut groups = vec![Vec::new(); k];
    for (local, &label) in labels.iter().enumerate() {
        groups[label].push(active[local]);
    }
    repair_empty(a, &mut groups);
    for e in idle {
        let smallest = (0..k)
            .min_by_key(|&d| (groups[d].len(), d))
            .expect("k >= 1");
        groups[smallest].push(e);
    }
    Ok(canonical(groups))
}

/// Affinity-only grouping: spectral clusters with emptiness repair and no
/// size constraint.
pub fn fully_non_uniform_group(a: &AffinityMatrix, k: usize, seed: u64) -> Result<Grouping> {
    spectral_cluster(a, k, seed)
}

fn canonical(mut groups: Vec<Vec<usize>>) -> Grouping {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g.first().copied().unwrap_or(usize::MAX));
    Grouping::new(groups)
}

/// Rows of the returned `m x k` matrix are the unit-normalized embedding.
fn spectral_embedding(a: &AffinityMatrix, k: usize) -> Vec<Vec<f64>> {
    let m = a.n();
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|i| {
            let d = a.degree(i);
            // zero-degree rows are excluded by the caller; guard anyway
            1.0 / if d > 0.0 { d } else { 1.0 }.sqrt()
        })
        .collect();
    let lap = DMatrix::from_fn(m, m, |i, j| {
        let norm = a.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - norm
        } else {
            -norm
        }
    });
    let eig = lap.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[x]
            .total_cmp(&eig.eigenvalues[y])
            .then(x.cmp(&y))
    });

    (0..m)
        .map(|i| {
            let mut row: Vec<f64> = order[..k]
                .iter()
                .map(|&c| eig.eigenvectors[(i, c)])
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means. The first center is a seeded random point, each further
/// center the point farthest from all chosen centers.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let m = points.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut rng = rng::stream(seed, &[0x6b6d_6561_6e73]);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..m)].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let far = (0..m)
            .max_by(|&x, &y| nearest[x].total_cmp(&nearest[y]).then(y.cmp(&x)))
            .expect("m >= k >= 1");
        centers.push(points[far].clone());
        let c = centers.last().expect("just pushed");
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let mut labels = vec![usize::MAX; m];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&x, &y| {
                    sq_dist(p, &centers[x])
                        .total_cmp(&sq_dist(p, &centers[y]))
                        .then(x.cmp(&y))
                })
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    labels
}

/// Moves the weakest-affinity expert of the largest group into each empty
/// group until none is empty.
pub(crate) fn repair_empty(a: &AffinityMatrix, groups: &mut [Vec<usize>]) {
    while let Some(empty) = groups.iter().position(Vec::is_empty) {
        let largest = (0..groups.len())
            .max_by(|&x, &y| groups[x].len().cmp(&groups[y].len()).then(y.cmp(&x)))
            .expect("non-empty slice");
        if groups[largest].len() < 2 {
            return;
        }
        let donor = &groups[largest];
        let pos = weakest_member(a, donor);
        let e = groups[largest].remove(pos);
        groups[empty].push(e);
    }
}

/// Position in `group` of the member with the least affinity to the rest;
/// ties go to the lowest expert id.
pub(crate) fn weakest_member(a: &AffinityMatrix, group: &[usize]) -> usize {
    (0..group.len())
        .min_by(|&x, &y| {
            a.affinity_to(group[x], group)
                .total_cmp(&a.affinity_to(group[y], group))
                .then(group[x].cmp(&group[y]))
        })
        .expect("group is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Block-diagonal matrix with dense blocks of the given sizes. Experts are
    /// interleaved so that blocks are not contiguous id ranges.
    fn blocks(sizes: &[usize]) -> (AffinityMatrix, Vec<Vec<usize>>) {
        let n: usize = sizes.iter().sum();
        let mut members = vec![Vec::new(); sizes.len()];
        let mut e = 0;
        while e < n {
            for (b, &s) in sizes.iter().enumerate() {
                if members[b].len() < s && e < n {
                    members[b].push(e);
                    e += 1;
                }
            }
        }
        let mut pairs = Vec::new();
        for m in &members {
            for (x, &i) in m.iter().enumerate() {
                for &j in &m[x + 1..] {
                    pairs.push((i.min(j), i.max(j), 1.0 + ((i * 7 + j) % 3) as f64));
                }
            }
        }
        (AffinityMatrix::from_pairs(n, pairs).unwrap(), members)
    }

    /// Connected components of the non-zero pattern.
    fn components(a: &AffinityMatrix) -> Vec<Vec<usize>> {
        let n = a.n();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![s];
            let mut members = Vec::new();
            comp[s] = id;
            while let Some(i) = stack.pop() {
                members.push(i);
                for (j, c) in comp.iter_mut().enumerate() {
                    if a.get(i, j) > 0.0 && *c == usize::MAX {
                        *c = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out.sort();
        out
    }

    #[test]
    fn recovers_two_blocks() {
        let (a, _) = blocks(&[5, 7]);
        let g = spectral_cluster(&a, 2, 3).unwrap();
        let mut got = g.groups.clone();
        got.sort();
        assert_eq!(got, components(&a));
    }

    #[test]
    fn recovers_uneven_blocks_for_many_seeds() {
        let (a, _) = blocks(&[3, 9, 4]);
        let expected = components(&a);
        for seed in 0..20 {
            let mut got = spectral_cluster(&a, 3, seed).unwrap().groups;
            got.sort();
            assert_eq!(got, expected, "seed {seed}");
        }
    }

    #[test]
    fn zero_matrix_falls_back_to_round_robin() {
        let g = spectral_cluster(&AffinityMatrix::zeros(4), 2, 0).unwrap();
        assert_eq!(g.groups, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn single_group() {
        let (a, _) = blocks(&[3, 3]);
        assert_eq!(
            spectral_cluster(&a, 1, 0).unwrap().groups,
            vec![(0..6).collect::<Vec<_>>()]
        );
    }

    #[test]
    fn too_many_groups() {
        assert!(spectral_cluster(&AffinityMatrix::zeros(3), 4, 0).is_err());
        assert!(spectral_cluster(&AffinityMatrix::zeros(3), 0, 0).is_err());
    }

    #[test]
    fn idle_experts_fill_smallest_groups() {
        // experts 0..4 form two pairs, 4 and 5 never fire
        let a = AffinityMatrix::from_pairs(6, [(0, 1, 3.0), (2, 3, 3.0)]).unwrap();
        let g = spectral_cluster(&a, 2, 1).unwrap();
        g.check_partition(6, false).unwrap();
        assert_eq!(g.sizes(), vec![3, 3]);
    }

    #[test]
    fn deterministic() {
        let (a, _) = blocks(&[4, 4, 4, 4]);
        assert_eq!(
            spectral_cluster(&a, 3, 9).unwrap(),
            spectral_cluster(&a, 3, 9).unwrap()
        );
    }
}

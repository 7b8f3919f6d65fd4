//! Size-bounded refinement of spectral clusters.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use super::spectral::{spectral_cluster, weakest_member};
use crate::affinity::{intra_score, AffinityMatrix, Grouping};
use crate::error::{Error, Result};
use crate::rng;

/// Random balanced starting points tried by the local search besides the
/// spectral one.
const POLISH_RESTARTS: u64 = 8;
const POLISH_SALT: u64 = 0x706f_6c69_7368;

/// Allowed group sizes `[min, max]` around the ideal size `ideal = ⌊n/D⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBand {
    pub ideal: usize,
    pub delta: usize,
    pub min: usize,
    pub max: usize,
}

impl SizeBand {
    /// Band for ratio `r`: `delta = max(1, round(ideal·r))`,
    /// `min = max(1, ideal − delta)`, `max = ideal + delta`.
    pub fn for_ratio(n: usize, groups: usize, r: f64) -> Result<Self> {
        if groups == 0 {
            return Err(Error::invalid("cannot form zero groups"));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!(
                "ratio must be finite and >= 0, got {r}"
            )));
        }
        let ideal = n / groups;
        let delta = ((ideal as f64 * r).round() as usize).max(1);
        Ok(Self::with_delta(ideal, delta))
    }

    pub fn with_delta(ideal: usize, delta: usize) -> Self {
        Self {
            ideal,
            delta,
            min: ideal.saturating_sub(delta).max(1),
            max: ideal + delta,
        }
    }

    /// Tightest band: every group gets `⌊n/D⌋` experts, or one more where the
    /// division leaves a remainder.
    pub fn exact(n: usize, groups: usize) -> Self {
        let ideal = n / groups.max(1);
        Self {
            ideal,
            delta: 0,
            min: ideal.max(1),
            max: if n.is_multiple_of(groups.max(1)) {
                ideal
            } else {
                ideal + 1
            },
        }
    }

    pub fn is_feasible(&self, n: usize, groups: usize) -> bool {
        groups * self.min <= n && n <= groups * self.max
    }

    pub fn check_feasible(&self, n: usize, groups: usize) -> Result<()> {
        if self.is_feasible(n, groups) {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "{n} experts cannot form {groups} groups with sizes in [{}, {}]",
                self.min, self.max
            )))
        }
    }

    pub fn contains(&self, size: usize) -> bool {
        (self.min..=self.max).contains(&size)
    }

    /// Whether the band rules out any partition of `n` experts, i.e. it
    /// forbids singleton groups or a group holding everything.
    pub fn is_binding(&self, n: usize) -> bool {
        self.min > 1 || self.max < n
    }
}

/// Spectral clustering, size refinement into the band for `r`, then local
/// search within the band.
pub fn controlled_non_uniform_group(
    a: &AffinityMatrix,
    groups: usize,
    r: f64,
    seed: u64,
) -> Result<Grouping> {
    let band = SizeBand::for_ratio(a.n(), groups, r)?;
    band.check_feasible(a.n(), groups)?;
    let clusters = spectral_cluster(a, groups, seed)?;
    fit_to_band(a, &clusters, band, seed)
}

/// Refines `clusters` into `band`; when the band is binding, the result is
/// then improved by band-preserving local search from the refined grouping
/// and from seeded balanced starts, keeping the best.
pub(crate) fn fit_to_band(
    a: &AffinityMatrix,
    clusters: &Grouping,
    band: SizeBand,
    seed: u64,
) -> Result<Grouping> {
    let groups = clusters.num_groups();
    let refined = refine_to_band(a, clusters, band)?;
    if !band.is_binding(a.n()) {
        return Ok(refined);
    }
    let score = |g: &Grouping| g.groups.iter().map(|m| intra_score(a, m)).sum::<f64>();
    let tol = 1e-12 * a.total_pair_mass().max(1.0);
    let mut best = polish_within_band(a, &refined, band);
    let mut best_score = score(&best);
    for restart in 0..POLISH_RESTARTS {
        let mut order: Vec<usize> = (0..a.n()).collect();
        order.shuffle(&mut rng::stream(seed, &[POLISH_SALT, restart]));
        let mut start = vec![Vec::new(); groups];
        for (i, e) in order.into_iter().enumerate() {
            start[i % groups].push(e);
        }
        let candidate = polish_within_band(a, &Grouping::new(start), band);
        let s = score(&candidate);
        if s > best_score + tol {
            best = candidate;
            best_score = s;
        }
    }
    Ok(best)
}

/// Band-preserving local search: repeatedly applies the single move or pair
/// swap with the largest gain in intra-group affinity until none improves by
/// more than a relative tolerance.
pub fn polish_within_band(a: &AffinityMatrix, grouping: &Grouping, band: SizeBand) -> Grouping {
    let n = a.n();
    let d = grouping.num_groups();
    let mut of = grouping.assignment(n);
    let mut sizes = grouping.sizes();
    // link[e][g] = affinity of e to the members of group g (excluding e).
    let mut link = vec![vec![0.0; d]; n];
    for (e, row) in link.iter_mut().enumerate() {
        for (j, &w) in a.row(e).iter().enumerate() {
            row[of[j]] += w;
        }
    }
    let tol = 1e-12 * a.total_pair_mass().max(1.0);
    let max_steps = 4 * n * n + 16;

    for _ in 0..max_steps {
        // (gain, e, target group, swap partner)
        let mut best: Option<(f64, usize, usize, Option<usize>)> = None;
        let mut offer = |gain: f64, e: usize, g: usize, f: Option<usize>| {
            if gain > tol && best.is_none_or(|b| gain > b.0) {
                best = Some((gain, e, g, f));
            }
        };
        for e in 0..n {
            let from = of[e];
            for g in 0..d {
                if g != from && sizes[from] > band.min && sizes[g] < band.max {
                    offer(link[e][g] - link[e][from], e, g, None);
                }
            }
            for f in e + 1..n {
                let g = of[f];
                if g != from {
                    let gain =
                        link[e][g] - link[e][from] + link[f][from] - link[f][g] - 2.0 * a.get(e, f);
                    offer(gain, e, g, Some(f));
                }
            }
        }
        let Some((_, e, g, partner)) = best else {
            break;
        };
        let mut relocate = |x: usize, to: usize, of: &mut Vec<usize>| {
            let from = of[x];
            for (j, row) in link.iter_mut().enumerate() {
                let w = a.get(j, x);
                row[from] -= w;
                row[to] += w;
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            of[x] = to;
        };
        let from = of[e];
        relocate(e, g, &mut of);
        if let Some(f) = partner {
            relocate(f, from, &mut of);
        }
    }

    let mut groups = vec![Vec::new(); d];
    for (e, &g) in of.iter().enumerate() {
        groups[g].push(e);
    }
    Grouping::new(groups)
}

/// Forces the sizes of `clusters` into `band`.
///
/// Oversized clusters keep their `band.max` members with the highest affinity
/// to the cluster; the overflow is placed, strongest first, into the group
/// with room that maximizes `intra_score(group ∪ {e})`. Groups still below
/// `band.min` then receive, one at a time, the weakest-affinity member of any
/// group above `band.min`, each going to the needy group where it scores
/// highest.
pub fn refine_to_band(a: &AffinityMatrix, clusters: &Grouping, band: SizeBand) -> Result<Grouping> {
    let n = a.n();
    let d = clusters.num_groups();
    band.check_feasible(n, d)?;

    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(d);
    let mut overflow = Vec::new();
    for c in &clusters.groups {
        if c.len() > band.max {
            let mut ranked = c.clone();
            ranked.sort_by(|&x, &y| {
                a.affinity_to(y, c)
                    .total_cmp(&a.affinity_to(x, c))
                    .then(x.cmp(&y))
            });
            overflow.extend(ranked.split_off(band.max));
            groups.push(ranked);
        } else {
            groups.push(c.clone());
        }
    }

    let mut scores: Vec<f64> = groups.iter().map(|g| intra_score(a, g)).collect();
    let gain = |g: &[usize], score: f64, e: usize| score + 2.0 * a.affinity_to(e, g);

    for e in overflow {
        let target = (0..d)
            .filter(|&t| groups[t].len() < band.max)
            .max_by(|&x, &y| {
                gain(&groups[x], scores[x], e)
                    .total_cmp(&gain(&groups[y], scores[y], e))
                    .then(y.cmp(&x))
            })
            .ok_or_else(|| Error::Infeasible("no group has room for overflow expert".into()))?;
        scores[target] = gain(&groups[target], scores[target], e);
        groups[target].push(e);
    }

    while groups.iter().any(|g| g.len() < band.min) {
        let mut weakest: Option<(f64, usize, usize, usize)> = None;
        for (gi, g) in groups.iter().enumerate() {
            if g.len() <= band.min {
                continue;
            }
            let pos = weakest_member(a, g);
            let strength = a.affinity_to(g[pos], g);
            let better = match weakest {
                None => true,
                Some((s, _, _, e)) => strength < s || (strength == s && g[pos] < e),
            };
            if better {
                weakest = Some((strength, gi, pos, g[pos]));
            }
        }
        let (_, donor, pos, e) =
            weakest.ok_or_else(|| Error::Infeasible("no group can donate an expert".into()))?;
        groups[donor].remove(pos);
        scores[donor] = intra_score(a, &groups[donor]);
        let target = (0..d)
            .filter(|&t| groups[t].len() < band.min)
            .max_by(|&x, &y| {
                gain(&groups[x], scores[x], e)
                    .total_cmp(&gain(&groups[y], scores[y], e))
                    .then(y.cmp(&x))
            })
            .expect("loop condition guarantees a needy group");
        scores[target] = gain(&groups[target], scores[target], e);
        groups[target].push(e);
    }

    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(Grouping::new(groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::affinity_utilization;
    use crate::grouping::fully_non_uniform_group;

    fn planted_five_plus_one() -> AffinityMatrix {
        let mut pairs = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                pairs.push((i, j, 10.0));
            }
        }
        pairs.push((4, 5, 0.5));
        AffinityMatrix::from_pairs(6, pairs).unwrap()
    }

    #[test]
    fn band_bounds() {
        let b = SizeBand::for_ratio(6, 2, 0.0).unwrap();
        assert_eq!((b.ideal, b.delta, b.min, b.max), (3, 1, 2, 4));
        let b = SizeBand::for_ratio(64, 4, 0.25).unwrap();
        assert_eq!((b.ideal, b.delta, b.min, b.max), (16, 4, 12, 20));
        // round(2.5) = 3
        let b = SizeBand::for_ratio(10, 2, 0.5).unwrap();
        assert_eq!(b.delta, 3);
        let b = SizeBand::for_ratio(4, 4, 10.0).unwrap();
        assert_eq!((b.min, b.max), (1, 11));
        assert!(SizeBand::for_ratio(4, 2, -0.1).is_err());
        assert_eq!(SizeBand::exact(8, 4).max, 2);
        assert_eq!(SizeBand::exact(9, 4).max, 3);
    }

    #[test]
    fn infeasible_band_is_reported() {
        let band = SizeBand::with_delta(3, 0);
        let clusters = Grouping::new(vec![vec![0, 1, 2, 3, 4, 5, 6]]);
        let a = AffinityMatrix::zeros(7);
        assert!(matches!(
            refine_to_band(&a, &clusters, band),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn loose_band_keeps_spectral_result() {
        let a = planted_five_plus_one();
        let free = fully_non_uniform_group(&a, 2, 4).unwrap();
        let ctl = controlled_non_uniform_group(&a, 2, 10.0, 4).unwrap();
        assert_eq!(free.normalized(), ctl);
    }

    #[test]
    fn tight_band_splits_large_block() {
        let a = planted_five_plus_one();
        let g = controlled_non_uniform_group(&a, 2, 0.0, 4).unwrap();
        g.check_partition(6, false).unwrap();
        let band = SizeBand::for_ratio(6, 2, 0.0).unwrap();
        assert!(
            g.groups.iter().all(|c| band.contains(c.len())),
            "{:?}",
            g.groups
        );
        // the tight band still keeps four of the five block members together
        assert!(g
            .groups
            .iter()
            .any(|c| c.iter().filter(|&&e| e < 5).count() == 4));
        assert!(affinity_utilization(&a, &g).unwrap() > 0.5);
    }

    #[test]
    fn needy_groups_are_filled() {
        let a = planted_five_plus_one();
        let band = SizeBand::with_delta(2, 1);
        let clusters = Grouping::new(vec![vec![0, 1, 2], vec![3, 4, 5], vec![]]);
        let g = refine_to_band(&a, &clusters, band).unwrap();
        g.check_partition(6, false).unwrap();
        assert!(g.groups.iter().all(|c| band.contains(c.len())));
    }

    #[test]
    fn band_binding() {
        assert!(!SizeBand::for_ratio(8, 2, 1.0).unwrap().is_binding(8));
        assert!(SizeBand::for_ratio(8, 2, 0.75).unwrap().is_binding(8));
        assert!(SizeBand::for_ratio(8, 2, 0.0).unwrap().is_binding(8));
    }

    #[test]
    fn polish_finds_swap_out_of_bad_start() {
        // Two 3-cliques started fully interleaved; exact band forces swaps.
        let mut pairs = Vec::new();
        for block in [[0, 1, 2], [3, 4, 5]] {
            for i in 0..3 {
                for j in i + 1..3 {
                    pairs.push((block[i], block[j], 5.0));
                }
            }
        }
        let a = AffinityMatrix::from_pairs(6, pairs).unwrap();
        let start = Grouping::new(vec![vec![0, 3, 4], vec![1, 2, 5]]);
        let band = SizeBand::with_delta(3, 0);
        let g = polish_within_band(&a, &start, band).normalized();
        assert_eq!(g.groups, vec![vec![3, 4, 5], vec![0, 1, 2]]);
    }

    #[test]
    fn polish_respects_band_and_never_lowers_score() {
        let a = planted_five_plus_one();
        let band = SizeBand::for_ratio(6, 2, 0.0).unwrap();
        let start = Grouping::new(vec![vec![0, 5, 2], vec![3, 4, 1]]);
        let before: f64 = start.groups.iter().map(|g| intra_score(&a, g)).sum();
        let g = polish_within_band(&a, &start, band);
        g.check_partition(6, false).unwrap();
        assert!(g.groups.iter().all(|c| band.contains(c.len())));
        let after: f64 = g.groups.iter().map(|c| intra_score(&a, c)).sum();
        assert!(after >= before);
        // moving into the larger allowed size collects four block members
        assert!(g
            .groups
            .iter()
            .any(|c| c.iter().filter(|&&e| e < 5).count() == 4));
    }
}

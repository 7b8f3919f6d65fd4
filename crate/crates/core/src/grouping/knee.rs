//! Choice of the non-uniformity ratio from the (size deviation, utilization)
//! trade-off curve.

use log::warn;
use serde::{Deserialize, Serialize};

use super::controlled::{fit_to_band, SizeBand};
use super::spectral::spectral_cluster;
use crate::affinity::{affinity_utilization, size_deviation, AffinityMatrix};
use crate::error::{Error, Result};

/// Candidate ratios tried when the ratio is selected automatically.
pub const DEFAULT_RATIO_GRID: [f64; 6] = [0.0, 0.125, 0.25, 0.5, 0.75, 1.0];

/// Outcome of a ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSelection {
    pub candidates: Vec<f64>,
    pub utilization: Vec<f64>,
    pub deviation: Vec<f64>,
    pub chosen: usize,
    /// Set when all curve points coincided and the smallest ratio was taken.
    #[serde(default)]
    pub degenerate: bool,
}

impl RatioSelection {
    pub fn chosen_ratio(&self) -> f64 {
        self.candidates[self.chosen]
    }
}

/// Index of the point farthest from the chord joining the first and last
/// points. Ties resolve to the lower index. The flag is set when every point
/// is identical, in which case index 0 is returned.
pub fn knee_index(points: &[(f64, f64)]) -> (usize, bool) {
    assert!(!points.is_empty(), "knee of an empty curve");
    let (x0, y0) = points[0];
    let (x1, y1) = points[points.len() - 1];
    let (dx, dy) = (x1 - x0, y1 - y0);
    let chord = dx.hypot(dy);

    let dist = |&(x, y): &(f64, f64)| {
        if chord > 0.0 {
            (dy * (x - x0) - dx * (y - y0)).abs() / chord
        } else {
            (x - x0).hypot(y - y0)
        }
    };
    let scale = points
        .iter()
        .map(|&(x, y)| x.abs().max(y.abs()))
        .fold(1.0f64, f64::max);
    let eps = 1e-12 * scale;

    let mut best = 0;
    let mut best_d = dist(&points[0]);
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = dist(p);
        if d > best_d + eps {
            best = i;
            best_d = d;
        }
    }
    let degenerate = chord == 0.0 && best_d <= eps;
    (best, degenerate)
}

/// Groups `a` into `groups` groups for every candidate ratio, records
/// `(S(r), U(r))` and picks the knee of that curve.
///
/// Spectral clustering is run once and refined per candidate. When `a` has no
/// pair mass, utilization is reported as 0 for every candidate.
pub fn select_ratio(
    a: &AffinityMatrix,
    groups: usize,
    candidates: &[f64],
    seed: u64,
) -> Result<RatioSelection> {
    if candidates.len() < 3 {
        return Err(Error::invalid(format!(
            "ratio selection needs at least 3 candidates, got {}",
            candidates.len()
        )));
    }
    if candidates
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::invalid(
            "ratio candidates must be strictly ascending",
        ));
    }
    if candidates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid("ratio candidates must lie in [0, 1]"));
    }

    let n = a.n();
    let clusters = spectral_cluster(a, groups, seed)?;
    let ideal = (n / groups) as f64;
    let mut utilization = Vec::with_capacity(candidates.len());
    let mut deviation = Vec::with_capacity(candidates.len());
    for &r in candidates {
        let band = SizeBand::for_ratio(n, groups, r)?;
        let grouping = fit_to_band(a, &clusters, band, seed)?;
        let u = match affinity_utilization(a, &grouping) {
            Ok(u) => u,
            Err(Error::UndefinedUtilization) => 0.0,
            Err(e) => return Err(e),
        };
        utilization.push(u);
        deviation.push(size_deviation(&grouping, ideal));
    }

    let points: Vec<(f64, f64)> = deviation
        .iter()
        .copied()
        .zip(utilization.iter().copied())
        .collect();
    let (chosen, degenerate) = knee_index(&points);
    if degenerate {
        warn!(
            "ratio sweep produced identical points; using smallest ratio {}",
            candidates[0]
        );
    }
    Ok(RatioSelection {
        candidates: candidates.to_vec(),
        utilization,
        deviation,
        chosen,
        degenerate,
    })
}

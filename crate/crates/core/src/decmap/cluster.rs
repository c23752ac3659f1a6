//! Size reduction of a decoding map by average-distance splitting.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{normalized_distance, DecodingMap};
use crate::{Error, Result};

/// Result of the size reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Member cell indices per cluster, ascending; the first is the
    /// representative.
    pub clusters: Vec<Vec<usize>>,
    /// Cluster of each map cell (`None` for outage cells).
    pub labels: Vec<Option<usize>>,
    /// Number of non-outage samples `N_s`.
    pub samples: usize,
    /// Largest within-cluster average distance.
    pub max_average_loss: f64,
    /// Largest distance from a representative to a member of its cluster.
    pub representative_loss: f64,
    /// Outer passes until the cluster count settled.
    pub passes: usize,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// `(N_s − N_k) / N_s`.
    pub fn compression_ratio(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        (self.samples - self.clusters.len()) as f64 / self.samples as f64
    }

    pub fn representative(&self, cluster: usize) -> usize {
        self.clusters[cluster][0]
    }
}

/// Average-distance splitting of points `0..n`.
///
/// All points start in one category. A category whose largest average
/// distance exceeds `tau_loss` is split by repeatedly peeling off the members
/// whose average is within `tau_diff` of the first remaining member's. Passes
/// repeat until the category count stops changing.
///
/// `class(i)` marks comparable points: distances across classes are infinite,
/// so a category spanning several classes always splits, averages are taken
/// over comparable members, and a peel never mixes classes. When a category
/// over `tau_loss` yields a single piece because all averages tie, it is
/// peeled by distance from its first member instead.
///
/// Returns the final categories (members ascending) and the number of passes.
pub fn reduce_points(
    n: usize,
    class: impl Fn(usize) -> usize,
    mut dist: impl FnMut(usize, usize) -> f64,
    tau_diff: f64,
    tau_loss: f64,
) -> (Vec<Vec<usize>>, usize) {
    let mut categories = if n == 0 { Vec::new() } else { vec![(0..n).collect::<Vec<_>>()] };
    let mut passes = 0;
    loop {
        passes += 1;
        let mut next = Vec::with_capacity(categories.len());
        for members in &categories {
            let mixed = members.iter().any(|&i| class(i) != class(members[0]));
            let avg = average_distances(members, &class, &mut dist);
            let worst = avg.iter().copied().fold(0.0, f64::max);
            if !(mixed || worst > tau_loss) {
                next.push(members.clone());
                continue;
            }
            let before = next.len();
            let mut rest: Vec<(usize, f64)> = members.iter().copied().zip(avg).collect();
            while let Some(&(head, xi)) = rest.first() {
                let (take, keep): (Vec<_>, Vec<_>) = rest.into_iter().partition(|&(i, d)| {
                    class(i) == class(head) && ((xi - d).abs() < tau_diff || xi == d)
                });
                next.push(take.into_iter().map(|(i, _)| i).collect());
                rest = keep;
            }
            if next.len() == before + 1 && worst > tau_loss {
                let stuck = next.pop().expect("one piece");
                let mut rest = stuck;
                while let Some(&head) = rest.first() {
                    let (take, keep): (Vec<_>, Vec<_>) = rest.into_iter().partition(|&i| dist(head, i) < tau_diff);
                    next.push(take);
                    rest = keep;
                }
            }
        }
        let settled = next.len() == categories.len();
        categories = next;
        if settled {
            return (categories, passes);
        }
    }
}

fn average_distances(
    members: &[usize],
    class: &impl Fn(usize) -> usize,
    dist: &mut impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    members
        .iter()
        .map(|&i| {
            let (sum, count) = members
                .iter()
                .filter(|&&j| class(j) == class(i))
                .fold((0.0, 0usize), |(s, c), &j| (s + dist(i, j), c + 1));
            sum / count as f64
        })
        .collect()
}

/// Clusters the non-outage cells of a map.
///
/// Cells start in one category per detectable layer set, since cells with
/// different sets have no finite distance.
pub fn reduce_map(map: &DecodingMap, tau_diff: f64, tau_loss: f64) -> Result<Clustering> {
    if !(tau_diff > 0.0 && tau_loss > 0.0) {
        return Err(Error::InvalidParameter("clustering thresholds must be positive"));
    }
    let solved = map.solved_cells();
    let mut by_set: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut class = Vec::with_capacity(solved.len());
    for &c in &solved {
        let key = map.cell(c).order.as_ref().expect("solved").layers();
        let next = by_set.len();
        class.push(*by_set.entry(key).or_insert(next));
    }

    // Pairwise distances inside each class; points are positions in `solved`.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); by_set.len()];
    let mut slot = Vec::with_capacity(solved.len());
    for (p, &k) in class.iter().enumerate() {
        slot.push(members[k].len());
        members[k].push(p);
    }
    let mut tables = Vec::with_capacity(members.len());
    for m in &members {
        let n = m.len();
        let mut table = vec![0.0; n * n];
        for (a, &i) in m.iter().enumerate() {
            for (b, &j) in m.iter().enumerate() {
                table[a * n + b] = normalized_distance(map, solved[i], solved[j])?;
            }
        }
        tables.push((n, table));
    }
    let dist = |i: usize, j: usize| {
        if class[i] != class[j] {
            return f64::INFINITY;
        }
        let (n, table) = &tables[class[i]];
        table[slot[i] * n + slot[j]]
    };

    let (points, passes) = reduce_points(solved.len(), |i| class[i], dist, tau_diff, tau_loss);
    let clusters: Vec<Vec<usize>> = points
        .iter()
        .map(|m| m.iter().map(|&p| solved[p]).collect())
        .collect();
    let mut labels = vec![None; map.cells().len()];
    let mut max_average_loss: f64 = 0.0;
    let mut representative_loss: f64 = 0.0;
    for (k, m) in points.iter().enumerate() {
        for &p in m {
            labels[solved[p]] = Some(k);
        }
        let avg = average_distances(m, &|i| class[i], &mut |i, j| dist(i, j));
        max_average_loss = avg.into_iter().fold(max_average_loss, f64::max);
        representative_loss = m.iter().map(|&j| dist(m[0], j)).fold(representative_loss, f64::max);
    }
    Ok(Clustering {
        clusters,
        labels,
        samples: solved.len(),
        max_average_loss,
        representative_loss,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(pos: &[f64]) -> impl Fn(usize, usize) -> f64 + '_ {
        move |i, j| (pos[i] - pos[j]).abs()
    }

    #[test]
    fn identical_points_stay_together() {
        let (c, passes) = reduce_points(4, |_| 0, |_, _| 0.0, 1e-5, 0.1);
        assert_eq!(c, vec![vec![0, 1, 2, 3]]);
        assert_eq!(passes, 1);
    }

    #[test]
    fn far_groups_split() {
        let pos = [0.0, 0.0, 10.0, 10.0, 10.0];
        let (c, _) = reduce_points(5, |_| 0, line(&pos), 1e-5, 0.1);
        assert_eq!(c, vec![vec![0, 1], vec![2, 3, 4]]);
    }

    #[test]
    fn classes_never_mix() {
        let (c, _) = reduce_points(4, |i| i % 2, |_, _| 0.0, 1e-5, 0.1);
        assert_eq!(c, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn tied_averages_split_by_head_distance() {
        // Two mirrored points: equal averages, but far apart.
        let (c, _) = reduce_points(2, |_| 0, |i, j| if i == j { 0.0 } else { 1.0 }, 1e-5, 0.1);
        assert_eq!(c, vec![vec![0], vec![1]]);
    }

    #[test]
    fn every_point_lands_in_exactly_one_cluster() {
        let pos: Vec<f64> = (0..40).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
        let (c, _) = reduce_points(40, |i| i % 3, line(&pos), 1e-3, 0.05);
        let mut all: Vec<usize> = c.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }
}

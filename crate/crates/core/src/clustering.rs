//! Density-based clustering and the Calinski-Harabasz quality index.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("min_pts must be at least 1")]
    InvalidMinPts,
    #[error("no points to cluster")]
    EmptyInput,
    #[error("labels and points differ in length")]
    LengthMismatch,
    #[error("clustering has fewer than two clusters")]
    DegenerateClustering,
    #[error("epsilon grid is empty")]
    EmptyGrid,
}

/// `(training EMA, missed-round EMA)` feature of one client.
pub type FeaturePoint = [f64; 2];

pub const NOISE: i32 = -1;

fn dist2(a: &FeaturePoint, b: &FeaturePoint) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn region_query(points: &[FeaturePoint], idx: usize, eps2: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(&points[idx], p) <= eps2)
        .map(|(j, _)| j)
        .collect()
}

/// Standard DBSCAN. A point is core when at least `min_pts` points
/// (itself included) lie within `epsilon`. Noise is labeled [`NOISE`];
/// cluster labels are `0..k` in discovery order.
pub fn dbscan(points: &[FeaturePoint], epsilon: f64, min_pts: usize) -> Result<Vec<i32>, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ClusterError::InvalidEpsilon(epsilon));
    }
    if min_pts == 0 {
        return Err(ClusterError::InvalidMinPts);
    }
    let eps2 = epsilon * epsilon;
    let mut labels: Vec<Option<i32>> = vec![None; points.len()];
    let mut next_label = 0;

    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        let neighbors = region_query(points, i, eps2);
        if neighbors.len() < min_pts {
            labels[i] = Some(NOISE);
            continue;
        }
        let cluster = next_label;
        next_label += 1;
        labels[i] = Some(cluster);
        let mut queue = neighbors;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            match labels[q] {
                Some(NOISE) => labels[q] = Some(cluster),
                None => {
                    labels[q] = Some(cluster);
                    let reach = region_query(points, q, eps2);
                    if reach.len() >= min_pts {
                        queue.extend(reach);
                    }
                }
                Some(_) => {}
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect())
}

/// Maps noise to its own trailing group so every point has a cluster index.
fn dense_groups(labels: &[i32]) -> (Vec<usize>, usize) {
    let max = labels.iter().copied().max().unwrap_or(NOISE);
    let noise_group = (max + 1) as usize;
    let has_noise = labels.contains(&NOISE);
    let groups = labels
        .iter()
        .map(|&l| if l == NOISE { noise_group } else { l as usize })
        .collect();
    (groups, noise_group + usize::from(has_noise))
}

/// Groups point indices by label, noise collected into one extra group.
pub fn cluster_members(labels: &[i32]) -> Vec<Vec<usize>> {
    let (groups, count) = dense_groups(labels);
    let mut members = vec![Vec::new(); count];
    for (i, g) in groups.into_iter().enumerate() {
        members[g].push(i);
    }
    members.retain(|m| !m.is_empty());
    members
}

/// Calinski-Harabasz index with noise treated as a single cluster.
///
/// Returns `+inf` when the within-cluster dispersion is zero.
pub fn calinski_harabasz(points: &[FeaturePoint], labels: &[i32]) -> Result<f64, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if points.len() != labels.len() {
        return Err(ClusterError::LengthMismatch);
    }
    let members = cluster_members(labels);
    let k = members.len();
    if k < 2 {
        return Err(ClusterError::DegenerateClustering);
    }
    let n = points.len();
    let centroid = |idx: &[usize]| -> FeaturePoint {
        let mut c = [0.0; 2];
        for &i in idx {
            c[0] += points[i][0];
            c[1] += points[i][1];
        }
        [c[0] / idx.len() as f64, c[1] / idx.len() as f64]
    };
    let all: Vec<usize> = (0..n).collect();
    let overall = centroid(&all);

    let mut between = 0.0;
    let mut within = 0.0;
    for group in &members {
        let c = centroid(group);
        between += group.len() as f64 * dist2(&c, &overall);
        within += group.iter().map(|&i| dist2(&points[i], &c)).sum::<f64>();
    }
    if within == 0.0 || n == k {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    pub labels: Vec<i32>,
    /// No grid value produced two or more clusters.
    pub single_cluster_fallback: bool,
}

/// Grid search over `grid` for the epsilon maximizing the CH index.
/// Ties go to the smaller epsilon.
pub fn select_epsilon(
    points: &[FeaturePoint],
    grid: &[f64],
    min_pts: usize,
) -> Result<EpsilonChoice, ClusterError> {
    if grid.is_empty() {
        return Err(ClusterError::EmptyGrid);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut best: Option<(f64, f64, Vec<i32>)> = None;
    for &eps in &sorted {
        let labels = dbscan(points, eps, min_pts)?;
        let score = match calinski_harabasz(points, &labels) {
            Ok(s) => s,
            Err(ClusterError::DegenerateClustering) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((eps, score, labels));
        }
    }
    match best {
        Some((epsilon, _, labels)) => Ok(EpsilonChoice {
            epsilon,
            labels,
            single_cluster_fallback: false,
        }),
        None => {
            let epsilon = sorted[0];
            Ok(EpsilonChoice {
                epsilon,
                labels: dbscan(points, epsilon, min_pts)?,
                single_cluster_fallback: true,
            })
        }
    }
}

/// Default grid: `count` log-spaced values between the 5th and 95th
/// percentiles of the positive pairwise distances.
pub fn default_epsilon_grid(points: &[FeaturePoint], count: usize) -> Vec<f64> {
    let mut dists: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist2(&points[i], &points[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() || count == 0 {
        return vec![1.0];
    }
    dists.sort_by(f64::total_cmp);
    let pick = |q: f64| dists[((dists.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (pick(0.05), pick(0.95));
    if count == 1 || hi <= lo {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Z-scores each coordinate; a constant coordinate maps to 0.
pub fn standardize(points: &[FeaturePoint]) -> Vec<FeaturePoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let n = points.len() as f64;
    let mut out = points.to_vec();
    for axis in 0..2 {
        let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for p in out.iter_mut() {
            p[axis] = if sd > 0.0 { (p[axis] - mean) / sd } else { 0.0 };
        }
    }
    out
}

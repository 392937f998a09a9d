//! Spherical K-means on unit vectors, cosine silhouette, and silhouette-driven
//! choice of K.
//!
//! Similarity is the plain dot product of unit rows; a center is the mean of
//! its members rescaled to unit length. Every reduction runs in a fixed index
//! order, so a model is bit-identical whatever the rayon pool size.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_diff::{dot, l2_norm, UnitMatrix};

/// Cluster sums at or below this norm have no usable mean direction.
pub const DEGENERATE_MEAN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 10,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

impl KMeansConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// k×dim, row-major, unit rows.
    pub centers: Vec<f64>,
    /// Sum over points of the dot product with their own center.
    pub objective: f64,
    /// `None` when fewer than two clusters exist.
    pub silhouette: Option<f64>,
    pub seed: u64,
    /// Iterations of the winning restart.
    pub iterations: usize,
    pub restarts_used: usize,
    /// Objective after every update step of the winning restart.
    pub objective_log: Vec<f64>,
    /// Objective logs of every restart, in restart order.
    pub restart_logs: Vec<Vec<f64>>,
}

impl ClusterModel {
    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Objective recomputed from the assignments and centers.
    pub fn recompute_objective(&self, points: &UnitMatrix) -> f64 {
        objective(points, &self.assignments, &self.centers)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionProvenance {
    pub seed: u64,
    pub silhouette: Option<f64>,
    pub n_samples: usize,
}

/// K unit concept directions for one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    class_label: String,
    directions: Vec<f64>,
    dim: usize,
    provenance: DirectionProvenance,
}

impl DirectionSet {
    pub fn new(
        class_label: impl Into<String>,
        directions: Vec<f64>,
        dim: usize,
        provenance: DirectionProvenance,
    ) -> Result<Self> {
        if dim == 0 || directions.is_empty() || !directions.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "direction data of length {} does not form rows of width {dim}",
                directions.len()
            )));
        }
        for (i, row) in directions.chunks_exact(dim).enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "direction {i} has norm {norm}, expected unit"
                )));
            }
        }
        Ok(Self {
            class_label: class_label.into(),
            directions,
            dim,
            provenance,
        })
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn k(&self) -> usize {
        self.directions.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn provenance(&self) -> &DirectionProvenance {
        &self.provenance
    }
}

fn objective(points: &UnitMatrix, assignments: &[usize], centers: &[f64]) -> f64 {
    let dim = points.dim();
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| dot(points.row(i), &centers[a * dim..(a + 1) * dim]))
        .sum()
}

/// Index of the center with the largest dot product; ties go to the lowest index.
fn nearest_center(x: &[f64], centers: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let s = dot(x, center);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    best
}

fn assign_all(points: &UnitMatrix, centers: &[f64]) -> Vec<usize> {
    let dim = points.dim();
    (0..points.n_rows())
        .into_par_iter()
        .map(|i| nearest_center(points.row(i), centers, dim))
        .collect()
}

/// k-means++ seeding with the cosine distance `1 - <x, c>`.
fn plus_plus_init(points: &UnitMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.n_rows();
    let dim = points.dim();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| (1.0 - dot(points.row(i), points.row(chosen[0]))).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min((1.0 - dot(points.row(i), points.row(next))).max(0.0));
        }
    }
    let mut centers = Vec::with_capacity(k * dim);
    for &i in &chosen {
        centers.extend_from_slice(points.row(i));
    }
    centers
}

fn cluster_sums(points: &UnitMatrix, assignments: &[usize], k: usize) -> (Vec<f64>, Vec<usize>) {
    let dim = points.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    (sums, counts)
}

/// Recomputes centers as renormalized member means. An empty cluster or one
/// whose mean vanishes takes over the point lying farthest from its current
/// center; this is retried once before giving up.
fn update_centers(
    points: &UnitMatrix,
    assignments: &mut [usize],
    previous: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let dim = points.dim();
    for attempt in 0..2 {
        let (mut sums, counts) = cluster_sums(points, assignments, k);
        let norms: Vec<f64> = sums.chunks_exact(dim).map(l2_norm).collect();
        let degenerate: Vec<usize> = (0..k)
            .filter(|&c| counts[c] == 0 || norms[c] <= DEGENERATE_MEAN_NORM)
            .collect();
        if degenerate.is_empty() {
            for (row, norm) in sums.chunks_exact_mut(dim).zip(&norms) {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            return Ok(sums);
        }
        if attempt == 1 {
            return Err(Error::DegenerateMean {
                cluster: degenerate[0],
            });
        }
        let mut counts = counts;
        for &c in &degenerate {
            let mut far = None;
            let mut far_sim = f64::INFINITY;
            for (i, &a) in assignments.iter().enumerate() {
                if a == c || counts[a] < 2 {
                    continue;
                }
                let s = dot(points.row(i), &previous[a * dim..(a + 1) * dim]);
                if s < far_sim {
                    far_sim = s;
                    far = Some(i);
                }
            }
            let p = far.ok_or(Error::DegenerateMean { cluster: c })?;
            counts[assignments[p]] -= 1;
            counts[c] += 1;
            assignments[p] = c;
        }
    }
    unreachable!("loop returns on the second attempt")
}

struct RunOutcome {
    assignments: Vec<usize>,
    centers: Vec<f64>,
    objective: f64,
    log: Vec<f64>,
}

fn single_run(
    points: &UnitMatrix,
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutcome> {
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignments = assign_all(points, &centers);
    let mut log: Vec<f64> = Vec::new();
    loop {
        centers = update_centers(points, &mut assignments, &centers, k)?;
        let obj = objective(points, &assignments, &centers);
        let improvement = log.last().map(|prev| obj - prev);
        log.push(obj);
        if log.len() >= max_iter.max(1) || improvement.is_some_and(|d| d < tol) {
            break;
        }
        let next = assign_all(points, &centers);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let objective = *log.last().expect("at least one iteration");
    Ok(RunOutcome {
        assignments,
        centers,
        objective,
        log,
    })
}

fn kmeans_without_silhouette(
    points: &UnitMatrix,
    k: usize,
    cfg: &KMeansConfig,
) -> Result<ClusterModel> {
    let n = points.n_rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    let restarts = cfg.restarts.max(1);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<RunOutcome> = None;
    let mut restart_logs = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let run = single_run(points, k, cfg.max_iter, cfg.tol, &mut rng)?;
        restart_logs.push(run.log.clone());
        if best.as_ref().is_none_or(|b| run.objective > b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterModel {
        k,
        dim: points.dim(),
        iterations: best.log.len(),
        assignments: best.assignments,
        centers: best.centers,
        objective: best.objective,
        silhouette: None,
        seed: cfg.seed,
        restarts_used: restarts,
        objective_log: best.log,
        restart_logs,
    })
}

/// Best-objective spherical K-means model over `cfg.restarts` seeded runs.
pub fn spherical_kmeans(points: &UnitMatrix, k: usize, cfg: &KMeansConfig) -> Result<ClusterModel> {
    let mut model = kmeans_without_silhouette(points, k, cfg)?;
    model.silhouette = silhouette_cosine(points, &model.assignments).ok();
    Ok(model)
}

/// Mean silhouette with cosine distance `1 - <x, y>`.
///
/// Per point, `a` is the mean distance to the rest of its own cluster and `b`
/// the smallest mean distance to another cluster; a point alone in its
/// cluster, or with `max(a, b) == 0`, scores 0.
pub fn silhouette_cosine(points: &UnitMatrix, assignments: &[usize]) -> Result<f64> {
    let n = points.n_rows();
    if assignments.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            actual: assignments.len(),
        });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let (sums, counts) = cluster_sums(points, assignments, k);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    let dim = points.dim();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let own = assignments[i];
            if counts[own] < 2 {
                return 0.0;
            }
            // mean distance to a cluster = 1 - <x, cluster sum> / size
            let self_sim = dot(x, x);
            let a = 1.0
                - (dot(x, &sums[own * dim..(own + 1) * dim]) - self_sim) / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| 1.0 - dot(x, &sums[c * dim..(c + 1) * dim]) / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let (a, b) = (a.max(0.0), b.max(0.0));
            let denom = a.max(b);
            if denom <= 1e-12 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k_star: usize,
    pub models: BTreeMap<usize, ClusterModel>,
}

impl KSelection {
    pub fn best(&self) -> &ClusterModel {
        &self.models[&self.k_star]
    }
}

/// Clusters for every k in `k_min..=k_max` and keeps the k with the highest
/// silhouette (smaller k wins ties).
pub fn select_k(
    points: &UnitMatrix,
    k_min: usize,
    k_max: usize,
    cfg: &KMeansConfig,
) -> Result<KSelection> {
    let n = points.n_rows();
    if k_min < 2 || k_min > k_max {
        return Err(Error::InvalidArgument(format!(
            "invalid k range {k_min}..={k_max}"
        )));
    }
    if k_max + 1 > n {
        return Err(Error::TooFewPoints { n, k: k_max + 1 });
    }
    let mut models = BTreeMap::new();
    let mut k_star = k_min;
    let mut best = f64::NEG_INFINITY;
    for k in k_min..=k_max {
        let model = spherical_kmeans(points, k, cfg)?;
        let s = model.silhouette.unwrap_or(f64::NEG_INFINITY);
        if s > best {
            best = s;
            k_star = k;
        }
        models.insert(k, model);
    }
    Ok(KSelection { k_star, models })
}

/// Cluster centers as concept directions, order preserved.
pub fn extract_directions(model: &ClusterModel, class_label: &str) -> Result<DirectionSet> {
    DirectionSet::new(
        class_label,
        model.centers.clone(),
        model.dim,
        DirectionProvenance {
            seed: model.seed,
            silhouette: model.silhouette,
            n_samples: model.assignments.len(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(rows: &[Vec<f64>]) -> UnitMatrix {
        let dim = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
        let data = rows
            .iter()
            .flat_map(|r| {
                let n = l2_norm(r);
                r.iter().map(move |v| v / n)
            })
            .collect();
        UnitMatrix::from_unit_rows(ids, data, dim).unwrap()
    }

    fn antipodal_caps() -> UnitMatrix {
        units(&[
            vec![1.0, 0.1, 0.0],
            vec![1.0, -0.1, 0.05],
            vec![1.0, 0.0, -0.1],
            vec![-1.0, 0.1, 0.0],
            vec![-1.0, -0.05, 0.1],
            vec![-1.0, 0.0, -0.1],
        ])
    }

    #[test]
    fn k_equals_n() {
        let pts = antipodal_caps();
        let m = spherical_kmeans(&pts, 6, &KMeansConfig::with_seed(1)).unwrap();
        assert!((m.objective - 6.0).abs() < 1e-12);
        assert_eq!(m.cluster_sizes(), vec![1; 6]);
        assert_eq!(m.silhouette, Some(0.0));
    }

    #[test]
    fn antipodal_caps_split() {
        let pts = antipodal_caps();
        let m = spherical_kmeans(&pts, 2, &KMeansConfig::with_seed(4)).unwrap();
        let a = &m.assignments;
        assert!(a[0] == a[1] && a[1] == a[2]);
        assert!(a[3] == a[4] && a[4] == a[5]);
        assert_ne!(a[0], a[3]);
        assert!((m.recompute_objective(&pts) - m.objective).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        let pts = antipodal_caps();
        assert!(matches!(
            spherical_kmeans(&pts, 7, &KMeansConfig::default()),
            Err(Error::TooFewPoints { n: 6, k: 7 })
        ));
    }

    #[test]
    fn antipodal_pair_mean_is_repaired() {
        // Two antipodal points plus a third: any cluster holding only the
        // antipodal pair has a vanishing mean.
        let pts = units(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        for seed in 0..20 {
            let m = spherical_kmeans(&pts, 2, &KMeansConfig::with_seed(seed)).unwrap();
            assert!(m.cluster_sizes().iter().all(|&s| s > 0));
            for c in 0..2 {
                assert!((l2_norm(m.center(c)) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silhouette_extremes() {
        let pts = antipodal_caps();
        let s = silhouette_cosine(&pts, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!(s > 0.9, "{s}");
        let same = units(&vec![vec![0.0, 1.0, 0.0]; 4]);
        assert_eq!(silhouette_cosine(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        let gen = units(&vec![vec![0.3, -0.7, 0.2]; 4]);
        assert_eq!(silhouette_cosine(&gen, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(matches!(
            silhouette_cosine(&pts, &[0; 6]),
            Err(Error::SingleCluster)
        ));
    }

    #[test]
    fn single_candidate_range() {
        let pts = antipodal_caps();
        let sel = select_k(&pts, 2, 2, &KMeansConfig::with_seed(0)).unwrap();
        assert_eq!(sel.k_star, 2);
        assert_eq!(sel.models.len(), 1);
        assert!(select_k(&pts, 1, 3, &KMeansConfig::default()).is_err());
        assert!(select_k(&pts, 2, 6, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn directions_copy_centers() {
        let pts = units(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = spherical_kmeans(&pts, 1, &KMeansConfig::default()).unwrap();
        let set = extract_directions(&m, "MEL").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((set.direction(0)[0] - h).abs() < 1e-15);
        assert!((set.direction(0)[1] - h).abs() < 1e-15);
        assert_eq!(set.provenance().n_samples, 2);
        assert_eq!(set.provenance().silhouette, None);

        let m2 = spherical_kmeans(&pts, 2, &KMeansConfig::default()).unwrap();
        let set2 = extract_directions(&m2, "MEL").unwrap();
        assert_eq!(set2.k(), 2);
        assert_eq!(set2.directions(), m2.centers.as_slice());
    }

    #[test]
    fn rejects_non_unit_direction() {
        let err = DirectionSet::new("x", vec![2.0, 0.0], 2, DirectionProvenance::default());
        assert!(err.is_err());
    }
}

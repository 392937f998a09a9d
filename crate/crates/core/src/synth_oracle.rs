//! Synthetic data with planted directions, and brute-force oracles used to
//! check the clustering and matching code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::latent_diff::{dot, l2_norm, UnitMatrix};
use crate::sphere_cluster::{DirectionProvenance, DirectionSet};
use crate::tensor_io::{LatentMatrix, PairEntry, PairManifest};

/// Largest assignment space `exhaustive_kmeans` will enumerate.
pub const MAX_ENUMERATION: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub k_true: usize,
    pub d: usize,
    pub n: usize,
    /// Standard deviation of the Gaussian added before normalization.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Share of samples per planted direction; sums to 1.
    pub mixing: Vec<f64>,
}

impl PlantedSpec {
    pub fn uniform(k_true: usize, d: usize, n: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            k_true,
            d,
            n,
            noise_sigma,
            seed,
            mixing: vec![1.0 / k_true.max(1) as f64; k_true],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(
                "k_true and d must be positive".into(),
            ));
        }
        if self.k_true > self.d {
            return Err(Error::KExceedsD {
                k: self.k_true,
                d: self.d,
            });
        }
        if self.mixing.len() != self.k_true || self.mixing.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "mixing needs one non-negative share per direction".into(),
            ));
        }
        if (self.mixing.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixing shares must sum to 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub points: UnitMatrix,
    pub truth: DirectionSet,
    pub labels: Vec<usize>,
}

/// Splits `n` by `shares` with the largest-remainder rule (lowest index wins ties).
pub fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// `k` orthonormal vectors by Gram-Schmidt on Gaussian draws.
pub fn orthonormal_directions(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if k > d {
        return Err(Error::KExceedsD { k, d });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian_vec(rng, d);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = l2_norm(&v);
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// Samples `normalize(direction + N(0, sigma^2 I))` around planted orthonormal directions.
pub fn generate_planted(spec: &PlantedSpec) -> Result<Planted> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = orthonormal_directions(spec.k_true, spec.d, &mut rng)?;
    let counts = allocate(spec.n, &spec.mixing);
    let mut labels = Vec::with_capacity(spec.n);
    let mut data = Vec::with_capacity(spec.n * spec.d);
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            labels.push(c);
            if spec.noise_sigma == 0.0 {
                data.extend_from_slice(&dirs[c]);
                continue;
            }
            loop {
                let v: Vec<f64> = dirs[c]
                    .iter()
                    .zip(gaussian_vec(&mut rng, spec.d))
                    .map(|(u, g)| u + spec.noise_sigma * g)
                    .collect();
                let n = l2_norm(&v);
                if n > 1e-9 {
                    data.extend(v.iter().map(|x| x / n));
                    break;
                }
            }
        }
    }
    let ids = (0..spec.n).map(|i| format!("p{i}")).collect();
    let truth = DirectionSet::new(
        "planted",
        dirs.concat(),
        spec.d,
        DirectionProvenance {
            seed: spec.seed,
            silhouette: None,
            n_samples: spec.n,
        },
    )?;
    Ok(Planted {
        points: UnitMatrix::from_unit_rows(ids, data, spec.d)?,
        truth,
        labels,
    })
}

/// Global optimum of the spherical K-means objective by enumerating every
/// surjective assignment. Ties keep the lexicographically first assignment.
pub fn exhaustive_kmeans(points: &UnitMatrix, k: usize) -> Result<(f64, Vec<usize>)> {
    let n = points.n_rows();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    let total = (k as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= MAX_ENUMERATION);
    let total = total.ok_or(Error::InstanceTooLarge { n, k })?;
    let d = points.dim();
    let mut labels = vec![0usize; n];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for rank in 0..total {
        let mut r = rank;
        for slot in labels.iter_mut().rev() {
            *slot = (r % k as u64) as usize;
            r /= k as u64;
        }
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.contains(&false) {
            continue;
        }
        let mut centers = vec![vec![0.0; d]; k];
        for (i, &l) in labels.iter().enumerate() {
            for (c, x) in centers[l].iter_mut().zip(points.row(i)) {
                *c += x;
            }
        }
        for c in centers.iter_mut() {
            let norm = l2_norm(c);
            if norm > 0.0 {
                c.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let obj: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| dot(points.row(i), &centers[l]))
            .sum();
        if obj > best.0 {
            best = (obj, labels.clone());
        }
    }
    Ok(best)
}

/// Greedy maximum-cosine matching. `permutation[i]` is the truth index
/// matched to recovered direction `i`.
pub fn match_directions(
    recovered: &DirectionSet,
    truth: &DirectionSet,
) -> Result<(Vec<usize>, f64)> {
    if recovered.k() != truth.k() || recovered.dim() != truth.dim() {
        return Err(Error::KMismatch(format!(
            "recovered {}x{} vs truth {}x{}",
            recovered.k(),
            recovered.dim(),
            truth.k(),
            truth.dim()
        )));
    }
    let k = truth.k();
    let mut cos = vec![vec![0.0; k]; k];
    for (i, row) in cos.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = dot(recovered.direction(i), truth.direction(j));
        }
    }
    let mut perm = vec![usize::MAX; k];
    let mut truth_used = vec![false; k];
    let mut min_cos = f64::INFINITY;
    for _ in 0..k {
        let mut pick = (0, 0);
        let mut best = f64::NEG_INFINITY;
        for i in (0..k).filter(|&i| perm[i] == usize::MAX) {
            for j in (0..k).filter(|&j| !truth_used[j]) {
                if cos[i][j] > best {
                    best = cos[i][j];
                    pick = (i, j);
                }
            }
        }
        perm[pick.0] = pick.1;
        truth_used[pick.1] = true;
        min_cos = min_cos.min(best);
    }
    Ok((perm, min_cos))
}

/// Complete synthetic inputs for an end-to-end pipeline run: two target
/// classes, each with planted edit directions that the linear scorer rewards.
#[derive(Debug, Clone)]
pub struct PipelineFixture {
    pub factual: LatentMatrix,
    pub counterfactual: LatentMatrix,
    pub manifest: PairManifest,
    pub test_latents: LatentMatrix,
    /// Scorer weights; row ids are the class labels.
    pub weights: LatentMatrix,
    /// Planted directions per target class.
    pub truth: Vec<DirectionSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub targets: Vec<String>,
    pub k_true: usize,
    pub d: usize,
    pub pairs_per_target: usize,
    pub n_test: usize,
    pub step: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            targets: vec!["A".into(), "B".into()],
            k_true: 3,
            d: 16,
            pairs_per_target: 120,
            n_test: 60,
            step: 3.0,
            noise_sigma: 0.1,
            seed: 1,
        }
    }
}

/// Label of the scorer class that no counterfactual targets.
pub const REST_CLASS: &str = "rest";

pub fn pipeline_fixture(spec: &FixtureSpec) -> Result<PipelineFixture> {
    let t = spec.targets.len();
    if t == 0 || spec.pairs_per_target == 0 || spec.n_test < 2 {
        return Err(Error::InvalidArgument(
            "fixture needs targets, pairs and at least 2 test rows".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = orthonormal_directions(t * spec.k_true, spec.d, &mut rng)?;
    let mut classes = spec.targets.clone();
    classes.push(REST_CLASS.into());

    let mut f_ids = Vec::new();
    let mut f_data = Vec::new();
    let mut cf_ids = Vec::new();
    let mut cf_data = Vec::new();
    let mut entries = Vec::new();
    for (ti, target) in spec.targets.iter().enumerate() {
        let others: Vec<&String> = classes.iter().filter(|c| *c != target).collect();
        for p in 0..spec.pairs_per_target {
            let dir = &dirs[ti * spec.k_true + p % spec.k_true];
            let z = gaussian_vec(&mut rng, spec.d);
            let noise = gaussian_vec(&mut rng, spec.d);
            let f_id = format!("{target}-f{p}");
            let cf_id = format!("{target}-cf{p}");
            f_data.extend(z.iter().map(|&v| v as f32));
            cf_data.extend(
                z.iter()
                    .zip(dir)
                    .zip(&noise)
                    .map(|((zv, u), g)| (zv + spec.step * (u + spec.noise_sigma * g)) as f32),
            );
            entries.push(PairEntry {
                factual_id: f_id.clone(),
                counterfactual_id: cf_id.clone(),
                predicted_class: others[p % others.len()].clone(),
                target_class: target.clone(),
            });
            f_ids.push(f_id);
            cf_ids.push(cf_id);
        }
    }

    let test_ids = (0..spec.n_test).map(|i| format!("t{i}")).collect();
    let test_data = (0..spec.n_test * spec.d)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|v: f64| v as f32)
        .collect();

    let mut w = Vec::with_capacity(classes.len() * spec.d);
    for ti in 0..t {
        let row: Vec<f64> = (0..spec.d)
            .map(|j| {
                (0..spec.k_true)
                    .map(|c| dirs[ti * spec.k_true + c][j])
                    .sum()
            })
            .collect();
        w.extend(row.iter().map(|&v| v as f32));
    }
    w.extend(std::iter::repeat_n(0.0f32, spec.d));

    let truth = spec
        .targets
        .iter()
        .enumerate()
        .map(|(ti, target)| {
            DirectionSet::new(
                target.clone(),
                dirs[ti * spec.k_true..(ti + 1) * spec.k_true].concat(),
                spec.d,
                DirectionProvenance {
                    seed: spec.seed,
                    silhouette: None,
                    n_samples: spec.pairs_per_target,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PipelineFixture {
        factual: LatentMatrix::new(f_ids, f_data, spec.d)?,
        counterfactual: LatentMatrix::new(cf_ids, cf_data, spec.d)?,
        manifest: PairManifest { entries },
        test_latents: LatentMatrix::new(test_ids, test_data, spec.d)?,
        weights: LatentMatrix::new(classes, w, spec.d)?,
        truth,
    })
}

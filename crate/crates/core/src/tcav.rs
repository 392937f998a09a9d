//! Concept activation vectors and TCAV scores over externally extracted
//! activations and gradients.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::LatentMatrix;

pub const DEFAULT_L2_REG: f64 = 1e-3;
pub const DEFAULT_RUNS: usize = 10;
const ITERATIONS: usize = 500;
const STEP_SIZE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavModel {
    /// Unit normal of the concept/negative boundary, pointing at the concept side.
    pub v: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    pub seed: u64,
    /// Set when the fit does no better than chance.
    pub warning: Option<String>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn dot_f32(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

/// L2-regularized logistic regression (concept = 1, negative = 0) fitted by
/// full-batch gradient descent: 500 steps of size 0.1 from a small seeded
/// Gaussian start.
pub fn fit_cav(
    concept: &LatentMatrix,
    negatives: &LatentMatrix,
    l2_reg: f64,
    seed: u64,
) -> Result<CavModel> {
    if concept.dim() != negatives.dim() {
        return Err(Error::DimMismatch {
            expected: concept.dim(),
            actual: negatives.dim(),
        });
    }
    if concept.n_rows() == 0 || negatives.n_rows() == 0 {
        return Err(Error::InvalidArgument(
            "CAV fitting needs non-empty concept and negative sets".into(),
        ));
    }
    if !(l2_reg >= 0.0) {
        return Err(Error::InvalidArgument("l2_reg must be non-negative".into()));
    }
    let first = concept.row(0);
    if concept.rows().chain(negatives.rows()).all(|r| r == first) {
        return Err(Error::DegenerateData(
            "all activations are identical".into(),
        ));
    }

    let d = concept.dim();
    let samples: Vec<(&[f32], f64)> = concept
        .rows()
        .map(|r| (r, 1.0))
        .chain(negatives.rows().map(|r| (r, 0.0)))
        .collect();
    let n = samples.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..ITERATIONS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (x, y) in &samples {
            let r = sigmoid(dot_f32(&w, x) + b) - y;
            grad_b += r;
            for (g, &xi) in grad.iter_mut().zip(x.iter()) {
                *g += r * xi as f64;
            }
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= STEP_SIZE * (g / n + l2_reg * *wi);
        }
        b -= STEP_SIZE * grad_b / n;
    }

    let correct = samples
        .iter()
        .filter(|(x, y)| (dot_f32(&w, x) + b > 0.0) == (*y == 1.0))
        .count();
    let train_accuracy = correct as f64 / n;
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return Err(Error::DegenerateData("CAV weight vector vanished".into()));
    }
    let warning = (train_accuracy <= 0.5).then(|| {
        format!(
            "concept and negative activations are not separable (train accuracy {train_accuracy})"
        )
    });
    Ok(CavModel {
        v: w.iter().map(|v| v / norm).collect(),
        bias: b / norm,
        train_accuracy,
        seed,
        warning,
    })
}

/// Fraction of gradient rows with a strictly positive component along the CAV.
pub fn tcav_score(gradients: &LatentMatrix, cav: &CavModel) -> Result<f64> {
    if gradients.dim() != cav.v.len() {
        return Err(Error::DimMismatch {
            expected: cav.v.len(),
            actual: gradients.dim(),
        });
    }
    if gradients.n_rows() == 0 {
        return Err(Error::EmptyGradients);
    }
    let positive = gradients
        .rows()
        .filter(|g| dot_f32(&cav.v, g) > 0.0)
        .count();
    Ok(positive as f64 / gradients.n_rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcavConfig {
    pub runs: usize,
    pub seed: u64,
    pub l2_reg: f64,
    /// Negatives drawn per run; defaults to `min(concept count, pool size)`.
    pub subset_size: Option<usize>,
}

impl Default for TcavConfig {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            seed: 0,
            l2_reg: DEFAULT_L2_REG,
            subset_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcavSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub per_run: Vec<f64>,
    pub subset_size: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for run `index` under `master`.
pub fn run_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

/// `n choose k`, saturating at `u128::MAX`.
fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn subset_rows(m: &LatentMatrix, rows: &[usize]) -> Result<LatentMatrix> {
    let ids = rows.iter().map(|&i| m.ids()[i].clone()).collect();
    let data = rows
        .iter()
        .flat_map(|&i| m.row(i).iter().copied())
        .collect();
    LatentMatrix::new(ids, data, m.dim())
}

/// Repeats CAV fitting against fresh, pairwise distinct negative subsets and
/// summarizes the TCAV scores.
pub fn tcav_runs(
    concept: &LatentMatrix,
    negatives_pool: &LatentMatrix,
    gradients: &LatentMatrix,
    cfg: &TcavConfig,
) -> Result<TcavSummary> {
    if cfg.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let pool = negatives_pool.n_rows();
    let m = cfg.subset_size.unwrap_or(concept.n_rows().min(pool));
    let insufficient = Error::InsufficientNegatives {
        pool,
        subset: m,
        runs: cfg.runs,
    };
    if m == 0 || m > pool || binomial(pool, m) < cfg.runs as u128 {
        return Err(insufficient);
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut subsets = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed(cfg.seed, run));
        let mut attempts = 0;
        loop {
            let mut idx: Vec<usize> = (0..pool).collect();
            for i in 0..m {
                let j = rng.random_range(i..pool);
                idx.swap(i, j);
            }
            let mut pick = idx[..m].to_vec();
            pick.sort_unstable();
            if seen.insert(pick.clone()) {
                subsets.push(pick);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(insufficient);
            }
        }
    }

    let per_run = subsets
        .par_iter()
        .enumerate()
        .map(|(run, rows)| {
            let negatives = subset_rows(negatives_pool, rows)?;
            let cav = fit_cav(concept, &negatives, cfg.l2_reg, run_seed(cfg.seed, run))?;
            tcav_score(gradients, &cav)
        })
        .collect::<Result<Vec<f64>>>()?;

    let runs = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / runs;
    let std = if per_run.len() > 1 {
        (per_run.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TcavSummary {
        mean,
        std,
        per_run,
        subset_size: m,
    })
}

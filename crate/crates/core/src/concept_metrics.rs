//! Ablation metrics over per-concept effects: coverage, best-of-K influence,
//! top-q mean, and the redundancy of a direction set.
//!
//! Effects stay in probability units here; reports rescale to percentage
//! points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_diff::dot;
use crate::sphere_cluster::DirectionSet;
use crate::traversal::ProbTable;

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_Q: f64 = 0.3;

/// N×K matrix of target-probability changes, one column per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectTable {
    ids: Vec<String>,
    k: usize,
    effects: Vec<f64>,
}

impl EffectTable {
    pub fn new(ids: Vec<String>, k: usize, effects: Vec<f64>) -> Result<Self> {
        if k == 0 || ids.is_empty() {
            return Err(Error::InvalidArgument(
                "effect table needs N >= 1 and K >= 1".into(),
            ));
        }
        if effects.len() != ids.len() * k {
            return Err(Error::ShapeMismatch {
                expected: (ids.len() * k) as u64,
                actual: effects.len() as u64,
            });
        }
        if effects.iter().any(|e| !(e.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("effects must lie in [-1, 1]".into()));
        }
        Ok(Self { ids, k, effects })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("ragged effect rows".into()));
        }
        let ids = (0..rows.len()).map(|i| format!("x{i}")).collect();
        Self::new(ids, k, rows.concat())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.effects[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.effects.chunks_exact(self.k)
    }

    /// Most effective concept per sample (lowest index on ties).
    pub fn argmax_concepts(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `effects[i][k] = manipulated_k[i, target] - baseline[i, target]`.
pub fn effect_table(
    baseline: &ProbTable,
    manipulated: &[ProbTable],
    target: &str,
) -> Result<EffectTable> {
    if manipulated.is_empty() {
        return Err(Error::EmptyConceptList);
    }
    let t = baseline.class_index(target)?;
    for m in manipulated {
        baseline.check_compatible(m)?;
    }
    let k = manipulated.len();
    let n = baseline.n_rows();
    let mut effects = Vec::with_capacity(n * k);
    for i in 0..n {
        let base = baseline.row(i)[t];
        effects.extend(manipulated.iter().map(|m| m.row(i)[t] - base));
    }
    EffectTable::new(baseline.ids().to_vec(), k, effects)
}

/// Fraction of samples where the best concept raises the target by at least `delta`.
pub fn coverage(t: &EffectTable, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let hits = t.rows().filter(|r| row_max(r) >= delta).count();
    Ok(hits as f64 / t.n_samples() as f64)
}

/// Mean over samples of the largest per-concept effect. Not clamped at zero.
pub fn best_of_k(t: &EffectTable) -> f64 {
    t.rows().map(row_max).sum::<f64>() / t.n_samples() as f64
}

/// Mean over samples of the average of the `ceil(q K)` largest effects.
pub fn top_q_mean(t: &EffectTable, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "q must lie in (0, 1], got {q}"
        )));
    }
    let m = ((q * t.k() as f64).ceil() as usize).clamp(1, t.k());
    let total: f64 = t
        .rows()
        .map(|r| {
            let mut sorted = r.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            sorted[..m].iter().sum::<f64>() / m as f64
        })
        .sum();
    Ok(total / t.n_samples() as f64)
}

/// Mean pairwise cosine similarity over distinct direction pairs.
pub fn redundancy(directions: &DirectionSet) -> Result<f64> {
    let k = directions.k();
    if k < 2 {
        return Err(Error::SingleDirection);
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += dot(directions.direction(i), directions.direction(j));
        }
    }
    Ok(2.0 * total / (k * (k - 1)) as f64)
}

/// One row of the K ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMetrics {
    pub k: usize,
    pub redundancy: f64,
    pub coverage: f64,
    pub best_of_k: f64,
    pub top_q_mean: f64,
}

pub fn ablation_metrics(
    directions: &DirectionSet,
    effects: &EffectTable,
    delta: f64,
    q: f64,
) -> Result<AblationMetrics> {
    Ok(AblationMetrics {
        k: directions.k(),
        redundancy: redundancy(directions)?,
        coverage: coverage(effects, delta)?,
        best_of_k: best_of_k(effects),
        top_q_mean: top_q_mean(effects, q)?,
    })
}

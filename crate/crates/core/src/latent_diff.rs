//! Latent difference vectors and their projection onto the unit sphere.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_io::{LatentMatrix, PairManifest};

pub const DEFAULT_EPSILON_NORM: f64 = 1e-8;

/// Rows on the unit sphere, stored in double precision, with the norm each
/// row had before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    source_norms: Vec<f64>,
}

impl UnitMatrix {
    /// Wraps rows that are already unit length (checked to 1e-6).
    pub fn from_unit_rows(ids: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch {
                expected: (ids.len() * dim) as u64,
                actual: data.len() as u64,
            });
        }
        let mut source_norms = Vec::with_capacity(ids.len());
        for row in data.chunks_exact(dim) {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "row norm {norm} is not unit"
                )));
            }
            source_norms.push(norm);
        }
        Ok(Self {
            ids,
            data,
            dim,
            source_norms,
        })
    }

    /// Widens stored single-precision unit rows and renormalizes them in
    /// double precision, so clustering sees the same values whether it runs
    /// inside the pipeline or from a file on disk.
    pub fn from_stored(m: &LatentMatrix) -> Result<Self> {
        let dim = m.dim();
        let mut data = Vec::with_capacity(m.data().len());
        for row in m.rows() {
            let wide: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            let norm = l2_norm(&wide);
            if (norm - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!(
                    "row norm {norm} is not unit"
                )));
            }
            data.extend(wide.iter().map(|v| v / norm));
        }
        Self::from_unit_rows(m.ids().to_vec(), data, dim)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn source_norms(&self) -> &[f64] {
        &self.source_norms
    }

    /// Rows reordered by `order` (a permutation of row indices).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self {
            ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
            data,
            dim: self.dim,
            source_norms: order.iter().map(|&i| self.source_norms[i]).collect(),
        }
    }

    pub fn to_latent_matrix(&self) -> Result<LatentMatrix> {
        LatentMatrix::new(
            self.ids.clone(),
            self.data.iter().map(|&v| v as f32).collect(),
            self.dim,
        )
    }
}

/// Result of [`unit_normalize`]: the retained unit rows and the ids dropped
/// for having no usable direction.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub units: UnitMatrix,
    pub skipped: Vec<String>,
}

pub(crate) fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row i is `counterfactual[cf_i] - factual[f_i]`, in manifest order; the
/// output id is `f_id→cf_id`.
pub fn difference_vectors(
    factual: &LatentMatrix,
    counterfactual: &LatentMatrix,
    manifest: &PairManifest,
) -> Result<LatentMatrix> {
    if factual.dim() != counterfactual.dim() {
        return Err(Error::DimMismatch {
            expected: factual.dim(),
            actual: counterfactual.dim(),
        });
    }
    let f_index = factual.index();
    let cf_index = counterfactual.index();
    let mut pairs = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let fi = *f_index
            .get(e.factual_id.as_str())
            .ok_or_else(|| Error::UnresolvedId(e.factual_id.clone()))?;
        let ci = *cf_index
            .get(e.counterfactual_id.as_str())
            .ok_or_else(|| Error::UnresolvedId(e.counterfactual_id.clone()))?;
        pairs.push((fi, ci));
    }
    let dim = factual.dim();
    let data: Vec<f32> = pairs
        .par_iter()
        .flat_map_iter(|&(fi, ci)| {
            counterfactual
                .row(ci)
                .iter()
                .zip(factual.row(fi))
                .map(|(c, f)| c - f)
        })
        .collect();
    let ids = manifest
        .entries
        .iter()
        .map(|e| format!("{}→{}", e.factual_id, e.counterfactual_id))
        .collect();
    LatentMatrix::new(ids, data, dim)
}

/// Projects each row onto the unit sphere. Rows whose norm is at or below
/// `epsilon_norm` carry no direction and are dropped (reported in `skipped`).
pub fn unit_normalize(diffs: &LatentMatrix, epsilon_norm: f64) -> Result<Normalized> {
    if !(epsilon_norm > 0.0) {
        return Err(Error::InvalidArgument(
            "epsilon_norm must be positive".into(),
        ));
    }
    let dim = diffs.dim();
    let scaled: Vec<Option<(Vec<f64>, f64)>> = diffs
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|row| {
            let wide: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let norm = l2_norm(&wide);
            (norm > epsilon_norm).then(|| (wide.iter().map(|v| v / norm).collect(), norm))
        })
        .collect();

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut source_norms = Vec::new();
    let mut skipped = Vec::new();
    for (id, row) in diffs.ids().iter().zip(scaled) {
        match row {
            Some((unit, norm)) => {
                ids.push(id.clone());
                data.extend(unit);
                source_norms.push(norm);
            }
            None => skipped.push(id.clone()),
        }
    }
    if ids.is_empty() {
        return Err(Error::AllRowsDegenerate);
    }
    Ok(Normalized {
        units: UnitMatrix {
            ids,
            data,
            dim,
            source_norms,
        },
        skipped,
    })
}

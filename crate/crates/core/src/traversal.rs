//! Moving latents along concept directions and measuring how often the
//! target-class probability goes up.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_diff::l2_norm;
use crate::tensor_io::LatentMatrix;

/// Strictly increasing list of traversal strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaSweep(Vec<f64>);

impl AlphaSweep {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("alpha sweep is empty".into()));
        }
        if values.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("alpha values must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "alpha values must be strictly increasing".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for AlphaSweep {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<AlphaSweep> for Vec<f64> {
    fn from(s: AlphaSweep) -> Self {
        s.0
    }
}

impl FromStr for AlphaSweep {
    type Err = Error;

    /// Parses a comma-separated list such as `40,45,50`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad alpha value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

/// Class probabilities per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    ids: Vec<String>,
    classes: Vec<String>,
    probs: Vec<f64>,
}

impl ProbTable {
    pub fn new(ids: Vec<String>, classes: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        let c = classes.len();
        if c == 0 {
            return Err(Error::InvalidArgument(
                "probability table has no classes".into(),
            ));
        }
        let mut sorted = classes.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate class label".into()));
        }
        if probs.len() != ids.len() * c {
            return Err(Error::ShapeMismatch {
                expected: (ids.len() * c) as u64,
                actual: probs.len() as u64,
            });
        }
        for (i, row) in probs.chunks_exact(c).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has a value outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            ids,
            classes,
            probs,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.classes.len();
        &self.probs[i * c..(i + 1) * c]
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownTarget(label.to_owned()))
    }

    /// Probability column for one class.
    pub fn column(&self, label: &str) -> Result<Vec<f64>> {
        let j = self.class_index(label)?;
        Ok((0..self.n_rows()).map(|i| self.row(i)[j]).collect())
    }

    pub(crate) fn check_compatible(&self, other: &ProbTable) -> Result<()> {
        if self.ids != other.ids || self.classes != other.classes {
            return Err(Error::IdMismatch);
        }
        Ok(())
    }
}

/// Maps latents to class probabilities.
pub trait Scorer: Sync {
    fn classes(&self) -> &[String];
    fn score(&self, latents: &LatentMatrix) -> Result<ProbTable>;
}

/// `softmax(W z + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxScorer {
    classes: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
}

impl LinearSoftmaxScorer {
    pub fn new(
        classes: Vec<String>,
        weights: Vec<f64>,
        bias: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let c = classes.len();
        if c == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "scorer needs at least one class and dimension".into(),
            ));
        }
        if weights.len() != c * dim {
            return Err(Error::DimMismatch {
                expected: c * dim,
                actual: weights.len(),
            });
        }
        if bias.len() != c {
            return Err(Error::DimMismatch {
                expected: c,
                actual: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "scorer parameters must be finite".into(),
            ));
        }
        Ok(Self {
            classes,
            weights,
            bias,
            dim,
        })
    }

    /// Weight rows from a latent matrix whose ids are the class labels.
    pub fn from_weight_matrix(weights: &LatentMatrix, bias: Option<Vec<f64>>) -> Result<Self> {
        let c = weights.n_rows();
        Self::new(
            weights.ids().to_vec(),
            weights.data().iter().map(|&v| v as f64).collect(),
            bias.unwrap_or_else(|| vec![0.0; c]),
            weights.dim(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn probabilities(&self, z: &[f32]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes.len())
            .map(|c| {
                self.weight_row(c)
                    .iter()
                    .zip(z)
                    .map(|(w, &x)| w * x as f64)
                    .sum::<f64>()
                    + self.bias[c]
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    /// Gradient of `log p_target` with respect to the latent, per row:
    /// `W_t - sum_c p_c W_c`.
    pub fn log_prob_gradients(&self, latents: &LatentMatrix, target: &str) -> Result<LatentMatrix> {
        self.check_dim(latents)?;
        let t = self
            .classes
            .iter()
            .position(|c| c == target)
            .ok_or_else(|| Error::UnknownTarget(target.to_owned()))?;
        let rows: Vec<f32> = latents
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .flat_map_iter(|z| {
                let p = self.probabilities(z);
                (0..self.dim).map(move |j| {
                    let expected: f64 = (0..p.len())
                        .map(|c| p[c] * self.weights[c * self.dim + j])
                        .sum();
                    (self.weights[t * self.dim + j] - expected) as f32
                })
            })
            .collect();
        LatentMatrix::new(latents.ids().to_vec(), rows, self.dim)
    }

    fn check_dim(&self, latents: &LatentMatrix) -> Result<()> {
        if latents.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: latents.dim(),
            });
        }
        Ok(())
    }
}

impl Scorer for LinearSoftmaxScorer {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn score(&self, latents: &LatentMatrix) -> Result<ProbTable> {
        self.check_dim(latents)?;
        let probs: Vec<f64> = latents
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .flat_map_iter(|z| self.probabilities(z))
            .collect();
        ProbTable::new(latents.ids().to_vec(), self.classes.clone(), probs)
    }
}

/// `z + alpha * direction` for every row; ids preserved.
pub fn apply_direction(
    latents: &LatentMatrix,
    direction: &[f64],
    alpha: f64,
) -> Result<LatentMatrix> {
    if direction.len() != latents.dim() {
        return Err(Error::DimMismatch {
            expected: latents.dim(),
            actual: direction.len(),
        });
    }
    let norm = l2_norm(direction);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "direction norm {norm} is not unit"
        )));
    }
    let data = latents
        .rows()
        .flat_map(|z| {
            z.iter()
                .zip(direction)
                .map(|(&x, c)| (x as f64 + alpha * c) as f32)
        })
        .collect();
    LatentMatrix::new(latents.ids().to_vec(), data, latents.dim())
}

/// Fraction of samples whose target probability strictly rises over the
/// baseline (the reconstruction's probabilities).
pub fn success_rate(baseline: &ProbTable, manipulated: &ProbTable, target: &str) -> Result<f64> {
    baseline.check_compatible(manipulated)?;
    let t = baseline.class_index(target)?;
    let n = baseline.n_rows();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "success rate over zero samples".into(),
        ));
    }
    let hits = (0..n)
        .filter(|&i| manipulated.row(i)[t] > baseline.row(i)[t])
        .count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub success_rate: f64,
}

/// Success rate at each alpha of the sweep.
pub fn sweep_success_rates(
    latents: &LatentMatrix,
    direction: &[f64],
    sweep: &AlphaSweep,
    scorer: &dyn Scorer,
    target: &str,
) -> Result<Vec<SweepPoint>> {
    let baseline = scorer.score(latents)?;
    sweep
        .values()
        .iter()
        .map(|&alpha| {
            let moved = apply_direction(latents, direction, alpha)?;
            let sr = success_rate(&baseline, &scorer.score(&moved)?, target)?;
            Ok(SweepPoint {
                alpha,
                success_rate: sr,
            })
        })
        .collect()
}

/// Highest-SR point; the smaller alpha wins ties.
pub fn best_alpha(points: &[SweepPoint]) -> Option<SweepPoint> {
    points.iter().copied().fold(None, |best, p| match best {
        Some(b) if b.success_rate >= p.success_rate => Some(b),
        _ => Some(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn latents(rows: &[Vec<f32>]) -> LatentMatrix {
        let ids = (0..rows.len()).map(|i| format!("t{i}")).collect();
        LatentMatrix::from_rows(ids, rows, rows[0].len()).unwrap()
    }

    fn labels(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn alpha_zero_is_identity() {
        let z = latents(&[vec![1.5, -2.0], vec![0.25, 3.0]]);
        assert_eq!(apply_direction(&z, &[0.6, 0.8], 0.0).unwrap(), z);
    }

    #[test]
    fn simple_step() {
        let z = latents(&[vec![1.0, 0.0]]);
        assert_eq!(
            apply_direction(&z, &[0.0, 1.0], 2.0).unwrap().row(0),
            &[1.0, 2.0]
        );
        assert!(matches!(
            apply_direction(&z, &[1.0], 1.0),
            Err(Error::DimMismatch { .. })
        ));
        assert!(apply_direction(&z, &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn sweep_parsing() {
        let s: AlphaSweep = "40,45,50,55,60".parse().unwrap();
        assert_eq!(s.values().len(), 5);
        let z = latents(&[vec![0.0; 4]]);
        let dir = [0.5, 0.5, 0.5, 0.5];
        let outs: Vec<_> = s
            .values()
            .iter()
            .map(|&a| apply_direction(&z, &dir, a).unwrap())
            .collect();
        assert_eq!(outs.len(), 5);
        assert!("40,40".parse::<AlphaSweep>().is_err());
        assert!("".parse::<AlphaSweep>().is_err());
    }

    #[test]
    fn uniform_when_parameters_vanish() {
        let s = LinearSoftmaxScorer::new(labels(3), vec![0.0; 6], vec![0.0; 3], 2).unwrap();
        let t = s
            .score(&latents(&[vec![3.0, -1.0], vec![0.0, 9.0]]))
            .unwrap();
        for i in 0..2 {
            for p in t.row(i) {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturation() {
        let s = LinearSoftmaxScorer::new(labels(2), vec![0.0; 2], vec![50.0, 0.0], 1).unwrap();
        let t = s.score(&latents(&[vec![1.0]])).unwrap();
        assert!(t.row(0)[0] > 0.999);
        let huge = LinearSoftmaxScorer::new(labels(2), vec![1e4, -1e4], vec![0.0, 0.0], 1).unwrap();
        let t = huge.score(&latents(&[vec![100.0]])).unwrap();
        assert!(t.row(0).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_exponentiation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (c, d) = (4, 5);
        let w: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let z = latents(&rows);
        let s = LinearSoftmaxScorer::new(labels(c), w.clone(), b.clone(), d).unwrap();
        let t = s.score(&z).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let e: Vec<f64> = (0..c)
                .map(|k| {
                    let mut l = b[k];
                    for j in 0..d {
                        l += w[k * d + j] * row[j] as f64;
                    }
                    l.exp()
                })
                .collect();
            let total: f64 = e.iter().sum();
            for (p, ek) in t.row(i).iter().zip(&e) {
                assert!((p - ek / total).abs() < 1e-9);
            }
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn success_rate_contract() {
        let base = ProbTable::new(
            vec!["a".into(), "b".into()],
            labels(2),
            vec![0.5, 0.5, 0.2, 0.8],
        )
        .unwrap();
        assert_eq!(success_rate(&base, &base, "k0").unwrap(), 0.0);
        let up = ProbTable::new(
            vec!["a".into(), "b".into()],
            labels(2),
            vec![0.6, 0.4, 0.2, 0.8],
        )
        .unwrap();
        assert_eq!(success_rate(&base, &up, "k0").unwrap(), 0.5);
        assert!(matches!(
            success_rate(&base, &up, "zz"),
            Err(Error::UnknownTarget(_))
        ));
        let other = ProbTable::new(
            vec!["a".into(), "c".into()],
            labels(2),
            vec![0.6, 0.4, 0.2, 0.8],
        )
        .unwrap();
        assert!(matches!(
            success_rate(&base, &other, "k0"),
            Err(Error::IdMismatch)
        ));
    }

    #[test]
    fn success_rate_ignores_non_target_order() {
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let base =
            ProbTable::new(ids.clone(), labels(3), vec![0.2, 0.3, 0.5, 0.4, 0.4, 0.2]).unwrap();
        let moved =
            ProbTable::new(ids.clone(), labels(3), vec![0.3, 0.5, 0.2, 0.1, 0.1, 0.8]).unwrap();
        let relabel = vec!["k0".to_string(), "k2".to_string(), "k1".to_string()];
        let base2 = ProbTable::new(
            ids.clone(),
            relabel.clone(),
            vec![0.2, 0.5, 0.3, 0.4, 0.2, 0.4],
        )
        .unwrap();
        let moved2 = ProbTable::new(ids, relabel, vec![0.3, 0.2, 0.5, 0.1, 0.8, 0.1]).unwrap();
        assert_eq!(
            success_rate(&base, &moved, "k0").unwrap(),
            success_rate(&base2, &moved2, "k0").unwrap()
        );
    }

    #[test]
    fn best_alpha_prefers_smaller_on_ties() {
        let pts = [
            SweepPoint {
                alpha: 1.0,
                success_rate: 0.5,
            },
            SweepPoint {
                alpha: 2.0,
                success_rate: 0.7,
            },
            SweepPoint {
                alpha: 3.0,
                success_rate: 0.7,
            },
        ];
        assert_eq!(best_alpha(&pts).unwrap().alpha, 2.0);
        assert!(best_alpha(&[]).is_none());
    }

    #[test]
    fn prob_table_validation() {
        assert!(ProbTable::new(vec!["a".into()], labels(2), vec![0.5, 0.6]).is_err());
        assert!(ProbTable::new(vec!["a".into()], labels(2), vec![1.5, -0.5]).is_err());
        assert!(ProbTable::new(
            vec!["a".into()],
            vec!["x".into(), "x".into()],
            vec![0.5, 0.5]
        )
        .is_err());
    }

    proptest! {
        // Dyadic inputs keep every sum exact in f32.
        #[test]
        fn strengths_compose(
            z in prop::collection::vec(-64i32..64, 4),
            a1 in -32i32..32,
            a2 in -32i32..32,
            axis in 0usize..5,
        ) {
            let row: Vec<f32> = z.iter().map(|&v| v as f32 / 8.0).collect();
            let m = latents(&[row]);
            let dir: Vec<f64> = if axis == 4 { vec![0.5; 4] } else { (0..4).map(|j| (j == axis) as i32 as f64).collect() };
            let (a1, a2) = (a1 as f64 / 4.0, a2 as f64 / 4.0);
            let once = apply_direction(&m, &dir, a1 + a2).unwrap();
            let twice = apply_direction(&apply_direction(&m, &dir, a1).unwrap(), &dir, a2).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn success_rate_in_unit_interval(p in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20)) {
            let ids: Vec<String> = (0..p.len()).map(|i| format!("s{i}")).collect();
            let base = ProbTable::new(ids.clone(), labels(2), p.iter().flat_map(|(a, _)| [*a, 1.0 - a]).collect()).unwrap();
            let moved = ProbTable::new(ids, labels(2), p.iter().flat_map(|(_, b)| [*b, 1.0 - b]).collect()).unwrap();
            let sr = success_rate(&base, &moved, "k0").unwrap();
            prop_assert!((0.0..=1.0).contains(&sr));
        }
    }
}

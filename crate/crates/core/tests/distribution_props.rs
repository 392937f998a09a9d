use latent_concepts::distribution_metrics::{frechet_distance, gaussian_stats, GaussianStats};
use latent_concepts::tensor_io::LatentMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn stats(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> GaussianStats {
    let d = mu.len();
    let row_major: Vec<f64> = (0..d * d).map(|i| sigma[(i / d, i % d)]).collect();
    GaussianStats::new(mu.as_slice().to_vec(), row_major, 50).unwrap()
}

fn random_case(seed: u64, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
    (mu, (&sigma + sigma.transpose()) * 0.5)
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
fn rotation(seed: u64, d: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng))
        .qr()
        .q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_in_its_arguments(s1 in 0u64..10_000, s2 in 0u64..10_000, d in 1usize..6) {
        let (m1, c1) = random_case(s1, d);
        let (m2, c2) = random_case(s2 ^ 0xABCD, d);
        let (a, b) = (stats(&m1, &c1), stats(&m2, &c2));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn invariant_under_rotation_and_shift(s in 0u64..10_000, d in 1usize..6, shift in -5.0f64..5.0) {
        let (m1, c1) = random_case(s, d);
        let (m2, c2) = random_case(s + 1, d);
        let base = frechet_distance(&stats(&m1, &c1), &stats(&m2, &c2)).unwrap();
        let q = rotation(s + 2, d);
        let t = DVector::from_element(d, shift);
        let moved = |m: &DVector<f64>, c: &DMatrix<f64>| {
            let c = &q * c * q.transpose();
            stats(&(&q * m + &t), &((&c + c.transpose()) * 0.5))
        };
        let rotated = frechet_distance(&moved(&m1, &c1), &moved(&m2, &c2)).unwrap();
        prop_assert!((base - rotated).abs() <= 1e-7 * (1.0 + base), "{base} vs {rotated}");
    }

    #[test]
    fn diagonal_closed_form(
        m1 in prop::collection::vec(-3.0f64..3.0, 3),
        m2 in prop::collection::vec(-3.0f64..3.0, 3),
        s1 in prop::collection::vec(0.05f64..3.0, 3),
        s2 in prop::collection::vec(0.05f64..3.0, 3),
    ) {
        let diag = |s: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(3, s.iter().map(|v| v * v)));
        let a = stats(&DVector::from_vec(m1.clone()), &diag(&s1));
        let b = stats(&DVector::from_vec(m2.clone()), &diag(&s2));
        let closed: f64 = (0..3).map(|i| (m1[i] - m2[i]).powi(2) + (s1[i] - s2[i]).powi(2)).sum();
        prop_assert!((frechet_distance(&a, &b).unwrap() - closed).abs() <= 1e-8);
    }
}

#[test]
fn sample_stats_of_shifted_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f32>> = (0..400)
        .map(|_| {
            (0..3)
                .map(|_| StandardNormal.sample(&mut rng))
                .map(|v: f64| v as f32)
                .collect()
        })
        .collect();
    let shifted: Vec<Vec<f32>> = rows
        .iter()
        .map(|r| r.iter().map(|v| v + 2.0).collect())
        .collect();
    let ids = |p: &str| (0..400).map(|i| format!("{p}{i}")).collect();
    let a = gaussian_stats(&LatentMatrix::from_rows(ids("a"), &rows, 3).unwrap()).unwrap();
    let b = gaussian_stats(&LatentMatrix::from_rows(ids("b"), &shifted, 3).unwrap()).unwrap();
    // same covariance up to f32 rounding, so only the mean term survives
    let fd = frechet_distance(&a, &b).unwrap();
    assert!((fd - 12.0).abs() < 1e-4, "{fd}");
}

#![allow(dead_code)]

use latent_concepts::latent_diff::UnitMatrix;
use latent_concepts::report::{
    AblationRecord, ConceptRecord, EvalReport, Quantity, SweepRecord, TcavRecord, Unit,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn golden(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `n` random unit rows in `d` dimensions.
pub fn random_units(rng: &mut ChaCha8Rng, n: usize, d: usize) -> UnitMatrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    UnitMatrix::from_unit_rows(ids, data, d).unwrap()
}

/// Labels covering every cluster in `0..k`, otherwise uniform.
pub fn surjective_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    labels
}

fn external(name: &str, index: usize, sr: f64, lpips: f64, fid: f64, tcav: f64) -> ConceptRecord {
    let mut c = ConceptRecord::new("reference", index, name);
    c.success_rate = Some(Quantity::probability(sr / 100.0));
    c.lpips = Some(Quantity::new(lpips, Unit::Distance));
    c.fid = Some(Quantity::distance(fid));
    c.tcav = Some(TcavRecord {
        mean: Quantity::fraction(tcav),
        std: None,
        runs: None,
    });
    c
}

fn ablation_rows(class: &str, selected: usize, rows: [[f64; 4]; 6]) -> Vec<AblationRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let k = 4 + i;
            AblationRecord::new(
                class,
                k,
                k == selected,
                None,
                r[0],
                r[1],
                r[2] / 100.0,
                r[3] / 100.0,
            )
        })
        .collect()
}

/// The quantitative concept table and three classes of the K ablation, as
/// external reference values.
pub fn reference_report() -> EvalReport {
    let mut r = EvalReport {
        concepts: vec![
            external("Purplish Core Pigmentation", 0, 70.5, 0.12, 30.5, 0.97),
            external(
                "Reddish Core with Blue-Gray Dots",
                1,
                83.6,
                0.17,
                43.1,
                0.82,
            ),
            external(
                "Blotchy Pigmentation with Irregular Texture",
                2,
                81.1,
                0.20,
                47.0,
                0.92,
            ),
            external(
                "Central Pinkish Veil with Asymmetric Intensified Pigmentation",
                3,
                85.4,
                0.15,
                47.1,
                1.00,
            ),
            external("Central Purplish Veil", 4, 84.6, 0.15, 53.5, 1.00),
            external(
                "White Structures with Irregular Vessels",
                5,
                70.5,
                0.18,
                51.2,
                0.64,
            ),
        ],
        ..EvalReport::default()
    };
    r.ablation.extend(ablation_rows(
        "Melanoma",
        8,
        [
            [0.69, 0.72, 16.7, 13.7],
            [0.72, 0.75, 19.1, 15.8],
            [0.73, 0.76, 20.7, 17.3],
            [0.74, 0.77, 21.1, 15.6],
            [0.68, 0.78, 21.8, 16.2],
            [0.69, 0.79, 22.3, 17.3],
        ],
    ));
    // inserted out of order on purpose: the emitter sorts by K within a class
    let mut df = ablation_rows(
        "Dermatofibroma",
        7,
        [
            [0.62, 0.53, 10.0, 5.34],
            [0.70, 0.55, 11.2, 6.31],
            [0.72, 0.57, 11.7, 7.75],
            [0.57, 0.57, 11.7, 4.62],
            [0.59, 0.60, 12.2, 5.44],
            [0.61, 0.60, 13.2, 5.60],
        ],
    );
    df.reverse();
    r.ablation.extend(df);
    r.ablation.extend(ablation_rows(
        "Squamous Cell Carcinoma",
        5,
        [
            [0.43, 0.40, 3.55, 2.09],
            [0.39, 0.41, 3.96, 2.50],
            [0.46, 0.47, 4.98, 3.22],
            [0.42, 0.48, 5.58, 2.62],
            [0.43, 0.49, 5.88, 2.94],
            [0.37, 0.45, 5.17, 2.70],
        ],
    ));
    r
}

/// One concept with its alpha sweep.
pub fn sweep_report() -> EvalReport {
    let mut r = EvalReport::default();
    let mut c = ConceptRecord::new("Melanoma", 0, "Purplish Core Pigmentation");
    c.success_rate = Some(Quantity::probability(0.705));
    c.lpips = Some(Quantity::new(0.12, Unit::Distance));
    c.fid = Some(Quantity::distance(30.5));
    c.tcav = Some(TcavRecord {
        mean: Quantity::fraction(0.97),
        std: Some(Quantity::fraction(0.02)),
        runs: Some(10),
    });
    r.concepts.push(c);
    let rows = [
        (60.0, 63.45, 0.150, 49.77),
        (40.0, 70.54, 0.123, 30.51),
        (45.0, 69.86, 0.130, 35.56),
        (55.0, 66.23, 0.143, 45.08),
        (50.0, 68.34, 0.136, 40.42),
    ];
    for (alpha, sr, lpips, fid) in rows {
        r.alpha_sweep.push(SweepRecord {
            class_label: "Melanoma".into(),
            index: 0,
            alpha: Quantity::latent(alpha),
            success_rate: Quantity::probability(sr / 100.0),
            lpips: Some(Quantity::new(lpips, Unit::Distance)),
            fid: Some(Quantity::distance(fid)),
            chosen: alpha == 40.0,
        });
    }
    r
}

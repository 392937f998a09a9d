//! End-to-end orchestration: differences → unit sphere → clustering →
//! directions → traversal sweep → scoring → metrics → report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concept_metrics::{self, DEFAULT_DELTA, DEFAULT_Q};
use crate::distribution_metrics::{frechet_distance, gaussian_stats};
use crate::error::{Error, Result};
use crate::latent_diff::{difference_vectors, unit_normalize, UnitMatrix, DEFAULT_EPSILON_NORM};
use crate::report::{
    AblationRecord, ClassProvenance, ConceptRecord, EvalReport, Quantity, SweepRecord, TcavRecord,
    Unit,
};
use crate::sphere_cluster::{
    extract_directions, select_k, spherical_kmeans, ClusterModel, DirectionSet, KMeansConfig,
};
use crate::tcav::{tcav_runs, TcavConfig, DEFAULT_L2_REG, DEFAULT_RUNS};
use crate::tensor_io::{self, DirLock, LatentMatrix};
use crate::traversal::{
    apply_direction, success_rate, AlphaSweep, LinearSoftmaxScorer, ProbTable, Scorer, SweepPoint,
};

pub const DEFAULT_K_RANGE: [usize; 2] = [2, 12];
pub const ABLATION_K_RANGE: [usize; 2] = [4, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub factual: PathBuf,
    pub counterfactual: PathBuf,
    pub manifest: PathBuf,
    pub test_latents: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Built-in `softmax(W z + b)`; `weights` is a latent file whose row ids
    /// are the class labels.
    Linear {
        weights: PathBuf,
        #[serde(default)]
        bias: Option<Vec<f64>>,
    },
    /// Probabilities computed elsewhere, laid out as
    /// `<dir>/<class>/baseline.tsv` and `<dir>/<class>/k<K>/probs/c<i>_a<alpha>.tsv`,
    /// the layout a previous run writes into its output directory.
    Tables { dir: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSettings {
    /// Inclusive silhouette search range; defaults to 2..=12.
    #[serde(default)]
    pub k_range: Option<[usize; 2]>,
    /// Fixed K per class, bypassing the silhouette search.
    #[serde(default)]
    pub per_class: BTreeMap<String, usize>,
    /// Inclusive K range for the ablation table.
    #[serde(default)]
    pub ablation_range: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcavSettings {
    #[serde(default = "default_tcav_runs")]
    pub runs: usize,
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
}

fn default_tcav_runs() -> usize {
    DEFAULT_RUNS
}

fn default_l2() -> f64 {
    DEFAULT_L2_REG
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Fréchet distance between test latents and their traversed copies.
    #[serde(default)]
    pub latent_fid: bool,
    /// TCAV on latents with the linear scorer's log-probability gradients.
    #[serde(default)]
    pub tcav: Option<TcavSettings>,
}

/// Values measured outside the toolkit, merged into the concept table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConcept {
    pub class: String,
    pub index: usize,
    #[serde(default)]
    pub name: Option<String>,
    /// Probability in [0, 1].
    #[serde(default)]
    pub success_rate: Option<f64>,
    #[serde(default)]
    pub lpips: Option<f64>,
    #[serde(default)]
    pub fid: Option<f64>,
    #[serde(default)]
    pub tcav_mean: Option<f64>,
    #[serde(default)]
    pub tcav_std: Option<f64>,
}

fn default_restarts() -> usize {
    10
}
fn default_max_iter() -> usize {
    300
}
fn default_tol() -> f64 {
    1e-9
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_NORM
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_q() -> f64 {
    DEFAULT_Q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub scorer: ScorerConfig,
    pub alphas: AlphaSweep,
    #[serde(default)]
    pub clusters: ClusterSettings,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_norm: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub external: Vec<ExternalConcept>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&tensor_io::read_text(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Config("q must lie in (0, 1]".into()));
        }
        if !(self.epsilon_norm > 0.0) {
            return Err(Error::Config("epsilon_norm must be positive".into()));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Config(
                "restarts and max_iter must be at least 1".into(),
            ));
        }
        for range in [self.clusters.k_range, self.clusters.ablation_range]
            .into_iter()
            .flatten()
        {
            if range[0] < 2 || range[0] > range[1] {
                return Err(Error::Config(format!("invalid K range {range:?}")));
            }
        }
        if self.clusters.per_class.values().any(|&k| k == 0) {
            return Err(Error::Config("per-class K must be at least 1".into()));
        }
        if self.out_dir.is_none() {
            return Err(Error::Config("out_dir is not set".into()));
        }
        let mut paths = vec![
            &self.inputs.factual,
            &self.inputs.counterfactual,
            &self.inputs.manifest,
            &self.inputs.test_latents,
        ];
        match &self.scorer {
            ScorerConfig::Linear { weights, .. } => paths.push(weights),
            ScorerConfig::Tables { dir } => paths.push(dir),
        }
        for p in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(Error::Config(format!(
                    "input {} does not exist",
                    full.display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON, without the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            seed: self.seed.unwrap_or(0),
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Where the probabilities for a traversal come from.
pub enum ScoreSource {
    Linear(LinearSoftmaxScorer),
    Tables(PathBuf),
}

impl ScoreSource {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match &cfg.scorer {
            ScorerConfig::Linear { weights, bias } => {
                let w = tensor_io::read_latent_matrix(cfg.resolve(weights))?;
                Ok(Self::Linear(LinearSoftmaxScorer::from_weight_matrix(
                    &w,
                    bias.clone(),
                )?))
            }
            ScorerConfig::Tables { dir } => Ok(Self::Tables(cfg.resolve(dir))),
        }
    }

    pub fn baseline(&self, class: &str, latents: &LatentMatrix) -> Result<ProbTable> {
        match self {
            Self::Linear(s) => s.score(latents),
            Self::Tables(dir) => {
                tensor_io::read_prob_table(dir.join(path_label(class)).join("baseline.tsv"))
            }
        }
    }

    pub fn manipulated(
        &self,
        class: &str,
        k: usize,
        concept: usize,
        alpha: f64,
        moved: &LatentMatrix,
    ) -> Result<ProbTable> {
        match self {
            Self::Linear(s) => s.score(moved),
            Self::Tables(dir) => tensor_io::read_prob_table(
                dir.join(path_label(class))
                    .join(format!("k{k}"))
                    .join("probs")
                    .join(format!("{}.tsv", concept_stem(concept, alpha))),
            ),
        }
    }

    fn linear(&self) -> Option<&LinearSoftmaxScorer> {
        match self {
            Self::Linear(s) => Some(s),
            Self::Tables(_) => None,
        }
    }
}

/// Class label made safe for use as a path component.
pub fn path_label(class: &str) -> String {
    class
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn concept_stem(concept: usize, alpha: f64) -> String {
    format!("c{concept}_a{alpha}")
}

/// Per-concept traversal outcome for one direction set.
#[derive(Debug, Clone)]
pub struct ConceptSweep {
    pub index: usize,
    pub points: Vec<SweepPoint>,
    pub best: SweepPoint,
    pub best_latents: LatentMatrix,
    pub best_probs: ProbTable,
}

/// Sweeps every direction over `alphas`, keeping the highest-SR alpha per
/// concept. Artifacts land under `out` when given.
pub fn sweep_directions(
    directions: &DirectionSet,
    test: &LatentMatrix,
    baseline: &ProbTable,
    alphas: &AlphaSweep,
    scores: &ScoreSource,
    out: Option<&Path>,
) -> Result<Vec<ConceptSweep>> {
    let class = directions.class_label();
    if let Some(dir) = out {
        tensor_io::create_dir_all(&dir.join("latents"))?;
        tensor_io::create_dir_all(&dir.join("probs"))?;
    }
    (0..directions.k())
        .map(|i| {
            let mut points = Vec::new();
            let mut best: Option<(SweepPoint, LatentMatrix, ProbTable)> = None;
            for &alpha in alphas.values() {
                let moved = apply_direction(test, directions.direction(i), alpha)?;
                let probs = scores.manipulated(class, directions.k(), i, alpha, &moved)?;
                if let Some(dir) = out {
                    let stem = concept_stem(i, alpha);
                    tensor_io::write_latent_matrix(
                        &moved,
                        dir.join("latents").join(format!("{stem}.cdlc")),
                    )?;
                    tensor_io::write_prob_table(
                        &probs,
                        dir.join("probs").join(format!("{stem}.tsv")),
                    )?;
                }
                let point = SweepPoint {
                    alpha,
                    success_rate: success_rate(baseline, &probs, class)?,
                };
                points.push(point);
                // alphas ascend, so strict improvement keeps the smaller alpha on ties
                if best
                    .as_ref()
                    .is_none_or(|b| point.success_rate > b.0.success_rate)
                {
                    best = Some((point, moved, probs));
                }
            }
            let (best, best_latents, best_probs) = best.expect("alpha sweep is non-empty");
            Ok(ConceptSweep {
                index: i,
                points,
                best,
                best_latents,
                best_probs,
            })
        })
        .collect()
}

/// Ablation metrics for one direction set from its per-concept best traversals.
pub fn ablation_record(
    directions: &DirectionSet,
    sweeps: &[ConceptSweep],
    baseline: &ProbTable,
    delta: f64,
    q: f64,
    selected: bool,
) -> Result<AblationRecord> {
    let tables: Vec<ProbTable> = sweeps.iter().map(|s| s.best_probs.clone()).collect();
    let effects = concept_metrics::effect_table(baseline, &tables, directions.class_label())?;
    let redundancy = if directions.k() >= 2 {
        concept_metrics::redundancy(directions)?
    } else {
        f64::NAN
    };
    Ok(AblationRecord::new(
        directions.class_label(),
        directions.k(),
        selected,
        directions.provenance().silhouette,
        redundancy,
        concept_metrics::coverage(&effects, delta)?,
        concept_metrics::best_of_k(&effects),
        concept_metrics::top_q_mean(&effects, q)?,
    ))
}

fn write_model(model: &ClusterModel, points: &UnitMatrix, dir: &Path) -> Result<()> {
    tensor_io::create_dir_all(dir)?;
    tensor_io::write_json(model, &dir.join("model.json"))?;
    let mut s = String::new();
    for (id, a) in points.ids().iter().zip(&model.assignments) {
        s.push_str(&format!("{id}\t{a}\n"));
    }
    tensor_io::write_text(&dir.join("assignments.tsv"), &s)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

pub fn run_pipeline(config: &PipelineConfig, opts: &RunOptions) -> Result<EvalReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(config))
}

fn run_stages(cfg: &PipelineConfig) -> Result<EvalReport> {
    let out_dir = cfg.resolve(cfg.out_dir.as_deref().expect("validated"));
    let _lock = DirLock::acquire(&out_dir)?;

    let load =
        |p: &Path| tensor_io::read_latent_matrix(cfg.resolve(p)).map_err(|e| e.at_stage("load"));
    let factual = load(&cfg.inputs.factual)?;
    let counterfactual = load(&cfg.inputs.counterfactual)?;
    let test = load(&cfg.inputs.test_latents)?;
    let manifest_path = cfg.resolve(&cfg.inputs.manifest);
    let manifest = tensor_io::load_pair_manifest(&manifest_path).map_err(|e| e.at_stage("load"))?;
    if manifest.is_empty() {
        return Err(Error::Malformed {
            line: 0,
            message: format!("manifest {} has no pairs", manifest_path.display()),
        }
        .at_stage("diff"));
    }
    manifest
        .validate_against(&factual, &counterfactual)
        .map_err(|e| e.at_stage("diff"))?;
    let scores = ScoreSource::from_config(cfg).map_err(|e| e.at_stage("score"))?;

    let kmeans = cfg.kmeans();
    let mut report = EvalReport::default();
    let prov = &mut report.provenance;
    prov.config_hash = Some(cfg.hash());
    prov.seed = Some(kmeans.seed);
    prov.restarts = Some(cfg.restarts);
    prov.max_iter = Some(cfg.max_iter);
    prov.tol = Some(cfg.tol);
    prov.epsilon_norm = Some(cfg.epsilon_norm);
    prov.delta = Some(cfg.delta);
    prov.q = Some(cfg.q);
    prov.alphas = cfg.alphas.values().to_vec();
    prov.per_class_k = cfg.clusters.per_class.clone();

    for class in manifest.target_classes() {
        let class_dir = out_dir.join(path_label(&class));
        tensor_io::create_dir_all(&class_dir)?;
        let pairs = manifest.for_target(&class);

        let diffs = difference_vectors(&factual, &counterfactual, &pairs)
            .map_err(|e| e.at_stage("diff"))?;
        tensor_io::write_latent_matrix(&diffs, class_dir.join("diffs.cdlc"))?;

        let normalized =
            unit_normalize(&diffs, cfg.epsilon_norm).map_err(|e| e.at_stage("normalize"))?;
        let stored = normalized.units.to_latent_matrix()?;
        tensor_io::write_latent_matrix(&stored, class_dir.join("units.cdlc"))?;
        let units = UnitMatrix::from_stored(&stored)?;
        tensor_io::write_text(
            &class_dir.join("skipped.txt"),
            &normalized.skipped.join("\n"),
        )?;

        let n = units.n_rows();
        let (k_used, k_source, mut models) = match cfg.clusters.per_class.get(&class) {
            Some(&k) => {
                let model =
                    spherical_kmeans(&units, k, &kmeans).map_err(|e| e.at_stage("cluster"))?;
                (k, "fixed", BTreeMap::from([(k, model)]))
            }
            None => {
                let [lo, hi] = cfg.clusters.k_range.unwrap_or(DEFAULT_K_RANGE);
                let hi = hi.min(n.saturating_sub(1));
                let sel = select_k(&units, lo, hi, &kmeans).map_err(|e| e.at_stage("select-k"))?;
                let silhouettes: BTreeMap<usize, Option<f64>> =
                    sel.models.iter().map(|(k, m)| (*k, m.silhouette)).collect();
                tensor_io::write_json(&silhouettes, &class_dir.join("select_k.json"))?;
                (sel.k_star, "silhouette", sel.models)
            }
        };

        let baseline = scores
            .baseline(&class, &test)
            .map_err(|e| e.at_stage("score"))?;
        tensor_io::write_prob_table(&baseline, class_dir.join("baseline.tsv"))?;

        let mut ks: Vec<usize> = match cfg.clusters.ablation_range {
            Some([lo, hi]) => (lo..=hi.min(n.saturating_sub(1))).collect(),
            None => Vec::new(),
        };
        if !ks.contains(&k_used) {
            ks.push(k_used);
            ks.sort_unstable();
        }

        for k in ks {
            let model = match models.remove(&k) {
                Some(m) => m,
                None => spherical_kmeans(&units, k, &kmeans).map_err(|e| e.at_stage("ablate"))?,
            };
            let k_dir = class_dir.join(format!("k{k}"));
            write_model(&model, &units, &k_dir)?;
            let dir_path = k_dir.join("directions.cdlc");
            tensor_io::write_direction_set(&extract_directions(&model, &class)?, &dir_path)?;
            // traverse with the stored directions so standalone `apply` runs match
            let directions = tensor_io::read_direction_set(&dir_path)?;
            let sweeps = sweep_directions(
                &directions,
                &test,
                &baseline,
                &cfg.alphas,
                &scores,
                Some(&k_dir),
            )
            .map_err(|e| e.at_stage("apply"))?;
            let selected = k == k_used;
            report.ablation.push(
                ablation_record(&directions, &sweeps, &baseline, cfg.delta, cfg.q, selected)
                    .map_err(|e| e.at_stage("metrics"))?,
            );
            if !selected {
                continue;
            }

            report.provenance.classes.push(ClassProvenance {
                class_label: class.clone(),
                n_pairs: pairs.len(),
                dropped_ids: normalized.skipped.clone(),
                k,
                k_source: k_source.into(),
                silhouette: model.silhouette,
                objective: model.objective,
            });
            for sweep in &sweeps {
                for p in &sweep.points {
                    report.alpha_sweep.push(SweepRecord {
                        class_label: class.clone(),
                        index: sweep.index,
                        alpha: Quantity::latent(p.alpha),
                        success_rate: Quantity::probability(p.success_rate),
                        lpips: None,
                        fid: None,
                        chosen: p.alpha == sweep.best.alpha,
                    });
                }
                let mut record =
                    ConceptRecord::new(&class, sweep.index, format!("{class} c{}", sweep.index));
                record.alpha = Some(Quantity::latent(sweep.best.alpha));
                record.success_rate = Some(Quantity::probability(sweep.best.success_rate));
                if cfg.evaluation.latent_fid {
                    let fid = frechet_distance(
                        &gaussian_stats(&test)?,
                        &gaussian_stats(&sweep.best_latents)?,
                    )
                    .map_err(|e| e.at_stage("evaluate"))?;
                    record.fid = Some(Quantity::distance(fid));
                }
                if let (Some(t), Some(linear)) = (&cfg.evaluation.tcav, scores.linear()) {
                    let grads = linear.log_prob_gradients(&test, &class)?;
                    let tcfg = TcavConfig {
                        runs: t.runs,
                        seed: kmeans.seed,
                        l2_reg: t.l2_reg,
                        subset_size: Some((test.n_rows() / 2).max(1)),
                    };
                    let summary = tcav_runs(&sweep.best_latents, &test, &grads, &tcfg)
                        .map_err(|e| e.at_stage("evaluate"))?;
                    report.provenance.tcav_runs = Some(t.runs);
                    report.provenance.tcav_subset_size = Some(summary.subset_size);
                    record.tcav = Some(TcavRecord {
                        mean: Quantity::fraction(summary.mean),
                        std: Some(Quantity::fraction(summary.std)),
                        runs: Some(t.runs),
                    });
                }
                report.concepts.push(record);
            }
        }
    }
    merge_external(&mut report, &cfg.external);
    crate::report::write_report(&report, &out_dir)?;
    Ok(report)
}

/// Externally measured values override computed ones for the same concept.
pub fn merge_external(report: &mut EvalReport, external: &[ExternalConcept]) {
    for ext in external {
        let pos = report
            .concepts
            .iter()
            .position(|c| c.class_label == ext.class && c.index == ext.index);
        let record = match pos {
            Some(p) => &mut report.concepts[p],
            None => {
                report.concepts.push(ConceptRecord::new(
                    &ext.class,
                    ext.index,
                    format!("{} c{}", ext.class, ext.index),
                ));
                report.concepts.last_mut().expect("just pushed")
            }
        };
        if let Some(name) = &ext.name {
            record.name = name.clone();
        }
        if let Some(v) = ext.success_rate {
            record.success_rate = Some(Quantity::probability(v));
        }
        if let Some(v) = ext.lpips {
            record.lpips = Some(Quantity::new(v, Unit::Distance));
        }
        if let Some(v) = ext.fid {
            record.fid = Some(Quantity::distance(v));
        }
        if let Some(mean) = ext.tcav_mean {
            record.tcav = Some(TcavRecord {
                mean: Quantity::fraction(mean),
                std: ext.tcav_std.map(Quantity::fraction),
                runs: None,
            });
        }
    }
}

/// Writes a planted fixture and a ready-to-run config into `dir`; returns the config path.
pub fn write_fixture(
    fixture: &crate::synth_oracle::PipelineFixture,
    dir: &Path,
) -> Result<PathBuf> {
    tensor_io::create_dir_all(dir)?;
    tensor_io::write_latent_matrix(&fixture.factual, dir.join("factual.cdlc"))?;
    tensor_io::write_latent_matrix(&fixture.counterfactual, dir.join("counterfactual.cdlc"))?;
    tensor_io::write_pair_manifest(&fixture.manifest, dir.join("pairs.tsv"))?;
    tensor_io::write_latent_matrix(&fixture.test_latents, dir.join("test.cdlc"))?;
    tensor_io::write_latent_matrix(&fixture.weights, dir.join("weights.cdlc"))?;
    for truth in &fixture.truth {
        tensor_io::write_direction_set(
            truth,
            dir.join(format!("truth_{}.cdlc", path_label(truth.class_label()))),
        )?;
    }
    let cfg = PipelineConfig {
        inputs: InputPaths {
            factual: "factual.cdlc".into(),
            counterfactual: "counterfactual.cdlc".into(),
            manifest: "pairs.tsv".into(),
            test_latents: "test.cdlc".into(),
        },
        scorer: ScorerConfig::Linear {
            weights: "weights.cdlc".into(),
            bias: None,
        },
        alphas: AlphaSweep::new(vec![0.5, 1.0, 2.0])?,
        clusters: ClusterSettings {
            k_range: Some([2, 6]),
            per_class: BTreeMap::new(),
            ablation_range: Some([2, 5]),
        },
        seed: Some(7),
        restarts: 10,
        max_iter: 300,
        tol: 1e-9,
        epsilon_norm: DEFAULT_EPSILON_NORM,
        delta: DEFAULT_DELTA,
        q: DEFAULT_Q,
        out_dir: Some("out".into()),
        evaluation: EvaluationSettings {
            latent_fid: true,
            tcav: Some(TcavSettings {
                runs: 5,
                l2_reg: DEFAULT_L2_REG,
            }),
        },
        external: Vec::new(),
        base_dir: PathBuf::new(),
    };
    let path = dir.join("config.toml");
    tensor_io::write_text(&path, &cfg.to_toml()?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
alphas = [40.0, 45.0, 50.0, 55.0, 60.0]
out_dir = "out"

[inputs]
factual = "f.cdlc"
counterfactual = "cf.cdlc"
manifest = "pairs.tsv"
test_latents = "test.cdlc"

[scorer]
kind = "linear"
weights = "w.cdlc"
"#;

    #[test]
    fn defaults_applied() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.delta, 0.05);
        assert_eq!(cfg.q, 0.3);
        assert_eq!(cfg.restarts, 10);
        assert_eq!(cfg.max_iter, 300);
        assert_eq!(cfg.tol, 1e-9);
        assert_eq!(cfg.seed, None);
        assert_eq!(cfg.alphas.values().len(), 5);
    }

    #[test]
    fn per_class_k_table() {
        let text = format!(
            "{MINIMAL}\n[clusters.per_class]\nMelanoma = 8\nNevus = 5\nBCC = 6\nBKL = 7\nAK = 6\nDF = 7\nVASC = 6\nSCC = 5\n"
        );
        let cfg = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.clusters.per_class.len(), 8);
        assert_eq!(cfg.clusters.per_class["Melanoma"], 8);
    }

    #[test]
    fn rejects_bad_values() {
        let bad_q = MINIMAL.replace("out_dir", "q = 1.5\nout_dir");
        let cfg = PipelineConfig::from_toml(&bad_q).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let bad_alpha = MINIMAL.replace("45.0", "40.0");
        assert!(PipelineConfig::from_toml(&bad_alpha).is_err());
        assert!(PipelineConfig::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.class().exit_code(), 2);
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = PipelineConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.delta = 0.1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(
            PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn path_labels() {
        assert_eq!(path_label("Basal Cell/Carcinoma"), "Basal_Cell_Carcinoma");
        assert_eq!(concept_stem(2, 0.5), "c2_a0.5");
    }
}

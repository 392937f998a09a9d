use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use latent_concepts::concept_metrics::{self, DEFAULT_DELTA, DEFAULT_Q};
use latent_concepts::distribution_metrics::{frechet_distance, gaussian_stats};
use latent_concepts::latent_diff::{
    difference_vectors, unit_normalize, UnitMatrix, DEFAULT_EPSILON_NORM,
};
use latent_concepts::pipeline::{self, concept_stem, PipelineConfig, RunOptions, ABLATION_K_RANGE};
use latent_concepts::report::{self, ReportFormat};
use latent_concepts::sphere_cluster::{
    extract_directions, select_k, spherical_kmeans, ClusterModel, KMeansConfig,
};
use latent_concepts::synth_oracle::{self, FixtureSpec, PlantedSpec};
use latent_concepts::tcav::{tcav_runs, TcavConfig, DEFAULT_L2_REG, DEFAULT_RUNS};
use latent_concepts::tensor_io;
use latent_concepts::traversal::{
    apply_direction, success_rate, AlphaSweep, LinearSoftmaxScorer, Scorer,
};
use latent_concepts::Error;

const SEED_ENV: &str = "LATENT_CONCEPTS_SEED";

#[derive(Parser)]
#[command(
    name = "latent-concepts",
    version,
    about = "Concept directions from counterfactual latent pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Difference vectors z_cf - z_f for the pairs in a manifest
    Diff(DiffArgs),
    /// Project difference vectors onto the unit sphere
    Normalize(NormalizeArgs),
    /// Spherical k-means with a fixed K
    Cluster(ClusterArgs),
    /// Choose K by mean silhouette over a range
    SelectK(SelectKArgs),
    /// Move latents along each direction for every alpha
    Apply(ApplyArgs),
    /// Class probabilities from the built-in linear softmax scorer
    Score(ScoreArgs),
    /// Success rate, Fréchet distance, TCAV or concept-set metrics
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Full pipeline with an ablation over a K range
    Ablate(AblateArgs),
    /// Planted synthetic data
    Synth(SynthArgs),
    /// Full pipeline from a config file
    Run(RunArgs),
    /// Convert a text latent table to the binary format
    Import(ImportArgs),
    /// Re-emit a JSON report
    Report(ReportArgs),
}

#[derive(Args)]
struct KMeansArgs {
    /// Master seed; falls back to $LATENT_CONCEPTS_SEED, then 0
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

impl KMeansArgs {
    fn config(&self) -> KMeansConfig {
        KMeansConfig {
            seed: self.seed.unwrap_or(0),
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    factual: PathBuf,
    #[arg(long)]
    counterfactual: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Keep only pairs aimed at this class
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON_NORM)]
    epsilon: f64,
    /// Write ids of dropped near-zero rows here
    #[arg(long)]
    skipped: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Unit-norm rows, as written by `normalize`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "")]
    label: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    kmeans: KMeansArgs,
}

#[derive(Args)]
struct SelectKArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 12)]
    k_max: usize,
    #[arg(long, default_value = "")]
    label: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    kmeans: KMeansArgs,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    directions: PathBuf,
    #[arg(long)]
    latents: PathBuf,
    /// Comma-separated, strictly increasing
    #[arg(long)]
    alpha_list: AlphaSweep,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Weight rows whose ids are the class labels
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Fraction of samples whose target probability strictly increased
    Sr {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        manipulated: PathBuf,
        #[arg(long)]
        target: String,
    },
    /// Fréchet distance between Gaussians fitted to two feature sets
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
    },
    /// TCAV mean and std over repeated negative subsets
    Tcav {
        #[arg(long)]
        concept: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long)]
        grads: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_L2_REG)]
        l2_reg: f64,
        #[arg(long)]
        subset_size: Option<usize>,
    },
    /// Redundancy, coverage, best-of-K and top-q mean for one direction set
    Metrics {
        #[arg(long)]
        directions: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// One probability table per concept, in concept order
        #[arg(long, num_args = 1.., required = true)]
        manipulated: Vec<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_Q)]
        q: f64,
    },
}

#[derive(Args)]
struct PipelineOverrides {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config; $LATENT_CONCEPTS_SEED applies only when neither sets one
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to all cores
    #[arg(long)]
    threads: Option<usize>,
}

impl PipelineOverrides {
    /// Flags win over the config file; the environment seed only fills a gap.
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        } else if cfg.seed.is_none() {
            cfg.seed = env_seed()?;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(out) = &self.out_dir {
            cfg.out_dir = Some(absolute(out)?);
        }
        Ok(cfg)
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")).into()
        }),
        Err(_) => Ok(None),
    }
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: PipelineOverrides,
    #[arg(long, default_value_t = ABLATION_K_RANGE[0])]
    k_min: usize,
    #[arg(long, default_value_t = ABLATION_K_RANGE[1])]
    k_max: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    run: PipelineOverrides,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    k_true: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Unit-norm samples
    #[arg(long, required_unless_present = "fixture_dir")]
    out: Option<PathBuf>,
    /// Planted directions
    #[arg(long, requires = "out")]
    truth: Option<PathBuf>,
    /// Write a complete two-class pipeline fixture with config.toml instead
    #[arg(long, conflicts_with_all = ["out", "truth"])]
    fixture_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// Lines of `id<TAB>v1<TAB>v2...`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["json", "markdown"], default_value = "markdown")]
    format: String,
}

fn read_units(path: &Path) -> anyhow::Result<UnitMatrix> {
    Ok(UnitMatrix::from_stored(&tensor_io::read_latent_matrix(
        path,
    )?)?)
}

fn write_cluster_outputs(
    model: &ClusterModel,
    units: &UnitMatrix,
    label: &str,
    dir: &Path,
) -> anyhow::Result<()> {
    tensor_io::create_dir_all(dir)?;
    tensor_io::write_json(model, &dir.join("model.json"))?;
    let assignments: String = units
        .ids()
        .iter()
        .zip(&model.assignments)
        .map(|(id, a)| format!("{id}\t{a}\n"))
        .collect();
    tensor_io::write_text(&dir.join("assignments.tsv"), &assignments)?;
    let directions = extract_directions(model, label)?;
    tensor_io::write_direction_set(&directions, dir.join("directions.cdlc"))?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_config(cfg: &PipelineConfig, threads: Option<usize>) -> anyhow::Result<()> {
    let report = pipeline::run_pipeline(cfg, &RunOptions { threads })?;
    let out = cfg.resolve(cfg.out_dir.as_deref().expect("validated"));
    eprintln!(
        "{} concepts, {} ablation rows; report written to {}",
        report.concepts.len(),
        report.ablation.len(),
        out.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Diff(a) => {
            let factual = tensor_io::read_latent_matrix(&a.factual)?;
            let counterfactual = tensor_io::read_latent_matrix(&a.counterfactual)?;
            let mut manifest = tensor_io::load_pair_manifest(&a.manifest)?;
            if let Some(t) = &a.target {
                manifest = manifest.for_target(t);
            }
            if manifest.is_empty() {
                bail!(Error::Malformed {
                    line: 0,
                    message: format!("manifest {} has no matching pairs", a.manifest.display()),
                });
            }
            let diffs = difference_vectors(&factual, &counterfactual, &manifest)?;
            tensor_io::write_latent_matrix(&diffs, &a.out)?;
        }
        Command::Normalize(a) => {
            let diffs = tensor_io::read_latent_matrix(&a.input)?;
            let normalized = unit_normalize(&diffs, a.epsilon)?;
            tensor_io::write_latent_matrix(&normalized.units.to_latent_matrix()?, &a.out)?;
            if let Some(p) = &a.skipped {
                tensor_io::write_text(p, &normalized.skipped.join("\n"))?;
            }
            if !normalized.skipped.is_empty() {
                eprintln!("dropped {} near-zero rows", normalized.skipped.len());
            }
        }
        Command::Cluster(a) => {
            let units = read_units(&a.input)?;
            let model = spherical_kmeans(&units, a.k, &a.kmeans.config())?;
            write_cluster_outputs(&model, &units, &a.label, &a.out_dir)?;
        }
        Command::SelectK(a) => {
            let units = read_units(&a.input)?;
            let sel = select_k(&units, a.k_min, a.k_max, &a.kmeans.config())?;
            let silhouettes: std::collections::BTreeMap<usize, Option<f64>> =
                sel.models.iter().map(|(k, m)| (*k, m.silhouette)).collect();
            tensor_io::create_dir_all(&a.out_dir)?;
            tensor_io::write_json(&silhouettes, &a.out_dir.join("select_k.json"))?;
            write_cluster_outputs(sel.best(), &units, &a.label, &a.out_dir)?;
            println!("{}", sel.k_star);
        }
        Command::Apply(a) => {
            let directions = tensor_io::read_direction_set(&a.directions)?;
            let latents = tensor_io::read_latent_matrix(&a.latents)?;
            tensor_io::create_dir_all(&a.out_dir)?;
            for i in 0..directions.k() {
                for &alpha in a.alpha_list.values() {
                    let moved = apply_direction(&latents, directions.direction(i), alpha)?;
                    let path = a.out_dir.join(format!("{}.cdlc", concept_stem(i, alpha)));
                    tensor_io::write_latent_matrix(&moved, path)?;
                }
            }
        }
        Command::Score(a) => {
            let weights = tensor_io::read_latent_matrix(&a.weights)?;
            let scorer = LinearSoftmaxScorer::from_weight_matrix(&weights, None)?;
            let probs = scorer.score(&tensor_io::read_latent_matrix(&a.latents)?)?;
            tensor_io::write_prob_table(&probs, &a.out)?;
        }
        Command::Evaluate(e) => evaluate(e)?,
        Command::Ablate(a) => {
            let mut cfg = a.run.load()?;
            if a.k_min < 2 || a.k_min > a.k_max {
                bail!(Error::Config(format!(
                    "invalid K range {}..{}",
                    a.k_min, a.k_max
                )));
            }
            cfg.clusters.ablation_range = Some([a.k_min, a.k_max]);
            run_config(&cfg, a.run.threads)?;
        }
        Command::Synth(a) => synth(a)?,
        Command::Run(a) => {
            let cfg = a.run.load()?;
            run_config(&cfg, a.run.threads)?;
        }
        Command::Import(a) => {
            let m = tensor_io::read_latent_text(&a.input)?;
            tensor_io::write_latent_matrix(&m, &a.out)?;
        }
        Command::Report(a) => {
            let r = report::parse_report_json(&tensor_io::read_text(&a.input)?)?;
            let format = if a.format == "json" {
                ReportFormat::Json
            } else {
                ReportFormat::Markdown
            };
            print!("{}", report::emit_report(&r, format)?);
        }
    }
    Ok(())
}

fn evaluate(cmd: EvaluateCommand) -> anyhow::Result<()> {
    match cmd {
        EvaluateCommand::Sr {
            baseline,
            manipulated,
            target,
        } => {
            let b = tensor_io::read_prob_table(&baseline)?;
            let m = tensor_io::read_prob_table(&manipulated)?;
            println!("{}", success_rate(&b, &m, &target)?);
        }
        EvaluateCommand::Fid { real, generated } => {
            let a = gaussian_stats(&tensor_io::read_latent_matrix(&real)?)?;
            let b = gaussian_stats(&tensor_io::read_latent_matrix(&generated)?)?;
            println!("{}", frechet_distance(&a, &b)?);
        }
        EvaluateCommand::Tcav {
            concept,
            negatives,
            grads,
            runs,
            seed,
            l2_reg,
            subset_size,
        } => {
            let cfg = TcavConfig {
                runs,
                seed: seed.unwrap_or(0),
                l2_reg,
                subset_size,
            };
            let summary = tcav_runs(
                &tensor_io::read_latent_matrix(&concept)?,
                &tensor_io::read_latent_matrix(&negatives)?,
                &tensor_io::read_latent_matrix(&grads)?,
                &cfg,
            )?;
            print_json(&summary)?;
        }
        EvaluateCommand::Metrics {
            directions,
            baseline,
            manipulated,
            target,
            delta,
            q,
        } => {
            let dirs = tensor_io::read_direction_set(&directions)?;
            let target = match target {
                Some(t) => t,
                None if !dirs.class_label().is_empty() => dirs.class_label().to_string(),
                None => bail!(Error::Config(
                    "no --target and the direction set carries no class label".into()
                )),
            };
            if manipulated.len() != dirs.k() {
                bail!(Error::KMismatch(format!(
                    "{} manipulated tables for {} directions",
                    manipulated.len(),
                    dirs.k()
                )));
            }
            let base = tensor_io::read_prob_table(&baseline)?;
            let tables = manipulated
                .iter()
                .map(tensor_io::read_prob_table)
                .collect::<Result<Vec<_>, _>>()?;
            let effects = concept_metrics::effect_table(&base, &tables, &target)?;
            print_json(&concept_metrics::ablation_metrics(
                &dirs, &effects, delta, q,
            )?)?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    if let Some(dir) = a.fixture_dir {
        let spec = FixtureSpec {
            seed: a.seed,
            noise_sigma: a.noise,
            d: a.dim,
            ..FixtureSpec::default()
        };
        let fixture = synth_oracle::pipeline_fixture(&spec)?;
        let cfg = pipeline::write_fixture(&fixture, &dir)?;
        println!("{}", cfg.display());
        return Ok(());
    }
    let out = a.out.context("--out is required")?;
    let planted = synth_oracle::generate_planted(&PlantedSpec::uniform(
        a.k_true, a.dim, a.n, a.noise, a.seed,
    ))?;
    tensor_io::write_latent_matrix(&planted.points.to_latent_matrix()?, &out)?;
    if let Some(truth) = a.truth {
        tensor_io::write_direction_set(&planted.truth, truth)?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => e.class().exit_code() as u8,
        // filesystem trouble outside the library, e.g. resolving the working directory
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

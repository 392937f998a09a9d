//! Evaluation reports and their JSON / markdown renderings.
//!
//! Every measured value travels as a [`Quantity`] so its unit is explicit in
//! the JSON. The markdown tables show success rates and influences in
//! percentage points.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io;

pub const REPORT_SCHEMA: &str = "latent-concepts/report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// Probability, or a difference of probabilities, in [0, 1] / [-1, 1].
    Probability,
    /// Probability × 100.
    PercentagePoints,
    /// Share of samples in [0, 1].
    Fraction,
    /// Cosine similarity.
    Cosine,
    /// Silhouette coefficient in [-1, 1].
    Silhouette,
    /// Distance between distributions or images.
    Distance,
    /// Latent-space units.
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }

    pub fn probability(value: f64) -> Self {
        Self::new(value, Unit::Probability)
    }

    pub fn fraction(value: f64) -> Self {
        Self::new(value, Unit::Fraction)
    }

    pub fn distance(value: f64) -> Self {
        Self::new(value, Unit::Distance)
    }

    pub fn latent(value: f64) -> Self {
        Self::new(value, Unit::Latent)
    }

    /// Value expressed in percentage points, for probability-valued quantities.
    pub fn percent(&self) -> f64 {
        match self.unit {
            Unit::PercentagePoints => self.value,
            _ => self.value * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcavRecord {
    pub mean: Quantity,
    pub std: Option<Quantity>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub class_label: String,
    pub index: usize,
    pub name: String,
    pub alpha: Option<Quantity>,
    pub success_rate: Option<Quantity>,
    pub lpips: Option<Quantity>,
    pub fid: Option<Quantity>,
    pub tcav: Option<TcavRecord>,
}

impl ConceptRecord {
    pub fn new(class_label: impl Into<String>, index: usize, name: impl Into<String>) -> Self {
        Self {
            class_label: class_label.into(),
            index,
            name: name.into(),
            alpha: None,
            success_rate: None,
            lpips: None,
            fid: None,
            tcav: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub class_label: String,
    pub index: usize,
    pub alpha: Quantity,
    pub success_rate: Quantity,
    pub lpips: Option<Quantity>,
    pub fid: Option<Quantity>,
    /// The alpha kept for this concept.
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub class_label: String,
    pub k: usize,
    /// True for the K the class was clustered with.
    pub selected: bool,
    pub silhouette: Option<Quantity>,
    pub redundancy: Quantity,
    pub coverage: Quantity,
    pub best_of_k: Quantity,
    pub best_of_k_pp: Quantity,
    pub top_q_mean: Quantity,
    pub top_q_mean_pp: Quantity,
}

impl AblationRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        class_label: impl Into<String>,
        k: usize,
        selected: bool,
        silhouette: Option<f64>,
        redundancy: f64,
        coverage: f64,
        best_of_k: f64,
        top_q_mean: f64,
    ) -> Self {
        Self {
            class_label: class_label.into(),
            k,
            selected,
            silhouette: silhouette.map(|s| Quantity::new(s, Unit::Silhouette)),
            redundancy: Quantity::new(redundancy, Unit::Cosine),
            coverage: Quantity::fraction(coverage),
            best_of_k: Quantity::probability(best_of_k),
            best_of_k_pp: Quantity::new(best_of_k * 100.0, Unit::PercentagePoints),
            top_q_mean: Quantity::probability(top_q_mean),
            top_q_mean_pp: Quantity::new(top_q_mean * 100.0, Unit::PercentagePoints),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProvenance {
    pub class_label: String,
    pub n_pairs: usize,
    pub dropped_ids: Vec<String>,
    pub k: usize,
    /// `"fixed"` when K came from the config, `"silhouette"` when selected.
    pub k_source: String,
    pub silhouette: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub epsilon_norm: Option<f64>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub alphas: Vec<f64>,
    pub per_class_k: BTreeMap<String, usize>,
    pub tcav_runs: Option<usize>,
    pub tcav_subset_size: Option<usize>,
    pub classes: Vec<ClassProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub concepts: Vec<ConceptRecord>,
    pub alpha_sweep: Vec<SweepRecord>,
    pub ablation: Vec<AblationRecord>,
    pub provenance: Provenance,
}

impl Default for EvalReport {
    fn default() -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            concepts: Vec::new(),
            alpha_sweep: Vec::new(),
            ablation: Vec::new(),
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                ..Provenance::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Malformed {
                line: 0,
                message: format!("json encode: {e}"),
            })?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

pub fn parse_report_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::Malformed {
        line: e.line(),
        message: format!("report: {e}"),
    })
}

/// Writes `report.json` and `report.md` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    tensor_io::write_text(
        &dir.join("report.json"),
        &emit_report(report, ReportFormat::Json)?,
    )?;
    tensor_io::write_text(
        &dir.join("report.md"),
        &emit_report(report, ReportFormat::Markdown)?,
    )
}

/// Three significant digits, e.g. 21.8, 5.34, 0.512.
pub fn three_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Two decimals, without a sign on values that round to zero.
fn two_dp(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn opt(q: Option<Quantity>, render: impl Fn(f64) -> String) -> String {
    q.map_or_else(|| "n/a".into(), |q| render(q.value))
}

fn class_order(labels: impl Iterator<Item = String>) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    order
}

fn rank(order: &[String], label: &str) -> usize {
    order.iter().position(|l| l == label).unwrap_or(usize::MAX)
}

fn render_markdown(report: &EvalReport) -> String {
    let mut md = String::from("# Concept direction report\n");

    if !report.concepts.is_empty() {
        let order = class_order(report.concepts.iter().map(|c| c.class_label.clone()));
        let mut concepts: Vec<&ConceptRecord> = report.concepts.iter().collect();
        concepts.sort_by_key(|c| (rank(&order, &c.class_label), c.index));
        md.push_str("\n## Concepts\n\n");
        md.push_str("| Concept | SR (%) | LPIPS | FID | TCAV |\n");
        md.push_str("|---|---|---|---|---|\n");
        for c in concepts {
            let tcav = c.tcav.as_ref().map_or_else(
                || "n/a".to_string(),
                |t| match t.std {
                    Some(s) => format!("{:.2} ± {:.2}", t.mean.value, s.value),
                    None => format!("{:.2}", t.mean.value),
                },
            );
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                c.name,
                c.success_rate
                    .map_or_else(|| "n/a".into(), |q| format!("{:.1}", q.percent())),
                opt(c.lpips, |v| format!("{v:.2}")),
                opt(c.fid, |v| format!("{v:.1}")),
                tcav
            );
        }
    }

    if !report.alpha_sweep.is_empty() {
        let order = class_order(report.alpha_sweep.iter().map(|c| c.class_label.clone()));
        let names: BTreeMap<(&str, usize), &str> = report
            .concepts
            .iter()
            .map(|c| ((c.class_label.as_str(), c.index), c.name.as_str()))
            .collect();
        let mut sweep: Vec<&SweepRecord> = report.alpha_sweep.iter().collect();
        sweep.sort_by(|a, b| {
            (rank(&order, &a.class_label), a.index)
                .cmp(&(rank(&order, &b.class_label), b.index))
                .then(a.alpha.value.total_cmp(&b.alpha.value))
        });
        md.push_str("\n## Alpha sweep\n\n");
        md.push_str("| Concept | α | SR (%) | LPIPS | FID |\n");
        md.push_str("|---|---|---|---|---|\n");
        let mut last: Option<(&str, usize)> = None;
        for s in sweep {
            let key = (s.class_label.as_str(), s.index);
            let label = if last == Some(key) {
                String::new()
            } else {
                names.get(&key).map_or_else(
                    || format!("{} c{}", s.class_label, s.index),
                    |n| n.to_string(),
                )
            };
            last = Some(key);
            let alpha = if s.chosen {
                format!("**{}**", s.alpha.value)
            } else {
                s.alpha.value.to_string()
            };
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {} | {} |",
                label,
                alpha,
                s.success_rate.percent(),
                opt(s.lpips, |v| format!("{v:.3}")),
                opt(s.fid, |v| format!("{v:.2}")),
            );
        }
    }

    if !report.ablation.is_empty() {
        let order = class_order(report.ablation.iter().map(|c| c.class_label.clone()));
        let mut rows: Vec<&AblationRecord> = report.ablation.iter().collect();
        rows.sort_by_key(|r| (rank(&order, &r.class_label), r.k));
        md.push_str("\n## Ablation over K\n\n");
        md.push_str("Influences in percentage points (probability × 100). Bold K marks the K used for the class.\n\n");
        md.push_str(
            "| Target Class | K | Redundancy Index | Coverage | Best-of-K Influence (pp) | Robust Mean Influence (top-q mean, pp) |\n",
        );
        md.push_str("|---|---|---|---|---|---|\n");
        let mut last: Option<&str> = None;
        for r in rows {
            let label = if last == Some(r.class_label.as_str()) {
                ""
            } else {
                r.class_label.as_str()
            };
            last = Some(r.class_label.as_str());
            let k = if r.selected {
                format!("**{}**", r.k)
            } else {
                r.k.to_string()
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                label,
                k,
                two_dp(r.redundancy.value),
                two_dp(r.coverage.value),
                three_sig(r.best_of_k_pp.value),
                three_sig(r.top_q_mean_pp.value),
            );
        }
    }

    if !report.provenance.classes.is_empty() {
        md.push_str("\n## Clustering\n\n");
        md.push_str("| Class | Pairs | Dropped | K | K source | Silhouette |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        for c in &report.provenance.classes {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                c.class_label,
                c.n_pairs,
                c.dropped_ids.len(),
                c.k,
                c.k_source,
                c.silhouette
                    .map_or_else(|| "n/a".into(), |s| format!("{s:.3}")),
            );
        }
    }
    md
}

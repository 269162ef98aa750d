//! Leave-one-family-out evaluation, drift metrics, report rendering and
//! model persistence.

mod metrics;
pub mod persist;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;

use crate::clusterer::{build_family_model, FamilyModel, Provenance};
use crate::dataio::{
    apply_mask, build_drift_scenario, fit_variance_mask, load_dataset, split, DriftScenario,
    LabeledDataset, SplitMode,
};
use crate::detector::{classify, classify_mad, mad_fit_model, DetectionVerdict, MadModel, DEFAULT_MAD_COEFFICIENT};
use crate::error::{Error, Result};
use crate::metric::{embed, train, TrainConfig, TrainMode, TrainedModel, DEFAULT_HIDDEN_DIMS};

pub use metrics::{score_drift, DriftCounts, DriftMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub min_variance: f64,
    pub train_fraction: f64,
    pub split: SplitMode,
    /// Full encoder widths, input first. `None` derives the input width
    /// from the masked data and appends the default hidden widths.
    pub dims: Option<Vec<usize>>,
    pub margin: f64,
    pub triplet_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub triplets_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub mad_coefficient: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let t = TrainConfig::for_input(1);
        EvalConfig {
            min_variance: 0.0,
            train_fraction: 0.8,
            split: SplitMode::Global,
            dims: None,
            margin: t.margin,
            triplet_weight: t.triplet_weight,
            epochs: t.epochs,
            batch_size: t.batch_size,
            triplets_per_epoch: t.triplets_per_epoch,
            learning_rate: t.learning_rate,
            seed: t.seed,
            mad_coefficient: DEFAULT_MAD_COEFFICIENT,
        }
    }
}

impl EvalConfig {
    pub fn train_config(&self, input_width: usize) -> Result<TrainConfig> {
        let layer_dims = match &self.dims {
            Some(d) if d.first() == Some(&input_width) => d.clone(),
            Some(d) => {
                return Err(Error::shape(
                    "explicit dims",
                    format!("input width {input_width}"),
                    format!("{d:?}"),
                ))
            }
            None => std::iter::once(input_width).chain(DEFAULT_HIDDEN_DIMS).collect(),
        };
        Ok(TrainConfig {
            layer_dims,
            margin: self.margin,
            triplet_weight: self.triplet_weight,
            epochs: self.epochs,
            batch_size: self.batch_size,
            triplets_per_epoch: self.triplets_per_epoch,
            learning_rate: self.learning_rate,
            seed: self.seed,
        })
    }

    /// `key=value` pairs echoed into every report.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let dims = match &self.dims {
            Some(d) => d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            None => "auto".into(),
        };
        vec![
            ("min_variance", self.min_variance.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            (
                "split",
                match self.split {
                    SplitMode::Global => "global",
                    SplitMode::PerFamily => "per-family",
                }
                .into(),
            ),
            ("dims", dims),
            ("margin", self.margin.to_string()),
            ("lambda", self.triplet_weight.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch_size.to_string()),
            (
                "triplets_per_epoch",
                self.triplets_per_epoch.map_or("auto".into(), |t| t.to_string()),
            ),
            ("lr", self.learning_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("mad_coefficient", self.mad_coefficient.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub holdout_family: String,
    pub n_train: usize,
    pub n_known: usize,
    pub n_unknown: usize,
    pub n_clusters: usize,
    pub dbscan: DriftMetrics,
    pub mad: DriftMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub n_samples: usize,
    pub n_features: usize,
    /// Ordered by descending unknown count, then family name.
    pub scenarios: Vec<ScenarioReport>,
    pub overall_dbscan: DriftMetrics,
    pub overall_mad: DriftMetrics,
}

impl EvalReport {
    pub fn new(config: EvalConfig, n_samples: usize, n_features: usize, scenarios: Vec<ScenarioReport>) -> Self {
        EvalReport {
            overall_dbscan: DriftMetrics::pooled(scenarios.iter().map(|s| &s.dbscan)),
            overall_mad: DriftMetrics::pooled(scenarios.iter().map(|s| &s.mad)),
            config,
            n_samples,
            n_features,
            scenarios,
        }
    }

    pub fn total_known(&self) -> usize {
        self.scenarios.iter().map(|s| s.n_known).sum()
    }

    pub fn total_unknown(&self) -> usize {
        self.scenarios.iter().map(|s| s.n_unknown).sum()
    }
}

/// Verdict for every row of `embeddings`, against the cluster radii or,
/// when `mad` is given, against the MAD thresholds.
pub fn detect_rows(
    fm: &FamilyModel,
    mad: Option<&MadModel>,
    embeddings: ArrayView2<f64>,
) -> Result<Vec<DetectionVerdict>> {
    embeddings
        .rows()
        .into_iter()
        .map(|row| match mad {
            Some(m) => classify_mad(fm, m, row),
            None => classify(fm, row),
        })
        .collect()
}

/// Everything produced for one held-out family.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub network: TrainedModel,
    pub family_model: FamilyModel,
}

/// Trains, clusters and scores one scenario. A scenario left with a single
/// training family cannot form triplets and is trained on reconstruction
/// alone.
pub fn evaluate_scenario(scenario: &DriftScenario, cfg: &EvalConfig) -> Result<ScenarioOutcome> {
    let train_cfg = cfg.train_config(scenario.train.width())?;
    let mode = if scenario.train.family_counts().len() >= 2 {
        TrainMode::Triplet
    } else {
        log::warn!(
            "scenario {}: one training family, training without the triplet term",
            scenario.holdout_family
        );
        TrainMode::Vanilla
    };
    log::info!(
        "scenario {}: training on {} samples ({train_cfg})",
        scenario.holdout_family,
        scenario.train.len()
    );
    let network = train(&scenario.train, &train_cfg, mode)?;
    let z_train = embed(&network, &scenario.train)?;
    let mut family_model = build_family_model(z_train.view(), scenario.train.labels(), network.latent_dim())?;
    family_model.provenance = Provenance {
        network_hash: String::new(),
        config: cfg
            .echo()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" "),
    };
    let mad = mad_fit_model(&family_model, cfg.mad_coefficient)?;

    let test = scenario.test_known.concat(&scenario.test_unknown)?;
    let truth: Vec<bool> = (0..test.len()).map(|i| i >= scenario.test_known.len()).collect();
    let (dbscan, mad_metrics) = if test.is_empty() {
        (DriftMetrics::default(), DriftMetrics::default())
    } else {
        let z_test = embed(&network, &test)?;
        (
            score_drift(&detect_rows(&family_model, None, z_test.view())?, &truth)?,
            score_drift(&detect_rows(&family_model, Some(&mad), z_test.view())?, &truth)?,
        )
    };
    Ok(ScenarioOutcome {
        report: ScenarioReport {
            holdout_family: scenario.holdout_family.clone(),
            n_train: scenario.train.len(),
            n_known: scenario.test_known.len(),
            n_unknown: scenario.test_unknown.len(),
            n_clusters: family_model.clusters.len(),
            dbscan,
            mad: mad_metrics,
        },
        network,
        family_model,
    })
}

/// File-name-safe rendering of a family name.
fn file_stem(family: &str) -> String {
    family
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Leave-one-family-out over an in-memory dataset. When `model_dir` is
/// given, each scenario's network and family model are written there as
/// `network_<family>.bin` and `family_<family>.bin`.
pub fn run_leave_one_out_dataset(
    ds: &LabeledDataset,
    cfg: &EvalConfig,
    model_dir: Option<&Path>,
) -> Result<EvalReport> {
    let families = ds.families();
    if families.len() < 2 {
        return Err(Error::TooFewFamilies(families.len()));
    }
    let mask = fit_variance_mask(ds, cfg.min_variance)?;
    let masked = apply_mask(ds, &mask)?;
    let (train_part, test_part) = split(&masked, cfg.train_fraction, cfg.split)?;

    let mut scenarios = families
        .iter()
        .map(|f| build_drift_scenario(&train_part, &test_part, f))
        .collect::<Result<Vec<_>>>()?;
    scenarios.sort_by(|a, b| {
        b.test_unknown
            .len()
            .cmp(&a.test_unknown.len())
            .then_with(|| a.holdout_family.cmp(&b.holdout_family))
    });

    if let Some(dir) = model_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut reports = Vec::with_capacity(scenarios.len());
    for scenario in &scenarios {
        let wrap = |e: Error| Error::Scenario {
            family: scenario.holdout_family.clone(),
            source: Box::new(e),
        };
        let mut outcome = evaluate_scenario(scenario, cfg).map_err(wrap)?;
        if let Some(dir) = model_dir {
            let stem = file_stem(&scenario.holdout_family);
            let network = outcome.network.clone().with_mask(mask.clone()).map_err(wrap)?;
            let hash = persist::save_network(dir.join(format!("network_{stem}.bin")), &network).map_err(wrap)?;
            outcome.family_model.provenance.network_hash = hash;
            persist::save_family_model(dir.join(format!("family_{stem}.bin")), &outcome.family_model)
                .map_err(wrap)?;
        }
        let r = &outcome.report;
        log::info!(
            "scenario {}: known {} unknown {} clusters {} f1 dbscan {:.4} mad {:.4}",
            r.holdout_family,
            r.n_known,
            r.n_unknown,
            r.n_clusters,
            r.dbscan.f1,
            r.mad.f1
        );
        reports.push(outcome.report);
    }
    Ok(EvalReport::new(cfg.clone(), ds.len(), mask.len(), reports))
}

/// [`run_leave_one_out_dataset`] on a CSV file.
pub fn run_leave_one_out(path: impl AsRef<Path>, cfg: &EvalConfig, model_dir: Option<&Path>) -> Result<EvalReport> {
    run_leave_one_out_dataset(&load_dataset(path)?, cfg, model_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub const OVERALL_ROW: &str = "Overall";

pub const CSV_COLUMNS: [&str; 17] = [
    "family",
    "n_known",
    "n_unknown",
    "f1_dbscan",
    "f1_mad",
    "precision_dbscan",
    "recall_dbscan",
    "precision_mad",
    "recall_mad",
    "tp_dbscan",
    "fp_dbscan",
    "tn_dbscan",
    "fn_dbscan",
    "tp_mad",
    "fp_mad",
    "tn_mad",
    "fn_mad",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_row(family: &str, known: usize, unknown: usize, d: &DriftMetrics, m: &DriftMetrics) -> String {
    let mut fields = vec![
        csv_field(family),
        known.to_string(),
        unknown.to_string(),
        format!("{:.6}", d.f1),
        format!("{:.6}", m.f1),
        format!("{:.6}", d.precision),
        format!("{:.6}", d.recall),
        format!("{:.6}", m.precision),
        format!("{:.6}", m.recall),
    ];
    for c in [d.counts, m.counts] {
        fields.extend(
            [c.true_positive, c.false_positive, c.true_negative, c.false_negative].map(|v| v.to_string()),
        );
    }
    fields.join(",")
}

/// Per-scenario rows plus a pooled overall row. CSV output starts with
/// `# key=value` lines echoing the configuration.
pub fn report_render(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for (k, v) in report.config.echo() {
                let _ = writeln!(out, "# {k}={v}");
            }
            let _ = writeln!(out, "# samples={} features={}", report.n_samples, report.n_features);
            let _ = writeln!(out, "{}", CSV_COLUMNS.join(","));
            for s in &report.scenarios {
                let _ = writeln!(out, "{}", csv_row(&s.holdout_family, s.n_known, s.n_unknown, &s.dbscan, &s.mad));
            }
            let _ = writeln!(
                out,
                "{}",
                csv_row(
                    OVERALL_ROW,
                    report.total_known(),
                    report.total_unknown(),
                    &report.overall_dbscan,
                    &report.overall_mad
                )
            );
        }
        ReportFormat::Table => {
            let width = report
                .scenarios
                .iter()
                .map(|s| s.holdout_family.chars().count())
                .chain([OVERALL_ROW.len(), "Family".len()])
                .max()
                .unwrap_or(0);
            let line = |out: &mut String, fam: &str, known: String, unknown: String, d: String, m: String| {
                let _ = writeln!(out, "{fam:<width$}  {known:>7}  {unknown:>9}  {d:>9}  {m:>7}");
            };
            line(&mut out, "Family", "Known".into(), "Unknown".into(), "F1 DBSCAN".into(), "F1 MAD".into());
            let _ = writeln!(out, "{}", "-".repeat(width + 44));
            for s in &report.scenarios {
                line(
                    &mut out,
                    &s.holdout_family,
                    s.n_known.to_string(),
                    s.n_unknown.to_string(),
                    format!("{:.4}", s.dbscan.f1),
                    format!("{:.4}", s.mad.f1),
                );
            }
            let _ = writeln!(out, "{}", "-".repeat(width + 44));
            line(
                &mut out,
                OVERALL_ROW,
                report.total_known().to_string(),
                report.total_unknown().to_string(),
                format!("{:.4}", report.overall_dbscan.f1),
                format!("{:.4}", report.overall_mad.f1),
            );
            let echo: Vec<String> = report.config.echo().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "\n{}", echo.join(" "));
        }
    }
    out
}

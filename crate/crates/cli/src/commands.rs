//! The five pipeline commands.
//!
//! Every command reads the same config, does its work, and publishes its
//! files atomically into the run's output directory via [`Emitter`].
//! Cells that fail for statistical reasons (a degenerate fold, a singular
//! design) are skipped with a warning so one pathological (model, task)
//! pair cannot sink a whole run; a run where *every* cell fails reports
//! the first such failure. Input problems always abort.

use std::path::Path;

use flipaudit_core::{
    aggregate_across_models, audit_age_comorbidity, audit_clinical, audit_findings,
    default_k_grid, derive_seed, evaluate_identifiers, flip_search, load_dataset, split_three,
    train_identifier, write_dataset, AuditFit, AuditKind, Dataset, Error, ErrorCategory,
    FitConfig, FitReport, FoldEval, IdentifierKind, MisclassMatrix, Result, TaskName,
    TrainedIdentifier,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::emit::Emitter;
use crate::synth;

/// The three audit designs, in report order.
const AUDIT_KINDS: [AuditKind; 3] = [
    AuditKind::Clinical,
    AuditKind::Findings,
    AuditKind::AgePlusComorbidity,
];

// ---------------------------------------------------------------------
// Report row schemas (shared between the writers and the report reader)
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct AuditRow {
    model_id: String,
    task: TaskName,
    audit_kind: AuditKind,
    feature: String,
    coefficient: f64,
    std_error: f64,
    z_value: f64,
    p_value: f64,
    odds_ratio: f64,
    or_ci_lower: f64,
    or_ci_upper: f64,
    converged: bool,
    separation_detected: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AggregateRow {
    task: TaskName,
    audit_kind: AuditKind,
    feature: String,
    n_models: usize,
    n_significant_models: usize,
    mean_odds_ratio: f64,
    agg_ci_lower: f64,
    agg_ci_upper: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IdentifierCellRow {
    task: TaskName,
    kind: IdentifierKind,
    model_id: String,
    split: usize,
    auroc: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IdentifierSummaryRow {
    task: TaskName,
    kind: IdentifierKind,
    n_cells: usize,
    mean_auroc: f64,
    mean_ci_lower: f64,
    mean_ci_upper: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FlipRow {
    task: TaskName,
    identifier_kind: IdentifierKind,
    model_id: String,
    flipped: bool,
    k: usize,
    flipping_threshold: f64,
    top_k_precision: f64,
    n_flipped_test: usize,
    f1_before: f64,
    f1_after: f64,
    f1_change: f64,
    ci_lower: f64,
    ci_upper: f64,
}

// ---------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::invalid(format!("failed to encode a report row: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("failed to flush a report: {e}")))
}

fn read_csv_rows<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::invalid(format!(
            "{} not found; run `flipaudit {produced_by}` first",
            path.display()
        )));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))
}

fn load_inputs(config: &RunConfig) -> Result<Dataset> {
    let inputs = config.inputs()?;
    load_dataset(&inputs.studies, &inputs.outputs, inputs.hierarchy.as_deref())
}

/// Statistical failures are confined to their cell; anything else aborts.
fn is_skippable(err: &Error) -> bool {
    err.category() == ErrorCategory::Computation
}

/// Fold skippable failures into warnings, keeping the first one around as
/// the run's error if nothing at all succeeds.
struct SkipLog {
    what: &'static str,
    n_skipped: usize,
    first: Option<Error>,
}

impl SkipLog {
    fn new(what: &'static str) -> Self {
        Self {
            what,
            n_skipped: 0,
            first: None,
        }
    }

    fn skip(&mut self, cell: &str, err: Error) -> Result<()> {
        if !is_skippable(&err) {
            return Err(err);
        }
        warn!("{}: skipping {cell}: {err}", self.what);
        self.n_skipped += 1;
        if self.first.is_none() {
            self.first = Some(err);
        }
        Ok(())
    }

    /// The run-level error when no cell survived.
    fn into_error(self) -> Error {
        self.first
            .unwrap_or_else(|| Error::invalid(format!("{}: nothing to process", self.what)))
    }
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let (dataset, record) = synth::generate(&config.synth, config.run.seed)?;
    let mut emitter = Emitter::new(&config.run.out_dir)?;
    let studies = emitter.stage_path("studies.csv");
    let outputs = emitter.stage_path("outputs.csv");
    let hierarchy = emitter.stage_path("hierarchy.json");
    write_dataset(&dataset, &studies, &outputs, &hierarchy)?;
    let mut recipe = serde_json::to_vec_pretty(&record)
        .map_err(|e| Error::invalid(format!("failed to encode the recipe record: {e}")))?;
    recipe.push(b'\n');
    emitter.write_file("synth_recipe.json", &recipe)?;
    emitter.commit()?;
    info!(
        "synth: wrote {} studies x {} models into {}",
        dataset.n_studies(),
        dataset.n_models(),
        config.run.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------

fn run_audit(
    ds: &Dataset,
    matrix: &MisclassMatrix,
    kind: AuditKind,
    fit: &FitConfig,
) -> Result<AuditFit> {
    match kind {
        AuditKind::Clinical => audit_clinical(ds, matrix, fit),
        AuditKind::Findings => audit_findings(ds, matrix, fit),
        AuditKind::AgePlusComorbidity => audit_age_comorbidity(ds, matrix, fit),
    }
}

/// One (task, model) cell's audit fits: the outer error covers building
/// the misclassification matrix, the inner one each design's fit.
type CellAudits = Result<Vec<(AuditKind, Result<AuditFit>)>>;

pub fn cmd_audit(config: &RunConfig) -> Result<()> {
    let ds = load_inputs(config)?;
    let tasks = config.tasks();
    let fit = config.audit.fit_config();
    let all: Vec<usize> = (0..ds.n_studies()).collect();

    // One work item per (task, model); the three audit designs share the
    // item's misclassification matrix. Items are pure, so parallel order
    // does not matter; rows are assembled sequentially afterwards.
    let items: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, _)| (0..ds.n_models()).map(move |m| (t, m)))
        .collect();
    let fitted: Vec<CellAudits> = items
        .par_iter()
        .map(|&(t, m)| {
            let matrix = MisclassMatrix::build(&ds, m, tasks[t], &all)?;
            Ok(AUDIT_KINDS
                .map(|kind| (kind, run_audit(&ds, &matrix, kind, &fit)))
                .into_iter()
                .collect::<Vec<_>>())
        })
        .collect();

    let mut skips = SkipLog::new("audit");
    let mut rows: Vec<AuditRow> = Vec::new();
    // reports[task position][audit position] -> per-model fit reports.
    let mut reports: Vec<[Vec<FitReport>; 3]> = (0..tasks.len())
        .map(|_| [Vec::new(), Vec::new(), Vec::new()])
        .collect();
    for (&(t, m), item) in items.iter().zip(fitted) {
        let task = tasks[t];
        let model_id = &ds.model_ids()[m];
        let kind_fits = match item {
            Ok(kind_fits) => kind_fits,
            Err(e) => {
                skips.skip(&format!("{model_id} / {task}"), e)?;
                continue;
            }
        };
        for (pos, (kind, fit_result)) in kind_fits.into_iter().enumerate() {
            let fit = match fit_result {
                Ok(fit) => fit,
                Err(e) => {
                    skips.skip(&format!("{model_id} / {task} / {}", kind.as_str()), e)?;
                    continue;
                }
            };
            for stat in &fit.report.features {
                rows.push(AuditRow {
                    model_id: model_id.clone(),
                    task,
                    audit_kind: kind,
                    feature: stat.name.clone(),
                    coefficient: stat.coefficient,
                    std_error: stat.std_error,
                    z_value: stat.z_value,
                    p_value: stat.p_value,
                    odds_ratio: stat.odds_ratio,
                    or_ci_lower: stat.or_ci_lower,
                    or_ci_upper: stat.or_ci_upper,
                    converged: fit.report.converged,
                    separation_detected: fit.report.separation_detected,
                });
            }
            reports[t][pos].push(fit.report);
        }
    }
    if rows.is_empty() {
        return Err(skips.into_error());
    }

    let mut aggregate_rows: Vec<AggregateRow> = Vec::new();
    for (t, per_kind) in reports.iter().enumerate() {
        for (pos, kind) in AUDIT_KINDS.into_iter().enumerate() {
            if per_kind[pos].is_empty() {
                continue;
            }
            let aggregate = aggregate_across_models(&per_kind[pos], tasks[t])?;
            for feature in aggregate.features {
                aggregate_rows.push(AggregateRow {
                    task: tasks[t],
                    audit_kind: kind,
                    feature: feature.name,
                    n_models: aggregate.n_models,
                    n_significant_models: feature.n_significant_models,
                    mean_odds_ratio: feature.mean_odds_ratio,
                    agg_ci_lower: feature.agg_ci_lower,
                    agg_ci_upper: feature.agg_ci_upper,
                });
            }
        }
    }

    let mut emitter = Emitter::new(&config.run.out_dir)?;
    emitter.write_file("audit_report.csv", &csv_bytes(&rows)?)?;
    emitter.write_file("audit_aggregate.csv", &csv_bytes(&aggregate_rows)?)?;
    emitter.commit()?;
    info!(
        "audit: {} coefficient rows across {} models ({} cells skipped)",
        rows.len(),
        ds.n_models(),
        skips.n_skipped
    );
    Ok(())
}

// ---------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------

pub fn cmd_identify(config: &RunConfig) -> Result<()> {
    let ds = load_inputs(config)?;
    let spec = config.eval_spec();
    let report = evaluate_identifiers(&ds, &config.backend, &spec, config.run.seed)?;
    if report.cells.is_empty() {
        return Err(Error::DegenerateTarget(
            "every (task, model, split) cell was degenerate; nothing to evaluate".into(),
        ));
    }

    let cell_rows: Vec<IdentifierCellRow> = report
        .cells
        .iter()
        .map(|c| IdentifierCellRow {
            task: c.task,
            kind: c.kind,
            model_id: c.model_id.clone(),
            split: c.split,
            auroc: c.auroc.point,
            ci_lower: c.auroc.lower,
            ci_upper: c.auroc.upper,
        })
        .collect();
    let summary_rows: Vec<IdentifierSummaryRow> = report
        .summary
        .iter()
        .map(|s| IdentifierSummaryRow {
            task: s.task,
            kind: s.kind,
            n_cells: s.n_cells,
            mean_auroc: s.mean_auroc,
            mean_ci_lower: s.mean_ci_lower,
            mean_ci_upper: s.mean_ci_upper,
        })
        .collect();

    let mut emitter = Emitter::new(&config.run.out_dir)?;
    emitter.write_file("identifier_report.csv", &csv_bytes(&cell_rows)?)?;
    emitter.write_file("identifier_summary.csv", &csv_bytes(&summary_rows)?)?;
    emitter.commit()?;
    info!(
        "identify: {} cells over {} (task, kind) summaries",
        cell_rows.len(),
        summary_rows.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// flip
// ---------------------------------------------------------------------

fn fold_eval(
    ds: &Dataset,
    matrix: &MisclassMatrix,
    identifier: &TrainedIdentifier,
    indices: &[usize],
) -> Result<FoldEval> {
    let labels = ds.task_labels(matrix.task);
    let mut fold = FoldEval {
        study_ids: Vec::with_capacity(indices.len()),
        predictions: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
        likelihoods: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        fold.study_ids.push(ds.studies()[i].study_id.clone());
        fold.predictions.push(matrix.predictions[i]);
        fold.labels.push(labels[i]);
        fold.likelihoods.push(identifier.predict_study(ds, i)?);
    }
    Ok(fold)
}

/// The k grid actually searched: the configured one with entries beyond
/// the train fold dropped, or the built-in grid when none is configured.
fn effective_k_grid(configured: &[usize], n_train: usize) -> Result<Vec<usize>> {
    if configured.is_empty() {
        return Ok(default_k_grid(n_train));
    }
    let grid: Vec<usize> = configured
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k <= n_train)
        .collect();
    if grid.is_empty() {
        return Err(Error::invalid(format!(
            "flip.k_grid has no entry in 1..={n_train} (the train fold size)"
        )));
    }
    Ok(grid)
}

pub fn cmd_flip(config: &RunConfig) -> Result<()> {
    let ds = load_inputs(config)?;
    let tasks = config.tasks();
    let kinds = config.flip_kinds();
    let seed = config.run.seed;
    let n = ds.n_studies();

    let n_models = ds.n_models();
    let items: Vec<(usize, TaskName, IdentifierKind)> = tasks
        .iter()
        .flat_map(|&task| {
            kinds
                .iter()
                .flat_map(move |&kind| (0..n_models).map(move |m| (m, task, kind)))
        })
        .collect();
    let outcomes: Vec<Result<FlipRow>> = items
        .par_iter()
        .map(|&(m, task, kind)| {
            let (mu, t, k) = (m as u64, task.index() as u64, kind.index() as u64);
            let split = split_three(
                n,
                config.flip.train_fraction,
                config.flip.val_fraction,
                derive_seed(seed, "flip/split", &[mu, t]),
            )?;
            let matrix = MisclassMatrix::build(&ds, m, task, &split.train)?;
            let identifier = train_identifier(
                &ds,
                &split.train,
                kind,
                m,
                task,
                &config.backend,
                derive_seed(seed, "flip/fit", &[mu, t, k]),
            )?;
            let train = fold_eval(&ds, &matrix, &identifier, &split.train)?;
            let val = fold_eval(&ds, &matrix, &identifier, &split.val)?;
            let test = fold_eval(&ds, &matrix, &identifier, &split.test)?;
            let grid = effective_k_grid(&config.flip.k_grid, split.train.len())?;
            let outcome = flip_search(
                &train,
                &val,
                &test,
                &grid,
                config.flip.n_resamples,
                derive_seed(seed, "flip/search", &[mu, t, k]),
            )?;
            Ok(FlipRow {
                task,
                identifier_kind: kind,
                model_id: ds.model_ids()[m].clone(),
                flipped: outcome.decision.flip,
                k: outcome.decision.k,
                flipping_threshold: outcome.decision.flipping_threshold,
                top_k_precision: outcome.decision.top_k_precision,
                n_flipped_test: outcome.flipped_study_ids.len(),
                f1_before: outcome.f1_before,
                f1_after: outcome.f1_after,
                f1_change: outcome.f1_change,
                ci_lower: outcome.f1_change_ci.lower,
                ci_upper: outcome.f1_change_ci.upper,
            })
        })
        .collect();

    let mut skips = SkipLog::new("flip");
    let mut rows: Vec<FlipRow> = Vec::new();
    for (&(m, task, kind), outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => skips.skip(
                &format!("{} / {task} / {}", ds.model_ids()[m], kind.as_str()),
                e,
            )?,
        }
    }
    if rows.is_empty() {
        return Err(skips.into_error());
    }

    let mut emitter = Emitter::new(&config.run.out_dir)?;
    emitter.write_file("flip_report.csv", &csv_bytes(&rows)?)?;
    emitter.commit()?;
    let n_flipped = rows.iter().filter(|r| r.flipped).count();
    info!(
        "flip: {n_flipped} of {} cells flipped ({} skipped)",
        rows.len(),
        skips.n_skipped
    );
    Ok(())
}

// ---------------------------------------------------------------------
// report
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct AurocPlotRow {
    task: TaskName,
    kind: IdentifierKind,
    mean_auroc: f64,
    mean_ci_lower: f64,
    mean_ci_upper: f64,
}

#[derive(Debug, Serialize)]
struct FlipPlotRow {
    task: TaskName,
    identifier_kind: IdentifierKind,
    model_id: String,
    flipped: bool,
    f1_change: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Debug, Serialize)]
struct SignificancePlotRow {
    task: TaskName,
    audit_kind: AuditKind,
    feature: String,
    n_models: usize,
    n_significant_models: usize,
    mean_odds_ratio: f64,
}

pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let out = &config.run.out_dir;
    let aggregates: Vec<AggregateRow> = read_csv_rows(&out.join("audit_aggregate.csv"), "audit")?;
    let summaries: Vec<IdentifierSummaryRow> =
        read_csv_rows(&out.join("identifier_summary.csv"), "identify")?;
    let flips: Vec<FlipRow> = read_csv_rows(&out.join("flip_report.csv"), "flip")?;

    let auroc_rows: Vec<AurocPlotRow> = summaries
        .iter()
        .map(|s| AurocPlotRow {
            task: s.task,
            kind: s.kind,
            mean_auroc: s.mean_auroc,
            mean_ci_lower: s.mean_ci_lower,
            mean_ci_upper: s.mean_ci_upper,
        })
        .collect();
    let flip_rows: Vec<FlipPlotRow> = flips
        .iter()
        .map(|f| FlipPlotRow {
            task: f.task,
            identifier_kind: f.identifier_kind,
            model_id: f.model_id.clone(),
            flipped: f.flipped,
            f1_change: f.f1_change,
            ci_lower: f.ci_lower,
            ci_upper: f.ci_upper,
        })
        .collect();
    let significance_rows: Vec<SignificancePlotRow> = aggregates
        .iter()
        .map(|a| SignificancePlotRow {
            task: a.task,
            audit_kind: a.audit_kind,
            feature: a.feature.clone(),
            n_models: a.n_models,
            n_significant_models: a.n_significant_models,
            mean_odds_ratio: a.mean_odds_ratio,
        })
        .collect();

    let mut emitter = Emitter::new(out)?;
    emitter.write_file("identifier_auroc_by_kind.csv", &csv_bytes(&auroc_rows)?)?;
    emitter.write_file("flip_f1_change.csv", &csv_bytes(&flip_rows)?)?;
    emitter.write_file("audit_significance.csv", &csv_bytes(&significance_rows)?)?;
    emitter.write_file(
        "summary.md",
        render_summary(&aggregates, &summaries, &flips).as_bytes(),
    )?;
    emitter.commit()?;
    info!("report: summary.md and plot data written to {}", out.display());
    Ok(())
}

fn render_summary(
    aggregates: &[AggregateRow],
    summaries: &[IdentifierSummaryRow],
    flips: &[FlipRow],
) -> String {
    let mut md = String::new();
    md.push_str("# Run summary\n\n");

    md.push_str("## Misclassification identifiers (held-out AUROC)\n\n");
    md.push_str("Mean over (model, split) cells; intervals are the means of the per-cell\n");
    md.push_str("bootstrap bounds.\n\n");
    md.push_str("| Task | Identifier | Cells | Mean AUROC | Mean 95% CI |\n");
    md.push_str("|---|---|---:|---:|---|\n");
    for s in summaries {
        md.push_str(&format!(
            "| {} | {} | {} | {:.3} | [{:.3}, {:.3}] |\n",
            s.task,
            s.kind.as_str(),
            s.n_cells,
            s.mean_auroc,
            s.mean_ci_lower,
            s.mean_ci_upper
        ));
    }

    md.push_str("\n## Misclassification predictors (Wald tests across models)\n\n");
    md.push_str("Features whose coefficient was significant (p < 0.05) in at least one\n");
    md.push_str("model; the full table is in audit_aggregate.csv.\n\n");
    md.push_str("| Task | Audit | Feature | Significant in | Mean OR | Mean 95% CI |\n");
    md.push_str("|---|---|---|---:|---:|---|\n");
    for a in aggregates {
        if a.n_significant_models == 0 || a.feature == "(intercept)" {
            continue;
        }
        md.push_str(&format!(
            "| {} | {} | {} | {}/{} | {:.3} | [{:.3}, {:.3}] |\n",
            a.task,
            a.audit_kind.as_str(),
            a.feature,
            a.n_significant_models,
            a.n_models,
            a.mean_odds_ratio,
            a.agg_ci_lower,
            a.agg_ci_upper
        ));
    }

    md.push_str("\n## Selective flipping (test-fold F1)\n\n");
    let n_flipped = flips.iter().filter(|f| f.flipped).count();
    md.push_str(&format!(
        "{} of {} (task, identifier, model) cells passed the flipping rule\n",
        n_flipped,
        flips.len()
    ));
    if n_flipped > 0 {
        let mean_change = flips
            .iter()
            .filter(|f| f.flipped)
            .map(|f| f.f1_change)
            .sum::<f64>()
            / n_flipped as f64;
        md.push_str(&format!(
            "and improved validation F1; their mean test-fold F1 change is {mean_change:+.4}.\n"
        ));
    } else {
        md.push_str("on no cell did flipping improve validation F1; nothing was flipped.\n");
    }
    md.push('\n');
    md.push_str("| Task | Identifier | Model | Flip? | k | F1 before | F1 after | F1 change | 95% CI |\n");
    md.push_str("|---|---|---|---|---:|---:|---:|---:|---|\n");
    for f in flips {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:+.4} | [{:+.4}, {:+.4}] |\n",
            f.task,
            f.identifier_kind.as_str(),
            f.model_id,
            if f.flipped { "yes" } else { "no" },
            f.k,
            f.f1_before,
            f.f1_after,
            f.f1_change,
            f.ci_lower,
            f.ci_upper
        ));
    }
    md
}

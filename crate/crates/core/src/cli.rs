//! Command implementations behind the `cmpa` binary: dataset synthesis,
//! training, evaluation, embedding export, the full experiment grid, and
//! figure rendering. Every command is deterministic given its inputs and
//! seed; output files carry no timestamps, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{MatrixConfig, RunConfig};
use crate::data::{generate_synthetic, load_dataset, split_dataset, write_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, write_embedding_table, MetricsBundle};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::report::{render_reports, write_atomic, ExperimentMatrix, MatrixCell};
use crate::trainer::{train_run, TrainOutcome, TrainReport};

/// Output root fallback: `--out`, else `$CMPA_OUT`, else the working dir.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("CMPA_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Generate a synthetic dataset on disk: f0 files plus manifest.
pub fn cmd_synth(spec: &SyntheticSpec, out_dir: &Path) -> Result<()> {
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let (contours, records) = generate_synthetic(spec)?;
    let manifest = write_dataset(out_dir, &contours, &records)?;
    let lens: Vec<usize> = contours.iter().map(|c| c.len()).collect();
    println!(
        "wrote {} recordings to {} (frames {}..{}, manifest {})",
        contours.len(),
        out_dir.display(),
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        manifest.display()
    );
    for criterion in crate::data::CRITERIA {
        let mut values: Vec<f64> = records.iter().map(|r| r.rating(criterion)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "  {criterion}: min {:.3} median {:.3} max {:.3}",
            values[0],
            values[values.len() / 2],
            values[values.len() - 1]
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsDoc {
    r_squared: f64,
    davies_bouldin: f64,
    occupied_bins: Vec<usize>,
    centroid_distance_matrix: Vec<Vec<f64>>,
}

impl MetricsDoc {
    fn from_bundle(bundle: &MetricsBundle) -> Self {
        let k = bundle.occupied_bins.len();
        MetricsDoc {
            r_squared: bundle.r_squared,
            davies_bouldin: bundle.davies_bouldin,
            occupied_bins: bundle.occupied_bins.clone(),
            centroid_distance_matrix: (0..k)
                .map(|i| (0..k).map(|j| bundle.centroid_distances[[i, j]]).collect())
                .collect(),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Runtime(format!("metrics encode: {e}")))?;
        json.push('\n');
        write_atomic(path, json.as_bytes())
    }
}

/// Resolve the run config from an optional file plus overrides; flags like
/// `--regime` arrive as trailing overrides.
fn resolve_run_config(
    config_path: Option<&Path>,
    overrides: &[String],
    manifest_flag: Option<&Path>,
) -> Result<RunConfig> {
    let text = match config_path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, overrides).map_err(|e| match e {
        // Without a config file, a missing regime is a usage problem.
        Error::Parse(msg) if config_path.is_none() && msg.contains("regime") => Error::Usage(msg),
        other => other,
    })?;
    if let Some(m) = manifest_flag {
        cfg.manifest = Some(m.to_path_buf());
    }
    Ok(cfg)
}

fn write_run_artifacts(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    let report = &outcome.report;
    write_atomic(dir.join("report.json").as_path(), report.to_json()?.as_bytes())?;
    write_atomic(dir.join("config.txt").as_path(), report.config_text.as_bytes())?;
    let last_phase = report.phases.last().expect("at least one phase");
    let best_val = last_phase
        .val_losses
        .get(report.best_epoch.saturating_sub(1))
        .copied()
        .unwrap_or(f64::INFINITY);
    let ckpt = outcome
        .model
        .to_checkpoint(report.config_text.clone(), report.best_epoch, best_val);
    save_checkpoint(&ckpt, dir.join("checkpoint.bin").as_path())?;
    write_embedding_table(&outcome.test_bundle.embedding, dir.join("embeddings.tsv").as_path())?;
    MetricsDoc::from_bundle(&outcome.test_bundle).write(dir.join("metrics.json").as_path())?;
    Ok(())
}

/// Train one run and write checkpoint, report, config snapshot, embedding
/// table, and metrics under `out_dir`.
pub fn cmd_train(
    config_path: Option<&Path>,
    overrides: &[String],
    manifest_flag: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let mut cfg = resolve_run_config(config_path, overrides, manifest_flag)?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Usage("no manifest: set data.manifest or pass --manifest".into()))?;
    cfg.manifest = Some(manifest.clone());
    let dataset = load_dataset(&manifest)?;
    let split = split_dataset(&dataset.ids(), cfg.seed)?;
    let outcome = train_run(&cfg, &dataset, &split)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_run_artifacts(&outcome, out_dir)?;
    println!(
        "{} {} seed {}: test r_squared = {:.4}, davies_bouldin = {:.4} ({} epochs, best {})",
        outcome.report.regime,
        outcome.report.criterion,
        outcome.report.seed,
        outcome.report.test.r_squared,
        outcome.report.test.davies_bouldin,
        outcome
            .report
            .phases
            .iter()
            .map(|p| p.train_losses.len())
            .sum::<usize>(),
        outcome.report.best_epoch
    );
    Ok(())
}

fn model_from_checkpoint_file(path: &Path) -> Result<(Model, RunConfig)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = RunConfig::parse(&ckpt.config_text, &[])?;
    let model = Model::from_checkpoint(&cfg.encoder, &ckpt)?;
    Ok((model, cfg))
}

fn bundle_for_checkpoint(
    checkpoint: &Path,
    manifest_flag: Option<&Path>,
) -> Result<(MetricsBundle, RunConfig)> {
    let (model, cfg) = model_from_checkpoint_file(checkpoint)?;
    let manifest = manifest_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| {
            Error::Usage("checkpoint config has no data.manifest; pass --manifest".into())
        })?;
    let dataset = load_dataset(&manifest)?;
    let split = split_dataset(&dataset.ids(), cfg.seed)?;
    let bundle = evaluate_model(
        &model,
        &dataset,
        &split.test_ids,
        cfg.criterion,
        cfg.chunk_policy,
        &cfg.loss.rating_bins(),
        cfg.chunk_len,
    )?;
    Ok((bundle, cfg))
}

/// Evaluate a checkpoint on its test split (re-derived from the embedded
/// config): print R^2 and the Davies-Bouldin index, write the bundle.
pub fn cmd_evaluate(
    checkpoint: &Path,
    manifest_flag: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let (bundle, _) = bundle_for_checkpoint(checkpoint, manifest_flag)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    println!("r_squared = {}", bundle.r_squared);
    println!("davies_bouldin = {}", bundle.davies_bouldin);
    MetricsDoc::from_bundle(&bundle).write(out_dir.join("metrics.json").as_path())?;
    write_embedding_table(&bundle.embedding, out_dir.join("embeddings.tsv").as_path())?;
    Ok(())
}

/// Export the test-set embedding table for a checkpoint.
pub fn cmd_embed(checkpoint: &Path, manifest_flag: Option<&Path>, out_dir: &Path) -> Result<()> {
    let (bundle, _) = bundle_for_checkpoint(checkpoint, manifest_flag)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("embeddings.tsv");
    write_embedding_table(&bundle.embedding, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cell_dir(root: &Path, regime: &str, criterion: &str, seed: u64) -> PathBuf {
    root.join(regime).join(criterion).join(format!("seed{seed}"))
}

/// Run the full regimes x criteria x seeds grid. Completed cells are kept on
/// failure; `--resume` skips cells whose report already exists.
pub fn cmd_run_matrix(
    config_path: Option<&Path>,
    overrides: &[String],
    manifest_flag: Option<&Path>,
    out_dir: &Path,
    resume: bool,
) -> Result<()> {
    let text = match config_path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut matrix = MatrixConfig::parse(&text, overrides)?;
    if let Some(m) = manifest_flag {
        matrix.set_manifest(m);
    }
    let manifest = matrix
        .manifest()
        .ok_or_else(|| Error::Usage("no manifest: set data.manifest or pass --manifest".into()))?;
    let dataset = load_dataset(&manifest)?;
    let ids = dataset.ids();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(out_dir.join("matrix.txt").as_path(), matrix.to_text().as_bytes())?;

    let mut completed = 0usize;
    let mut skipped = 0usize;
    for &regime in &matrix.regimes {
        for &criterion in &matrix.criteria {
            for &seed in &matrix.seeds {
                let dir = cell_dir(out_dir, regime.name(), criterion.name(), seed);
                if resume && dir.join("report.json").is_file() {
                    skipped += 1;
                    continue;
                }
                let cfg = matrix.cell_config(regime, criterion, seed)?;
                let split = split_dataset(&ids, seed)?;
                let outcome = train_run(&cfg, &dataset, &split).map_err(|e| {
                    Error::Runtime(format!(
                        "matrix cell ({}, {}, {seed}) failed: {e}",
                        regime.name(),
                        criterion.name()
                    ))
                })?;
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_run_artifacts(&outcome, &dir)?;
                completed += 1;
                println!(
                    "[{}/{}] {} {} seed {}: r_squared = {:.4}, davies_bouldin = {:.4}",
                    completed + skipped,
                    matrix.regimes.len() * matrix.criteria.len() * matrix.seeds.len(),
                    regime.name(),
                    criterion.name(),
                    seed,
                    outcome.report.test.r_squared,
                    outcome.report.test.davies_bouldin
                );
            }
        }
    }
    println!("matrix complete: {completed} cells run, {skipped} resumed");
    Ok(())
}

/// Assemble the experiment matrix from a run-matrix output directory.
pub fn collect_matrix(matrix_dir: &Path) -> Result<ExperimentMatrix> {
    let text_path = matrix_dir.join("matrix.txt");
    let text = std::fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
    let config = MatrixConfig::parse(&text, &[])?;
    let mut cells = Vec::new();
    for &regime in &config.regimes {
        for &criterion in &config.criteria {
            for &seed in &config.seeds {
                let dir = cell_dir(matrix_dir, regime.name(), criterion.name(), seed);
                let report_path = dir.join("report.json");
                if !report_path.is_file() {
                    continue;
                }
                let report = TrainReport::from_json(
                    &std::fs::read_to_string(&report_path)
                        .map_err(|e| Error::io(&report_path, e))?,
                )?;
                cells.push(MatrixCell {
                    regime: regime.name().to_string(),
                    criterion: criterion.name().to_string(),
                    seed,
                    r_squared: report.test.r_squared,
                    davies_bouldin: report.test.davies_bouldin,
                    embedding_path: dir.join("embeddings.tsv"),
                });
            }
        }
    }
    Ok(ExperimentMatrix {
        regimes: config.regimes.iter().map(|r| r.name().to_string()).collect(),
        criteria: config.criteria.iter().map(|c| c.name().to_string()).collect(),
        seeds: config.seeds,
        cells,
    })
}

/// Render figures and data tables from a completed matrix directory.
pub fn cmd_report(
    matrix_dir: &Path,
    out_dir: &Path,
    perplexity: f64,
    projection_seed: u64,
) -> Result<()> {
    let matrix = collect_matrix(matrix_dir)?;
    let files = render_reports(&matrix, out_dir, perplexity, projection_seed)?;
    println!("wrote {} report files under {}", files.len(), out_dir.display());
    Ok(())
}

//! `run`: execute one configured run, or a sweep when the config has axes.
//!
//! Artifacts per run: `metrics.csv` (and `metrics.ndjson` when requested)
//! plus `summary.json` embedding the fully resolved config. Sweeps write one
//! subdirectory per cell, a cross-strategy `ranks.csv`, and a top-level
//! `summary.json`. Metric files are byte-identical across reruns of the same
//! config; only the wall-time field of the summary changes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use gossipbench_core::emit::{metrics_to_csv, write_metrics_ndjson, write_rank_csv};
use gossipbench_core::{
    rank_strategies, run_experiment_with, Dataset64, EngineError, ExperimentConfig,
    MetricsRecord64, RankReducer, RankTable, RunSummary64,
};
use rayon::prelude::*;

use crate::{resolve_out_dir, CliError, Overrides};

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment config (.json or .toml); a summary.json also works.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory (default: `$GOSSIPBENCH_OUT/<config stem>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CellOutcome {
    config: ExperimentConfig,
    run_id: String,
    records: Vec<MetricsRecord64>,
    result: Result<RunSummary64, EngineError>,
    wall_seconds: f64,
}

impl CellOutcome {
    fn failure(&self) -> Option<CliError> {
        self.result.as_ref().err().map(|e| match e {
            EngineError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        })
    }
}

fn execute_cell(config: &ExperimentConfig, dataset: &Dataset64) -> Result<CellOutcome, CliError> {
    let run_config = config.to_run_config()?;
    let run_id = run_config.resolved_run_id();
    let started = Instant::now();
    let mut records = Vec::new();
    let result = run_experiment_with(&run_config, dataset, |record| records.push(record));
    Ok(CellOutcome {
        config: config.clone(),
        run_id,
        records,
        result,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn cell_summary_json(outcome: &CellOutcome) -> serde_json::Value {
    match &outcome.result {
        Ok(summary) => {
            let mut doc = serde_json::to_value(summary).expect("serializable summary");
            doc["status"] = "ok".into();
            doc["seed"] = outcome.config.seed.into();
            doc["diverged"] = false.into();
            doc["wall_time_seconds"] = outcome.wall_seconds.into();
            doc["config"] = serde_json::to_value(&outcome.config).expect("serializable config");
            doc
        }
        Err(error) => {
            let diverged = matches!(error, EngineError::Diverged { .. });
            serde_json::json!({
                "run_id": outcome.run_id,
                "strategy": outcome.config.strategy,
                "n_workers": outcome.config.n_workers,
                "seed": outcome.config.seed,
                "status": if diverged { "diverged" } else { "error" },
                "diverged": diverged,
                "error": error.to_string(),
                "wall_time_seconds": outcome.wall_seconds,
                "config": serde_json::to_value(&outcome.config).expect("serializable config"),
            })
        }
    }
}

fn write_cell_artifacts(dir: &Path, outcome: &CellOutcome) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let emit = &outcome.config.emit;
    if emit.iter().any(|f| f == "csv") {
        let bytes = metrics_to_csv(&outcome.records).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(dir.join("metrics.csv"), bytes)?;
    }
    if emit.iter().any(|f| f == "ndjson") {
        let mut buffer = Vec::new();
        write_metrics_ndjson(&mut buffer, &outcome.records)?;
        std::fs::write(dir.join("metrics.ndjson"), buffer)?;
    }
    let summary = cell_summary_json(outcome);
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    Ok(())
}

pub fn execute(args: RunArgs) -> Result<(), CliError> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    args.overrides.apply(&mut config);
    let out_dir = resolve_out_dir(args.out.as_ref(), config.out.as_ref(), &args.config);
    let config_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    if config.is_sweep() {
        run_sweep(&config, &config_dir, &out_dir)
    } else {
        run_single(&config, &config_dir, &out_dir)
    }
}

fn run_single(
    config: &ExperimentConfig,
    config_dir: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let dataset: Dataset64 = config.load_dataset(config_dir)?;
    let outcome = execute_cell(config, &dataset)?;
    write_cell_artifacts(out_dir, &outcome)?;
    eprintln!(
        "{}: wrote {}",
        outcome.run_id,
        out_dir.join("metrics.csv").display()
    );
    match outcome.failure() {
        Some(error) => Err(error),
        None => Ok(()),
    }
}

fn run_sweep(config: &ExperimentConfig, config_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let cells = config.cells()?;
    let dataset: Dataset64 = config.load_dataset(config_dir)?;
    std::fs::create_dir_all(out_dir)?;

    // cells run in parallel; each writes only its own directory
    let outcomes: Vec<Result<CellOutcome, CliError>> = cells
        .par_iter()
        .map(|cell| {
            let outcome = execute_cell(cell, &dataset)?;
            write_cell_artifacts(&out_dir.join(&outcome.run_id), &outcome)?;
            Ok(outcome)
        })
        .collect();

    let axes = config.axes.as_ref().expect("sweep has axes");
    let strategy_count = if axes.strategies.is_empty() {
        1
    } else {
        axes.strategies.len()
    };

    // rank the strategies within every (n_workers, seed) group whose cells
    // all finished; groups are consecutive runs of `strategy_count` cells
    let mut rank_groups: Vec<(Vec<String>, RankTable)> = Vec::new();
    let mut skipped_groups: Vec<String> = Vec::new();
    for group in outcomes
        .chunks(strategy_count)
        .zip(cells.chunks(strategy_count))
    {
        let (group_outcomes, group_cells) = group;
        let label = format!(
            "n_workers={} seed={}",
            group_cells[0].n_workers, group_cells[0].seed
        );
        let all_ok = group_outcomes
            .iter()
            .all(|o| matches!(o, Ok(outcome) if outcome.result.is_ok()));
        if !all_ok || strategy_count < 2 {
            if strategy_count >= 2 {
                skipped_groups.push(label);
            }
            continue;
        }
        let streams: Vec<(String, Vec<MetricsRecord64>)> = group_outcomes
            .iter()
            .map(|o| {
                let outcome = o.as_ref().expect("checked ok");
                (
                    outcome
                        .result
                        .as_ref()
                        .expect("checked ok")
                        .strategy
                        .clone(),
                    outcome.records.clone(),
                )
            })
            .collect();
        match rank_strategies(&streams, RankReducer::MeanOverTensors) {
            Ok(table) => rank_groups.push((
                vec![
                    group_cells[0].n_workers.to_string(),
                    group_cells[0].seed.to_string(),
                ],
                table,
            )),
            Err(error) => skipped_groups.push(format!("{label}: {error}")),
        }
    }
    if !rank_groups.is_empty() {
        let refs: Vec<(Vec<String>, &RankTable)> = rank_groups
            .iter()
            .map(|(labels, table)| (labels.clone(), table))
            .collect();
        let file = std::fs::File::create(out_dir.join("ranks.csv"))?;
        write_rank_csv(file, &["n_workers", "seed"], &refs)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }

    let cell_docs: Vec<serde_json::Value> = outcomes
        .iter()
        .zip(&cells)
        .map(|(outcome, cell)| match outcome {
            Ok(outcome) => {
                let status = match &outcome.result {
                    Ok(_) => "ok",
                    Err(EngineError::Diverged { .. }) => "diverged",
                    Err(_) => "error",
                };
                let mut doc = serde_json::json!({
                    "run_id": outcome.run_id,
                    "status": status,
                });
                match &outcome.result {
                    Ok(summary) => {
                        doc["final_test_accuracy"] = summary.final_test_accuracy.into();
                        doc["final_train_loss"] = summary.final_train_loss.into();
                        doc["message_volume_per_worker"] = summary.message_volume_per_worker.into();
                    }
                    Err(error) => {
                        doc["error"] = error.to_string().into();
                    }
                }
                doc
            }
            Err(error) => serde_json::json!({
                "run_id": format!("{}-n{}-seed{}", cell.strategy, cell.n_workers, cell.seed),
                "status": "error",
                "error": error.to_string(),
            }),
        })
        .collect();
    let first_failure = outcomes
        .iter()
        .enumerate()
        .find_map(|(i, outcome)| match outcome {
            Ok(o) => o.failure().map(|e| (i, e)),
            Err(e) => Some((
                i,
                match e {
                    CliError::Config(m) => CliError::Config(m.clone()),
                    CliError::Divergence(m) => CliError::Divergence(m.clone()),
                    CliError::Io(m) => CliError::Io(m.clone()),
                },
            )),
        });
    let summary = serde_json::json!({
        "status": if first_failure.is_none() { "ok" } else { "partial" },
        "cells": cell_docs,
        "skipped_rank_groups": skipped_groups,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "config": serde_json::to_value(config).expect("serializable config"),
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
    )?;
    eprintln!(
        "sweep: {} cells, artifacts under {}",
        cells.len(),
        out_dir.display()
    );
    match first_failure {
        Some((_, error)) => Err(error),
        None => Ok(()),
    }
}

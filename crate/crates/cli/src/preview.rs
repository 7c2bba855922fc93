//! `schedule preview`: the per-epoch k / degree / lr / message-volume table
//! a run would use, computed without training.

use std::path::PathBuf;

use clap::Args;
use gossipbench_core::engine::epoch_message_volume;
use gossipbench_core::{DatasetConfig, ExperimentConfig, ModelKind, ModelSpec};

use crate::{CliError, Overrides};

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

pub fn execute(args: PreviewArgs) -> Result<(), CliError> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    args.overrides.apply(&mut config);
    let run = config.to_run_config()?;

    let config_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    // synthetic dimensions come straight from the config; csv has to be read
    let (n_samples, input_dim, n_classes) = match &config.dataset {
        DatasetConfig::Synthetic {
            n_samples,
            input_dim,
            n_classes,
            ..
        } => (*n_samples, *input_dim, *n_classes),
        DatasetConfig::Csv { .. } => {
            let dataset = config.load_dataset::<f64>(&config_dir)?;
            (dataset.len(), dataset.input_dim, dataset.n_classes)
        }
    };
    let model = ModelSpec::new(
        match config.model.kind.as_str() {
            "mlp" => ModelKind::Mlp,
            _ => ModelKind::Linear,
        },
        input_dim,
        config.model.hidden_dim,
        n_classes,
        0,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let param_len = model.param_len();

    let holdout = config.dataset.holdout_fraction();
    let train_len = n_samples - ((n_samples as f64) * holdout).round() as usize;
    let shard_size = train_len / run.n_workers;
    if shard_size == 0 || run.batch_size > shard_size {
        return Err(CliError::Config(format!(
            "batch_size {} does not fit shard size {shard_size}",
            run.batch_size
        )));
    }
    let steps = shard_size / run.batch_size;

    use std::fmt::Write;
    let mut table = String::new();
    writeln!(
        table,
        "# strategy={} n_workers={} batch_size={} steps_per_epoch={} param_len={}",
        run.strategy.name(),
        run.n_workers,
        run.batch_size,
        steps,
        param_len
    )
    .expect("write to string");
    writeln!(
        table,
        "{:>6} {:>6} {:>8} {:>14} {:>18}",
        "epoch", "k", "degree", "lr", "volume_per_worker"
    )
    .expect("write to string");
    let mut total_volume = 0.0;
    for epoch in 0..run.epochs {
        let degree = run.strategy.degree_at(run.n_workers, epoch);
        let k_column = match run.strategy.ada() {
            Some(ada) => ada.degree_at(epoch).to_string(),
            None => "-".to_string(),
        };
        let lr = run
            .schedule
            .effective_lr(epoch, run.batch_size, degree)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let volume =
            epoch_message_volume(&run.strategy, run.n_workers, epoch, param_len) * steps as f64;
        total_volume += volume;
        writeln!(
            table,
            "{epoch:>6} {k_column:>6} {degree:>8} {lr:>14.8} {volume:>18.1}"
        )
        .expect("write to string");
    }
    writeln!(
        table,
        "# total iterations={} total_volume_per_worker={total_volume:.1}",
        run.epochs * steps
    )
    .expect("write to string");
    crate::print_stdout(&table)
}

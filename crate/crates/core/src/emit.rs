//! Metric serialization: CSV (one row per iteration per tensor), NDJSON
//! (one record per line) and the rank table CSV.
//!
//! Numbers are formatted with the shortest round-trip representation, so the
//! emitted bytes are a pure function of the values.

use std::io::Write;

use serde::Serialize;

use crate::metrics::{MetricsRecord, RankTable};
use crate::num::Scalar;

/// Column order of `metrics.csv`.
pub const METRICS_CSV_HEADER: [&str; 12] = [
    "run_id",
    "strategy",
    "epoch",
    "iteration",
    "tensor",
    "mean_train_loss",
    "test_accuracy",
    "gini",
    "index_of_dispersion",
    "coefficient_of_variation",
    "quartile_coefficient",
    "degenerate",
];

/// Streaming CSV writer for metrics records.
pub struct MetricsCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsCsvWriter<W> {
    pub fn new(writer: W) -> Result<Self, csv::Error> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(METRICS_CSV_HEADER)?;
        Ok(MetricsCsvWriter { inner })
    }

    /// One row per tensor; single-worker runs have no dispersion rows, so a
    /// single row with empty tensor columns keeps the loss stream visible.
    pub fn write_record<T: Scalar>(&mut self, record: &MetricsRecord<T>) -> Result<(), csv::Error> {
        let loss = format!("{}", record.mean_train_loss);
        let accuracy = record
            .test_accuracy
            .map(|a| format!("{a}"))
            .unwrap_or_default();
        if record.tensors.is_empty() {
            self.inner.write_record([
                record.run_id.as_str(),
                record.strategy.as_str(),
                &record.epoch.to_string(),
                &record.iteration.to_string(),
                "",
                &loss,
                &accuracy,
                "",
                "",
                "",
                "",
                "",
            ])?;
            return Ok(());
        }
        for tensor in &record.tensors {
            self.inner.write_record([
                record.run_id.as_str(),
                record.strategy.as_str(),
                &record.epoch.to_string(),
                &record.iteration.to_string(),
                tensor.tensor.as_str(),
                &loss,
                &accuracy,
                &format!("{}", tensor.gini),
                &format!("{}", tensor.index_of_dispersion),
                &format!("{}", tensor.coefficient_of_variation),
                &format!("{}", tensor.quartile_coefficient),
                if tensor.degenerate { "true" } else { "false" },
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.inner.flush()?;
        Ok(self.inner.into_inner().map_err(|e| e.into_error())?)
    }
}

/// Write a full record stream as CSV bytes.
pub fn metrics_to_csv<T: Scalar>(records: &[MetricsRecord<T>]) -> Result<Vec<u8>, csv::Error> {
    let mut writer = MetricsCsvWriter::new(Vec::new())?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish()
}

/// Write records as newline-delimited JSON.
pub fn write_metrics_ndjson<T, W>(
    writer: &mut W,
    records: &[MetricsRecord<T>],
) -> std::io::Result<()>
where
    T: Scalar + Serialize,
    W: Write,
{
    for record in records {
        serde_json::to_writer(&mut *writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Rank table CSV: `iteration` plus one rank column per strategy, with
/// optional leading group columns (used by sweeps for `n_workers,seed`).
pub fn write_rank_csv<W: Write>(
    writer: W,
    group_header: &[&str],
    groups: &[(Vec<String>, &RankTable)],
) -> Result<(), csv::Error> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let Some((_, first)) = groups.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = group_header.iter().map(|s| s.to_string()).collect();
    header.push("iteration".to_string());
    header.extend(first.strategies.iter().cloned());
    csv_writer.write_record(&header)?;
    for (labels, table) in groups {
        debug_assert_eq!(table.strategies, first.strategies);
        for row in &table.rows {
            let mut record = labels.clone();
            record.push(row.iteration.to_string());
            record.extend(row.ranks.iter().map(|r| r.to_string()));
            csv_writer.write_record(&record)?;
        }
    }
    csv_writer.flush()?;
    Ok(())
}

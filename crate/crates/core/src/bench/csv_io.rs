use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BenchError, BenchmarkRecord};

/// Column order of every results file.
pub const CSV_HEADER: [&str; 14] = [
    "lock",
    "strategy",
    "scenario",
    "carriers",
    "tasks",
    "queues",
    "rep",
    "duration_s",
    "acquisitions",
    "throughput_per_s",
    "lat_ns_q50",
    "lat_ns_q95",
    "lat_ns_q99",
    "status",
];

const CLOCK_NOTE: &str = "clock=std::time::Instant (monotonic; CLOCK_MONOTONIC on Linux), read immediately before and after LOCK, read overhead not subtracted";

/// Writes `records` to `path`. With `append`, rows go after any existing
/// content and the header is only written if the file is new or empty.
///
/// A `<path>.meta` file next to the CSV documents the clock and units.
pub fn write_csv(path: &Path, records: &[BenchmarkRecord], append: bool) -> Result<(), BenchError> {
    let existing = append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)?
    } else {
        File::create(path)?
    };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !existing {
        writer.write_record(CSV_HEADER)?;
    }
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    write_meta(path)?;
    Ok(())
}

fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

fn write_meta(path: &Path) -> std::io::Result<()> {
    let mut meta = File::create(meta_path(path))?;
    writeln!(meta, "{CLOCK_NOTE}")?;
    writeln!(
        meta,
        "latency_unit=ns quantiles=nearest-rank throughput_unit=acquisitions/s"
    )?;
    writeln!(meta, "status=ok|deadlocked (deadlocked rows carry zero measurements)")
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(BenchError::Config(format!(
            "unexpected CSV header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    reader
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(BenchError::from)
}

//! Experiment CSVs: per-round metrics, wall times, acquisition scores, and
//! the per-step training log.
//!
//! Everything in `metrics.csv` and `acquisition.csv` is a pure function of
//! the configuration and seed, so identical runs produce byte-identical
//! files; wall-clock time lives in the separate `timing.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// One evaluated round of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub round: u32,
    pub n_train_views: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub mean_variance: f64,
    /// Wall time of the round in seconds; written to `timing.csv`, not to
    /// `metrics.csv`.
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str = "round,n_train_views,psnr,ssim,mean_variance";
pub const TIMING_HEADER: &str = "round,wall_time_s";
pub const ACQUISITION_HEADER: &str = "round,view_id,score,stride,rays_evaluated,selected";
pub const TRAIN_LOG_HEADER: &str = "step,loss,psnr_eval,mean_variance,wall_time_s";

/// Writes `metrics.csv` (deterministic columns only).
pub fn write_report(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.round, r.n_train_views, r.psnr, r.ssim, r.mean_variance
        )
        .unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes `timing.csv` with the wall time of each round.
pub fn write_timing(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{}", r.round, r.wall_time_s).unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads records back; wall times come from the optional timing file and
/// default to zero.
pub fn read_report(metrics_path: &Path, timing_path: Option<&Path>) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(metrics_path)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => bail!("unexpected metrics header: {other:?}"),
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            bail!("bad metrics row: {line}");
        }
        records.push(MetricRecord {
            round: cols[0].parse()?,
            n_train_views: cols[1].parse()?,
            psnr: cols[2].parse()?,
            ssim: cols[3].parse()?,
            mean_variance: cols[4].parse()?,
            wall_time_s: 0.0,
        });
    }
    if let Some(timing) = timing_path {
        let text =
            fs::read_to_string(timing).with_context(|| format!("reading {}", timing.display()))?;
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 2 {
                bail!("bad timing row: {line}");
            }
            let round: u32 = cols[0].parse()?;
            let wall: f64 = cols[1].parse()?;
            if let Some(rec) = records.iter_mut().find(|r| r.round == round) {
                rec.wall_time_s = wall;
            }
        }
    }
    Ok(records)
}

/// One scored candidate in one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionRow {
    pub round: u32,
    pub view_id: usize,
    pub score: f64,
    pub stride: u32,
    pub rays_evaluated: u64,
    pub selected: bool,
}

pub fn write_acquisition(rows: &[AcquisitionRow], path: &Path) -> Result<()> {
    let mut out = String::from(ACQUISITION_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round, r.view_id, r.score, r.stride, r.rays_evaluated, r.selected
        )
        .unwrap();
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_acquisition(path: &Path) -> Result<Vec<AcquisitionRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ACQUISITION_HEADER => {}
        other => bail!("unexpected acquisition header: {other:?}"),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            bail!("bad acquisition row: {line}");
        }
        rows.push(AcquisitionRow {
            round: cols[0].parse()?,
            view_id: cols[1].parse()?,
            score: cols[2].parse()?,
            stride: cols[3].parse()?,
            rays_evaluated: cols[4].parse()?,
            selected: cols[5].parse()?,
        });
    }
    Ok(rows)
}

/// Append-only training log writer.
pub struct TrainLogWriter {
    path: std::path::PathBuf,
    buffer: String,
}

impl TrainLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        fs::write(path, format!("{TRAIN_LOG_HEADER}\n"))?;
        Ok(TrainLogWriter {
            path: path.to_path_buf(),
            buffer: String::new(),
        })
    }

    pub fn append(
        &mut self,
        step: u64,
        loss: f64,
        psnr_eval: Option<f64>,
        mean_variance: Option<f64>,
        wall_time_s: f64,
    ) -> Result<()> {
        let psnr = psnr_eval.map(|v| v.to_string()).unwrap_or_default();
        let var = mean_variance.map(|v| v.to_string()).unwrap_or_default();
        writeln!(self.buffer, "{step},{loss},{psnr},{var},{wall_time_s}").unwrap();
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        use std::io::Write;
        let mut file = fs::OpenOptions::new().append(true).open(&self.path)?;
        file.write_all(self.buffer.as_bytes())?;
        self.buffer.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_records() -> Vec<MetricRecord> {
        vec![
            MetricRecord {
                round: 0,
                n_train_views: 2,
                psnr: 14.25,
                ssim: 0.61,
                mean_variance: 0.031,
                wall_time_s: 12.5,
            },
            MetricRecord {
                round: 1,
                n_train_views: 4,
                psnr: 16.5,
                ssim: 0.707,
                mean_variance: 0.0125,
                wall_time_s: 13.25,
            },
        ]
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_report(&[], &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
    }

    #[test]
    fn report_round_trips_and_is_byte_stable() {
        let dir = tempdir().unwrap();
        let metrics = dir.path().join("metrics.csv");
        let timing = dir.path().join("timing.csv");
        let records = sample_records();
        write_report(&records, &metrics).unwrap();
        write_timing(&records, &timing).unwrap();
        let back = read_report(&metrics, Some(&timing)).unwrap();
        assert_eq!(back, records);

        let metrics2 = dir.path().join("metrics2.csv");
        write_report(&records, &metrics2).unwrap();
        assert_eq!(
            fs::read(&metrics).unwrap(),
            fs::read(&metrics2).unwrap(),
            "same records must serialize to identical bytes"
        );
    }

    #[test]
    fn acquisition_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("acquisition.csv");
        let rows = vec![
            AcquisitionRow {
                round: 1,
                view_id: 3,
                score: 0.125,
                stride: 4,
                rays_evaluated: 256,
                selected: true,
            },
            AcquisitionRow {
                round: 1,
                view_id: 5,
                score: 0.0625,
                stride: 4,
                rays_evaluated: 256,
                selected: false,
            },
        ];
        write_acquisition(&rows, &path).unwrap();
        assert_eq!(read_acquisition(&path).unwrap(), rows);
    }

    #[test]
    fn train_log_has_expected_shape() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("train_log.csv");
        let mut log = TrainLogWriter::create(&path).unwrap();
        log.append(10, 0.5, Some(18.0), Some(0.02), 1.5).unwrap();
        log.append(20, 0.25, None, None, 3.0).unwrap();
        log.flush().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAIN_LOG_HEADER);
        assert_eq!(lines[1], "10,0.5,18,0.02,1.5");
        assert_eq!(lines[2], "20,0.25,,,3");
    }
}

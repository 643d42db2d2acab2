//! Per-epoch metrics CSV and process peak-memory reporting.
//!
//! Schema (fixed): a `# config: {json}` comment line, then the header
//! `epoch,train_loss,test_top1,test_top5,images_per_sec,peak_rss_bytes`.
//! In deterministic mode the two wall-clock-dependent columns are written as
//! 0 so identical seeded runs produce bitwise-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

pub const HEADER: &str = "epoch,train_loss,test_top1,test_top5,images_per_sec,peak_rss_bytes";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_top1: f64,
    pub test_top5: f64,
    pub images_per_sec: f64,
    pub peak_rss_bytes: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.test_top1,
            self.test_top5,
            self.images_per_sec,
            self.peak_rss_bytes
        )
    }
}

pub struct MetricsWriter {
    file: fs::File,
    pub rows: Vec<MetricsRow>,
    deterministic: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, config_json: &str, deterministic: bool) -> Result<Self> {
        let mut file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "# version: {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(file, "# config: {config_json}")?;
        writeln!(file, "{HEADER}")?;
        Ok(MetricsWriter {
            file,
            rows: Vec::new(),
            deterministic,
        })
    }

    pub fn append(&mut self, mut row: MetricsRow) -> Result<()> {
        if self.deterministic {
            row.images_per_sec = 0.0;
            row.peak_rss_bytes = 0;
        }
        writeln!(self.file, "{}", row.to_csv())?;
        self.file.flush()?;
        self.rows.push(row);
        Ok(())
    }
}

/// Peak resident set size of this process in bytes (VmHWM); 0 when the
/// platform does not expose it.
pub fn peak_rss_bytes() -> u64 {
    if let Ok(status) = fs::read_to_string("/proc/self/status") {
        for line in status.lines() {
            if let Some(rest) = line.strip_prefix("VmHWM:") {
                let kb: u64 = rest
                    .trim()
                    .trim_end_matches("kB")
                    .trim()
                    .parse()
                    .unwrap_or(0);
                return kb * 1024;
            }
        }
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&p, r#"{"seed":3}"#, false).unwrap();
        w.append(MetricsRow {
            epoch: 1,
            train_loss: 0.5,
            test_top1: 0.9,
            test_top5: 0.99,
            images_per_sec: 100.0,
            peak_rss_bytes: 1024,
        })
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# version: "));
        assert!(lines.next().unwrap().starts_with("# config: "));
        assert_eq!(lines.next().unwrap(), HEADER);
        assert_eq!(lines.next().unwrap(), "1,0.5,0.9,0.99,100,1024");
    }

    #[test]
    fn deterministic_mode_zeroes_clock_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&p, "{}", true).unwrap();
        w.append(MetricsRow {
            epoch: 1,
            train_loss: 0.25,
            test_top1: 0.5,
            test_top5: 0.75,
            images_per_sec: 123.4,
            peak_rss_bytes: 999,
        })
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().last().unwrap().ends_with(",0,0"));
    }

    #[test]
    fn peak_rss_positive_on_linux() {
        let rss = peak_rss_bytes();
        if cfg!(target_os = "linux") {
            assert!(rss > 0);
        }
    }
}

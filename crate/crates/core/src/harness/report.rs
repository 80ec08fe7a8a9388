use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::ssl::EpochRecord;

use super::experiment::{CellOutcome, MetricsReport};
use super::HarnessError;

pub const CSV_HEADER: &str = "algorithm,n_labeled,augmentation,seed,f1,precision,recall";
const FAILED: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(HarnessError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Pretty JSON with every float printed with six decimals.
struct SixDecimals<'a>(PrettyFormatter<'a>);

impl Formatter for SixDecimals<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.6}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_fixed_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SixDecimals(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report serializes");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

fn metric_cells(values: Option<[f64; 3]>) -> String {
    match values {
        Some([f1, p, r]) => format!("{f1:.6},{p:.6},{r:.6}"),
        None => [FAILED; 3].join(","),
    }
}

/// One row per cell followed by one `mean` row per group.
pub fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for group in &report.groups {
        let prefix = format!("{},{},{}", group.algorithm, group.n_labeled, group.augmentation);
        for cell in report.cells.iter().filter(|c| {
            (c.key.algorithm, c.key.n_labeled, c.key.augmentation)
                == (group.algorithm, group.n_labeled, group.augmentation)
        }) {
            let values = match &cell.outcome {
                CellOutcome::Ok { metrics, .. } => Some([metrics.f1, metrics.precision, metrics.recall]),
                CellOutcome::Failed { .. } => None,
            };
            let _ = writeln!(out, "{prefix},{},{}", cell.key.seed, metric_cells(values));
        }
        let mean = group.mean.map(|m| [m.f1, m.precision, m.recall]);
        let _ = writeln!(out, "{prefix},mean,{}", metric_cells(mean));
    }
    out
}

pub fn render_json(report: &MetricsReport) -> String {
    to_fixed_json(report)
}

pub fn render_history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,l_s,l_u,total,unlabeled_usage,val_f1,val_precision,val_recall\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.l_s, r.l_u, r.total, r.unlabeled_usage, r.val_f1, r.val_precision, r.val_recall
        );
    }
    out
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report),
    }
}

pub fn report_render(report: &MetricsReport, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, render(report, format)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::{CellKey, CellReport};
    use crate::harness::{ConfusionMatrix, Evaluation};
    use crate::ssl::{Algorithm, AugmentationSource};

    fn cell(seed: u64, f1: Option<f64>) -> CellReport {
        CellReport {
            key: CellKey {
                algorithm: Algorithm::FixMatch,
                n_labeled: 40,
                augmentation: AugmentationSource::Llm,
                seed,
            },
            outcome: match f1 {
                Some(f1) => CellOutcome::Ok {
                    metrics: Evaluation {
                        f1,
                        precision: 0.75,
                        recall: 2.0 / 3.0,
                        confusion: ConfusionMatrix {
                            tp: 6,
                            fp: 2,
                            fn_: 3,
                            tn: 9,
                        },
                    },
                    best_epoch: Some(2),
                },
                None => CellOutcome::Failed {
                    error: "training diverged at epoch 1, batch 0".into(),
                },
            },
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(render_csv(&MetricsReport::default()), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn single_cell_rows() {
        let report = MetricsReport::from_cells(vec![cell(1, Some(0.8))]);
        let csv = render_csv(&report);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[1], "FixMatch,40,llm,1,0.800000,0.750000,0.666667");
        assert_eq!(rows[2], "FixMatch,40,llm,mean,0.800000,0.750000,0.666667");
    }

    #[test]
    fn failed_cells_are_marked() {
        let report = MetricsReport::from_cells(vec![cell(1, Some(0.8)), cell(2, None)]);
        let csv = render_csv(&report);
        assert!(csv.contains("FixMatch,40,llm,2,FAILED,FAILED,FAILED"));
        assert!(csv.contains("FixMatch,40,llm,mean,0.800000"));
        let json = render_json(&report);
        assert!(json.contains("\"status\": \"failed\""));
        assert!(json.contains("\"failed\": 1"));
    }

    #[test]
    fn json_uses_six_decimals_and_round_trips() {
        let report = MetricsReport::from_cells(vec![cell(1, Some(0.8)), cell(2, Some(0.7))]);
        let json = render_json(&report);
        assert!(json.contains("\"f1\": 0.800000"), "{json}");
        assert!(json.contains("\"tp\": 6"));
        assert!(json.contains("\"fn\": 3"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.cells.len(), 2);
        assert_eq!(back.groups[0].cells, 2);
        assert_eq!(render_json(&back), json);
    }

    #[test]
    fn rendering_is_byte_identical() {
        let report = MetricsReport::from_cells(vec![cell(3, Some(0.1234567)), cell(1, None)]);
        let dir = tempfile::tempdir().unwrap();
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            report_render(&report, format, &a).unwrap();
            report_render(&report, format, &b).unwrap();
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let report = MetricsReport::default();
        let err = report_render(&report, ReportFormat::Csv, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
    }
}

//! Report files. Contents depend only on the results, so reruns with the
//! same config and seeds are byte-identical.

use std::path::{Path, PathBuf};

use multictx_core::eval::{self, AblationReport, Aggregate, Metrics, RunReport};
use serde::Serialize;

use crate::error::Result;
use crate::formats::write_text;

#[derive(Serialize)]
struct AggregateJson {
    precision: [f64; 2],
    recall: [f64; 2],
    f1: [f64; 2],
    seeds: usize,
}

impl From<&Aggregate> for AggregateJson {
    fn from(a: &Aggregate) -> Self {
        AggregateJson {
            precision: [a.precision.0, a.precision.1],
            recall: [a.recall.0, a.recall.1],
            f1: [a.f1.0, a.f1.1],
            seeds: a.seeds,
        }
    }
}

#[derive(Serialize)]
struct MetricsJson {
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
}

impl From<&Metrics> for MetricsJson {
    fn from(m: &Metrics) -> Self {
        MetricsJson {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
        }
    }
}

#[derive(Serialize)]
struct CellJson {
    fold: usize,
    seed: u64,
    gat: MetricsJson,
    probe: Option<MetricsJson>,
    without_cse: Option<MetricsJson>,
    best_epoch: Option<usize>,
    epochs_run: usize,
}

#[derive(Serialize)]
struct RunJson {
    kept: String,
    gat: AggregateJson,
    probe: Option<AggregateJson>,
    without_cse: Option<AggregateJson>,
    cells: Vec<CellJson>,
}

impl From<&RunReport> for RunJson {
    fn from(r: &RunReport) -> Self {
        RunJson {
            kept: r.kept.to_string(),
            gat: (&r.gat).into(),
            probe: r.probe.as_ref().map(Into::into),
            without_cse: r.without_cse.as_ref().map(Into::into),
            cells: r
                .cells
                .iter()
                .map(|c| CellJson {
                    fold: c.fold,
                    seed: c.seed,
                    gat: (&c.gat).into(),
                    probe: c.probe.as_ref().map(Into::into),
                    without_cse: c.without_cse.as_ref().map(Into::into),
                    best_epoch: c.best_epoch,
                    epochs_run: c.epochs_run,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct ReportJson {
    fingerprint: String,
    main: RunJson,
    ablation: Vec<RunJson>,
}

/// Paths written by [`write_reports`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub table2: PathBuf,
    pub table3: Option<PathBuf>,
    pub cells: PathBuf,
    pub json: PathBuf,
}

/// Writes `table2.txt`, `cells.tsv`, `report.json` and, with an ablation,
/// `table3.txt` into `dir`.
pub fn write_reports(dir: &Path, main: &RunReport, ablation: Option<&AblationReport>) -> Result<ReportFiles> {
    let files = ReportFiles {
        table2: dir.join("table2.txt"),
        table3: ablation.map(|_| dir.join("table3.txt")),
        cells: dir.join("cells.tsv"),
        json: dir.join("report.json"),
    };
    let header = format!("config {}\n\n", main.fingerprint);
    write_text(&files.table2, &(header.clone() + &eval::render_table2(main)))?;
    let mut reports = vec![main];
    if let (Some(a), Some(p)) = (ablation, &files.table3) {
        write_text(p, &(header + &eval::render_table3(a)))?;
        reports.extend(a.rows.iter());
    }
    write_text(&files.cells, &eval::render_cells_tsv(&reports))?;
    let json = ReportJson {
        fingerprint: main.fingerprint.clone(),
        main: main.into(),
        ablation: ablation.map_or_else(Vec::new, |a| a.rows.iter().map(Into::into).collect()),
    };
    write_text(&files.json, &(serde_json::to_string_pretty(&json).expect("report serialises") + "\n"))?;
    Ok(files)
}

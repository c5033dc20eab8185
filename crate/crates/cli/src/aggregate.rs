use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prer_core::eval::mean_std;
use prer_core::pipeline::Strategy;
use serde::{Deserialize, Serialize};

use crate::error::{io, Result};
use crate::record::RunRecord;

pub const SUMMARY_FILE: &str = "summary.csv";

/// One row of the summary table: a strategy on a dataset over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub dataset: String,
    pub seed_count: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Empty when no record of the cell has a BWT (single-task streams).
    pub bwt_mean: Option<f64>,
    pub bwt_std: Option<f64>,
    pub memory_floats: u64,
}

/// Mean and population std per (strategy, dataset). The output does not
/// depend on the order of `records`.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Strategy, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.strategy, r.dataset.as_str())).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((strategy, dataset), mut rs)| {
            rs.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.config_hash.cmp(&b.config_hash)));
            if rs.windows(2).any(|w| w[0].config_hash != w[1].config_hash) {
                log::warn!("{strategy} on {dataset}: records from different configurations are pooled");
            }
            let (accuracy_mean, accuracy_std) = sorted_mean_std(rs.iter().map(|r| r.accuracy));
            let bwts: Vec<f64> = rs.iter().filter_map(|r| r.bwt).collect();
            let (bwt_mean, bwt_std) = if bwts.is_empty() {
                (None, None)
            } else {
                let (m, s) = sorted_mean_std(bwts.into_iter());
                (Some(m), Some(s))
            };
            SummaryRow {
                strategy,
                dataset: dataset.to_string(),
                seed_count: rs.len(),
                accuracy_mean,
                accuracy_std,
                bwt_mean,
                bwt_std,
                memory_floats: rs.iter().map(|r| r.memory_floats).max().unwrap_or(0),
            }
        })
        .collect()
}

/// Sorting first makes the floating-point sums order-independent.
fn sorted_mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    mean_std(&v)
}

/// Every run record directly inside `dir`, in file-name order.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| RunRecord::load(p)).collect()
}

pub fn write_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Plain-text table with `mean ± std` cells.
pub fn render(rows: &[SummaryRow]) -> String {
    let w = rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<8} {:<w$} {:>5} {:>16} {:>16} {:>12}\n",
        "strategy", "dataset", "seeds", "accuracy", "bwt", "memory"
    );
    for r in rows {
        let bwt = match (r.bwt_mean, r.bwt_std) {
            (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
            _ => "-".into(),
        };
        out += &format!(
            "{:<8} {:<w$} {:>5} {:>16} {:>16} {:>12}\n",
            r.strategy.name(),
            r.dataset,
            r.seed_count,
            format!("{:.2} ± {:.2}", r.accuracy_mean, r.accuracy_std),
            bwt,
            r.memory_floats
        );
    }
    out
}

//! Report assembly and serialization (JSON document plus flat CSV table).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{
    run_grid, run_length_sweep, CellReport, CellStatus, ExperimentConfig, LengthRow, SummaryRow,
};
use crate::error::Result;

pub const TOOL_NAME: &str = "lookat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_sweep: Option<Vec<LengthRow>>,
    pub failed_cells: usize,
}

impl ExperimentReport {
    pub fn has_failures(&self) -> bool {
        self.failed_cells > 0
            || self
                .length_sweep
                .as_ref()
                .is_some_and(|rows| rows.iter().any(|r| !r.failed_inputs.is_empty()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Summary rows in the column order of the standard comparison table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,comp,mem_bytes,packed_bytes,codebook_bytes,cosine_sim,cosine_sim_std,\
             kl_div,kl_div_std,spearman_rho,spearman_rho_std,top5_acc,top5_acc_std,samples\n",
        );
        for row in &self.summary {
            let (s, m) = (&row.storage, &row.metrics);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                row.method,
                s.ratio,
                s.bytes_per_token,
                s.packed_bytes_per_token,
                s.codebook_bytes,
                m.cosine_sim,
                m.cosine_sim_std,
                m.kl_div,
                m.kl_div_std,
                m.spearman_rho,
                m.spearman_rho_std,
                m.top5_acc,
                m.top5_acc_std,
                m.samples
            );
        }
        if let Some(rows) = &self.length_sweep {
            out.push_str("\nseq_len,method,cosine_sim,cosine_sim_std,kl_div,kl_div_std,spearman_rho,spearman_rho_std\n");
            for r in rows {
                if let Some(m) = &r.metrics {
                    let _ = writeln!(
                        out,
                        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                        r.seq_len,
                        r.method,
                        m.cosine_sim,
                        m.cosine_sim_std,
                        m.kl_div,
                        m.kl_div_std,
                        m.spearman_rho,
                        m.spearman_rho_std
                    );
                }
            }
        }
        out
    }
}

/// Runs the method grid and, when `seq_lengths` is set, the length sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (cells, summary) = run_grid(config)?;
    let length_sweep = match &config.seq_lengths {
        Some(_) => Some(run_length_sweep(config)?),
        None => None,
    };
    let failed_cells = cells
        .iter()
        .filter(|c| c.status == CellStatus::Error)
        .count();
    Ok(ExperimentReport {
        tool: TOOL_NAME.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        cells,
        summary,
        length_sweep,
        failed_cells,
    })
}

/// CSV sibling of a report path.
pub fn csv_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

/// Writes the JSON report to `path` and the CSV projection next to it.
pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, report.to_json()?)?;
    fs::write(csv_path(path), report.to_csv())?;
    Ok(())
}

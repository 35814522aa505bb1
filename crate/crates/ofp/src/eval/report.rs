//! Machine-readable evaluation reports: JSON and CSV always, an optional
//! SVG scatter of generated vs expert action projections.
//!
//! CSV column order is fixed and documented here:
//! `nfe,warm,energy_distance,success_rate,mean_env_steps,smoothness,interchunk_jump,nfe_total,wall_ms_per_chunk`
//! with empty fields for metrics a task does not produce.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::VerifyCheck;
use crate::error::Result;

/// One `(NFE, warm)` grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub nfe: usize,
    pub warm: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_env_steps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smoothness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interchunk_jump: Option<f64>,
    pub nfe_total: u64,
    /// Present only when timing was explicitly requested; wall time is
    /// nondeterministic and kept out of reproducible reports.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms_per_chunk: Option<f64>,
}

/// Evaluation report. Every metric is traceable to the seed and config
/// hash it was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub task_id: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub cells: Vec<EvalCell>,
    #[serde(default)]
    pub checks: Vec<VerifyCheck>,
}

impl Report {
    pub fn new(task_id: &str, seed: u64, config_hash: String, cells: Vec<EvalCell>) -> Self {
        let run_id = format!("{task_id}-{}-s{seed}", &config_hash[..12.min(config_hash.len())]);
        Report {
            run_id,
            task_id: task_id.to_string(),
            config_hash,
            seed,
            metrics: BTreeMap::new(),
            cells,
            checks: Vec::new(),
        }
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "nfe,warm,energy_distance,success_rate,mean_env_steps,smoothness,interchunk_jump,nfe_total,wall_ms_per_chunk\n",
        );
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.nfe,
                c.warm,
                fmt(&c.energy_distance),
                fmt(&c.success_rate),
                fmt(&c.mean_env_steps),
                fmt(&c.smoothness),
                fmt(&c.interchunk_jump),
                c.nfe_total,
                fmt(&c.wall_ms_per_chunk),
            ));
        }
        out
    }
}

/// 2-D projections of generated and expert samples for the scatter plot.
#[derive(Debug, Clone, Default)]
pub struct ScatterData {
    pub generated: Vec<[f64; 2]>,
    pub expert: Vec<[f64; 2]>,
}

impl ScatterData {
    /// One `<circle>` element per point: expert in blue, generated in red.
    pub fn to_svg(&self) -> String {
        let size = 480.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in self.expert.iter().chain(self.generated.iter()) {
            for v in p {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            lo = -1.0;
            hi = 1.0;
        }
        let pad = 0.08 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let map = |v: f64| (v - lo) / (hi - lo) * size;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
             <rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"
        );
        for p in &self.expert {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"#1f77b4\" fill-opacity=\"0.55\"/>\n",
                map(p[0]),
                size - map(p[1])
            ));
        }
        for p in &self.generated {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"#d62728\" fill-opacity=\"0.55\"/>\n",
                map(p[0]),
                size - map(p[1])
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Write `report.json` and `report.csv` (always) plus `scatter.svg` when
/// scatter data is supplied. Returns the written paths.
pub fn emit_report(
    report: &Report,
    dir: &Path,
    scatter: Option<&ScatterData>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, report.to_json()?)?;
    written.push(json_path);
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    written.push(csv_path);
    if let Some(sc) = scatter {
        let svg_path = dir.join("scatter.svg");
        std::fs::write(&svg_path, sc.to_svg())?;
        written.push(svg_path);
    }
    Ok(written)
}

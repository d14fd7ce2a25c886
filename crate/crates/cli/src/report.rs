//! Report bundle: `report.json` plus the per-task artifacts.

use std::path::Path;

use serde_json::{json, Value};

use crate::tasks::Artifact;

pub struct TaskRecord {
    pub name: String,
    pub kind: &'static str,
    pub gating: bool,
    /// `pass`, `fail` or `error`.
    pub status: &'static str,
    pub error: Option<String>,
    pub result: Value,
    pub artifacts: Vec<Artifact>,
}

pub struct Report {
    pub scenario: Option<String>,
    pub seed: u64,
    pub tol: f64,
    pub force: bool,
    pub tasks: Vec<TaskRecord>,
}

impl Report {
    pub fn gating_failures(&self) -> Vec<&str> {
        self.tasks.iter().filter(|t| t.gating && t.status == "fail").map(|t| t.name.as_str()).collect()
    }

    pub fn errors(&self) -> Vec<&str> {
        self.tasks.iter().filter(|t| t.status == "error").map(|t| t.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Value {
        let tasks: Vec<Value> = self
            .tasks
            .iter()
            .map(|t| {
                let mut v = json!({
                    "name": t.name,
                    "kind": t.kind,
                    "gating": t.gating,
                    "status": t.status,
                    "artifacts": t.artifacts.iter().map(|a| a.file.clone()).collect::<Vec<_>>(),
                    "result": t.result,
                });
                if let Some(e) = &t.error {
                    v["error"] = json!(e);
                }
                v
            })
            .collect();
        json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "tol": self.tol,
            "force": self.force,
            "gating_failures": self.gating_failures(),
            "errors": self.errors(),
            "tasks": tasks,
        })
    }
}

/// Writes `report.json` and all artifacts under `dir`.
pub fn emit_plotdata(report: &Report, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(&report.to_json()).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join("report.json"), text)?;
    for t in &report.tasks {
        for a in &t.artifacts {
            std::fs::write(dir.join(&a.file), &a.bytes)?;
        }
    }
    Ok(())
}

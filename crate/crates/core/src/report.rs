//! Scenario reports: a stable JSON document plus a markdown rendering.
//!
//! Reports are byte-stable: the same scenario, seed, and platform must
//! serialize to identical JSON. Everything that feeds a report is
//! deterministic except `wall_time_stats`, which carries real wall-clock
//! measurements; determinism comparisons strip it first (see
//! [`ScenarioReport::without_wall_time`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::auth::{AuthProperty, CellProvenance, Mechanism, PropertyMatrix};
use crate::sdk::PublishOutcome;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One trial, compressed to what the tables need. Every field is always
/// serialized (absent values as null) so reports diff cleanly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDigest {
    pub trial: u32,
    pub accepted: bool,
    pub attributed_package: Option<String>,
    pub attributed_client: Option<String>,
    pub layer_rejected: Option<String>,
    pub resolved_caller: Option<String>,
    pub detail: String,
}

impl TrialDigest {
    pub fn from_outcome(trial: u32, outcome: &PublishOutcome, detail: impl Into<String>) -> Self {
        Self {
            trial,
            accepted: outcome.accepted,
            attributed_package: outcome
                .attributed_partner
                .as_ref()
                .map(|a| a.package_name.clone()),
            attributed_client: outcome.attributed_partner.as_ref().map(|a| a.client_id.clone()),
            layer_rejected: outcome.layer_rejected.map(|l| format!("{l:?}")),
            resolved_caller: outcome.resolved_caller.clone(),
            detail: detail.into(),
        }
    }
}

/// Wall-clock measurements in integer nanoseconds. The only
/// nondeterministic part of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallTimeStats {
    pub calls: u64,
    pub mean_nanos: u64,
    pub min_nanos: u64,
    pub max_nanos: u64,
    pub total_nanos: u64,
}

impl WallTimeStats {
    pub fn from_samples(samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let total: u64 = samples.iter().sum();
        Some(Self {
            calls: samples.len() as u64,
            mean_nanos: total / samples.len() as u64,
            min_nanos: *samples.iter().min().unwrap(),
            max_nanos: *samples.iter().max().unwrap(),
            total_nanos: total,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub name: String,
    pub trials: u32,
    pub seed: u64,
    pub platform: String,
    /// Scenario-defined headline count; `details["success_criterion"]`
    /// says what one success means for this scenario.
    pub successes: u32,
    pub per_trial: Vec<TrialDigest>,
    pub matrix: Option<PropertyMatrix>,
    pub wall_time_stats: Option<WallTimeStats>,
    pub details: BTreeMap<String, String>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// The report with wall-clock data removed: the part that must be
    /// bitwise identical across runs with the same seed.
    pub fn without_wall_time(&self) -> Self {
        Self { wall_time_stats: None, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Markdown rendering
// ---------------------------------------------------------------------------

fn opt(value: &Option<String>) -> &str {
    value.as_deref().unwrap_or("-")
}

/// Percentage as an integer string; zero trials render as "n/a".
pub fn success_rate(successes: u32, trials: u32) -> String {
    if trials == 0 {
        "n/a".to_string()
    } else {
        format!("{}%", (successes as u64 * 100) / trials as u64)
    }
}

pub fn render_matrix_markdown(matrix: &PropertyMatrix) -> String {
    let mut out = String::new();
    out.push_str("| Mechanism |");
    for property in AuthProperty::ALL {
        out.push_str(&format!(" {} |", property.display_name()));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in AuthProperty::ALL {
        out.push_str("---|");
    }
    out.push('\n');
    for mechanism in Mechanism::ALL {
        out.push_str(&format!("| {} |", mechanism.display_name()));
        for property in AuthProperty::ALL {
            match matrix.cell(mechanism, property) {
                Some(cell) => {
                    let tag = match cell.provenance {
                        CellProvenance::Scenario => "S",
                        CellProvenance::Analytic => "A",
                    };
                    out.push_str(&format!(" {} [{}] |", cell.mark.glyph(), tag));
                }
                None => out.push_str(" ? |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\n[S] = observed by an executed scenario, [A] = analytic.\n");
    out
}

pub fn render_markdown(report: &ScenarioReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {}\n\n", report.name));
    out.push_str("| Field | Value |\n|---|---|\n");
    out.push_str(&format!("| trials | {} |\n", report.trials));
    out.push_str(&format!("| seed | {} |\n", report.seed));
    out.push_str(&format!("| platform | {} |\n", report.platform));
    out.push_str(&format!(
        "| successes | {} ({}) |\n",
        report.successes,
        success_rate(report.successes, report.trials)
    ));

    if !report.details.is_empty() {
        out.push_str("\n## Details\n\n| Key | Value |\n|---|---|\n");
        for (key, value) in &report.details {
            out.push_str(&format!("| {key} | {value} |\n"));
        }
    }

    if let Some(matrix) = &report.matrix {
        out.push_str("\n## Property matrix\n\n");
        out.push_str(&render_matrix_markdown(matrix));
    }

    if let Some(stats) = &report.wall_time_stats {
        out.push_str("\n## Verification timing (nanoseconds)\n\n");
        out.push_str("| Calls | Mean | Min | Max | Total |\n|---|---|---|---|---|\n");
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            stats.calls, stats.mean_nanos, stats.min_nanos, stats.max_nanos, stats.total_nanos
        ));
    }

    if !report.per_trial.is_empty() {
        out.push_str("\n## Trials\n\n");
        out.push_str(
            "| # | Accepted | Attributed package | Attributed client | Layer rejected | Resolved caller | Detail |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|\n");
        for t in &report.per_trial {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                t.trial,
                t.accepted,
                opt(&t.attributed_package),
                opt(&t.attributed_client),
                opt(&t.layer_rejected),
                opt(&t.resolved_caller),
                t.detail
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

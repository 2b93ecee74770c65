//! Per-client report payloads and the aggregated data-readiness report.
//!
//! A payload carries only aggregates: metric values, loop traces, class
//! counts, fixed-bin histograms and 2-D PCA projections of a bounded
//! sample. Its size does not grow with the number of rows.

mod exact;
mod html;
mod pca;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{class_counts, standard_metrics, MetricValue};
use crate::readiness::{OutcomeSummary, ReadinessStatus};
use crate::table::{Column, DataTable};

pub use exact::ExactSum;
pub use html::render_html;
pub use pca::{
    fit_pca, local_moments, project_sample, sample_rows, symmetric_eigen, Moments, PcaModel,
    DEFAULT_SAMPLE_SIZE,
};

pub const HISTOGRAM_BINS: usize = 20;
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_HTML: &str = "report.html";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub column: String,
    /// `counts.len() + 1` equal-width edges over the local min and max.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub missing: u64,
}

/// Equal-width histogram of a numeric column. A constant column gets a unit
/// wide range centred on its value.
pub fn histogram(column: &Column, bins: usize) -> Option<Histogram> {
    let values = column.numeric_values()?;
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let missing = (values.len() - present.len()) as u64;
    if present.is_empty() || bins == 0 {
        return Some(Histogram {
            column: column.name().to_string(),
            edges: Vec::new(),
            counts: Vec::new(),
            missing,
        });
    }
    let mut lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for v in present {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    Some(Histogram {
        column: column.name().to_string(),
        edges,
        counts,
        missing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReportPayload {
    pub client_id: String,
    pub n_rows: usize,
    pub standard_metrics: Vec<MetricValue>,
    pub outcomes: Vec<OutcomeSummary>,
    pub class_histogram: BTreeMap<String, u64>,
    pub distribution_histograms: Vec<Histogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_points: Option<Vec<[f64; 2]>>,
}

/// Longest histogram a payload may carry.
pub const MAX_HISTOGRAM_BINS: usize = 1000;

impl ClientReportPayload {
    /// Structural checks for a payload received from `client_id`.
    pub fn check(&self, client_id: &str, max_points: usize) -> std::result::Result<(), String> {
        if self.client_id != client_id {
            return Err(format!("payload names client `{}`", self.client_id));
        }
        for o in &self.outcomes {
            if o.client_id != client_id {
                return Err(format!(
                    "outcome of module `{}` names client `{}`",
                    o.module_id, o.client_id
                ));
            }
            if o.trace.is_empty() {
                return Err(format!(
                    "outcome of module `{}` has an empty trace",
                    o.module_id
                ));
            }
        }
        for h in &self.distribution_histograms {
            let shape_ok = if h.counts.is_empty() {
                h.edges.is_empty()
            } else {
                h.edges.len() == h.counts.len() + 1
            };
            if !shape_ok || h.counts.len() > MAX_HISTOGRAM_BINS {
                return Err(format!("histogram of `{}` is malformed", h.column));
            }
        }
        if self
            .pca_points
            .as_ref()
            .is_some_and(|p| p.len() > max_points)
        {
            return Err(format!("more than {max_points} PCA points"));
        }
        Ok(())
    }
}

/// Builds a payload describing `table` as the client received it, plus the
/// traces of the modules run on it.
pub fn build_payload(
    table: &DataTable,
    outcomes: Vec<OutcomeSummary>,
    histogram_columns: &[String],
    pca_points: Option<Vec<[f64; 2]>>,
) -> Result<ClientReportPayload> {
    let class_histogram = match &table.meta().label_column {
        Some(_) => class_counts(table)?
            .into_iter()
            .map(|(k, v)| (k, v as u64))
            .collect(),
        None => BTreeMap::new(),
    };
    let distribution_histograms = histogram_columns
        .iter()
        .map(|name| {
            histogram(table.require_column(name)?, HISTOGRAM_BINS)
                .ok_or_else(|| Error::Schema(format!("histogram column `{name}` is not numeric")))
        })
        .collect::<Result<_>>()?;
    Ok(ClientReportPayload {
        client_id: table.meta().client_id.clone(),
        n_rows: table.n_rows(),
        standard_metrics: standard_metrics(table),
        outcomes,
        class_histogram,
        distribution_histograms,
        pca_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientStatus {
    Reported,
    Absent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: String,
    pub status: ClientStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ClientReportPayload>,
}

impl ClientEntry {
    pub fn reported(payload: ClientReportPayload) -> Self {
        ClientEntry {
            client_id: payload.client_id.clone(),
            status: ClientStatus::Reported,
            reason: None,
            payload: Some(payload),
        }
    }

    pub fn absent(client_id: impl Into<String>, reason: impl Into<String>) -> Self {
        ClientEntry {
            client_id: client_id.into(),
            status: ClientStatus::Absent,
            reason: Some(reason.into()),
            payload: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CombinedPca {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PcaModel>,
    /// Why no model was fitted, when there is none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub ready: usize,
    pub flagged: usize,
    pub degenerate: usize,
    pub absent_clients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrReport {
    pub experiment_id: String,
    pub generated_at: String,
    pub clients: Vec<ClientEntry>,
    pub combined_pca: CombinedPca,
    pub verdicts: VerdictCounts,
}

pub fn verdict_counts(clients: &[ClientEntry]) -> VerdictCounts {
    let mut v = VerdictCounts::default();
    for c in clients {
        let Some(p) = &c.payload else {
            v.absent_clients += 1;
            continue;
        };
        for o in &p.outcomes {
            match o.final_status {
                ReadinessStatus::Ready => v.ready += 1,
                ReadinessStatus::Flagged => v.flagged += 1,
                ReadinessStatus::Degenerate => v.degenerate += 1,
            }
        }
    }
    v
}

/// Assembles the report. `clients` keeps the experiment's client order.
pub fn render_report(
    experiment_id: impl Into<String>,
    generated_at: impl Into<String>,
    clients: Vec<ClientEntry>,
    combined_pca: CombinedPca,
) -> Result<DrReport> {
    if clients.is_empty() {
        return Err(Error::EmptyInput("report needs at least one client".into()));
    }
    Ok(DrReport {
        experiment_id: experiment_id.into(),
        generated_at: generated_at.into(),
        verdicts: verdict_counts(&clients),
        clients,
        combined_pca,
    })
}

impl DrReport {
    pub fn html(&self) -> String {
        render_html(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<DrReport> {
        let report: DrReport = serde_json::from_str(text)?;
        report.check().map_err(Error::Parse)?;
        Ok(report)
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        for c in &self.clients {
            match (c.status, &c.payload) {
                (ClientStatus::Reported, Some(p)) => p.check(&c.client_id, usize::MAX)?,
                (ClientStatus::Absent, None) => {}
                _ => return Err(format!("client `{}` has inconsistent status", c.client_id)),
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_JSON), self.to_json()?)?;
        fs::write(dir.join(REPORT_HTML), self.html())?;
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub metrics: MetricsReport,
    /// Seconds per image, when measured.
    pub sec_per_image: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub efficiency: Option<f64>,
}

/// CSV with columns `name,precision,recall,f1,efficiency`.
pub fn report_table(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Ok("name,precision,recall,f1,efficiency\n".into());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(ReportRecord {
            name: r.name.clone(),
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
            efficiency: r.sec_per_image,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_report_table(text: &str) -> Result<Vec<ReportRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

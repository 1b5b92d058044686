use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Distance, DistanceMatrices};
use crate::error::Result;
use crate::geometry::Point;

/// Header note attached to every report that contains ECD.
pub const ECD_NOTE: &str = "ECD is |E_cross - E_expected| over the directed k-NN graph of G and R combined; \
E_expected assumes random mixing of the two labels. This is one reading of the edge-count test, not a \
published formula.";

/// One metric value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// Pairwise distance the metric is built on; `None` for TMD-style
    /// metrics with a fixed distance.
    pub distance: Option<Distance>,
    pub value: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    /// Neighbour count for graph metrics.
    pub k: Option<usize>,
    /// Points resampled per shape.
    pub points: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub notes: Vec<String>,
    pub metrics: Vec<MetricReport>,
}

impl EvaluationReport {
    pub fn get(&self, metric: &str, distance: Option<Distance>) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.metric == metric && m.distance == distance)
            .map(|m| m.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rows per distance with columns MMD (×10³), COV (%), 1-NNA (%) and ECD.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(out, "{:<6} {:>12} {:>9} {:>10} {:>10}", "", "MMD(x1e3)", "COV(%)", "1-NNA(%)", "ECD");
        for d in Distance::ALL {
            let cell = |m: &str, scale: f64, prec: usize| match self.get(m, Some(d)) {
                Some(v) => format!("{:.*}", prec, v * scale),
                None => "-".to_string(),
            };
            if self.metrics.iter().all(|m| m.distance != Some(d)) {
                continue;
            }
            let _ = writeln!(
                out,
                "{:<6} {:>12} {:>9} {:>10} {:>10}",
                d.label(),
                cell("mmd", 1e3, 3),
                cell("cov", 100.0, 2),
                cell("1-nna", 100.0, 2),
                cell("ecd", 1.0, 2)
            );
        }
        for m in self.metrics.iter().filter(|m| m.distance.is_none()) {
            let _ = writeln!(out, "{:<6} {:.6}", m.metric.to_uppercase(), m.value);
        }
        out
    }
}

/// MMD, COV, 1-NNA and ECD of `generated` against `reference` under each
/// requested distance.
pub fn evaluate_sets(
    generated: &[Vec<Point>],
    reference: &[Vec<Point>],
    distances: &[Distance],
    k: usize,
    points: Option<usize>,
) -> Result<EvaluationReport> {
    let mut report = EvaluationReport {
        notes: vec![ECD_NOTE.to_string()],
        metrics: Vec::new(),
    };
    for &d in distances {
        let m = DistanceMatrices::compute(generated, reference, d)?;
        let entry = |metric: &str, value: f64, k: Option<usize>| MetricReport {
            metric: metric.to_string(),
            distance: Some(d),
            value,
            n_generated: generated.len(),
            n_reference: reference.len(),
            k,
            points,
        };
        report.metrics.push(entry("mmd", m.mmd(), None));
        report.metrics.push(entry("cov", m.cov(), None));
        report.metrics.push(entry("1-nna", m.one_nna(), None));
        report.metrics.push(entry("ecd", m.ecd(k)?, Some(k)));
    }
    Ok(report)
}

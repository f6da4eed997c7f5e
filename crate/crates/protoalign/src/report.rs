//! Versioned JSON reports and plot-ready CSV tables.

use serde::Serialize;
use serde_json::Value;

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

/// Every command's machine-readable result. Wall time is kept out of it so
/// that reruns with the same config produce identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub metrics: Value,
}

impl Report {
    pub fn new<C: Serialize, M: Serialize>(
        command: &str,
        config: &C,
        seed: u64,
        metrics: &M,
    ) -> serde_json::Result<Self> {
        Ok(Report {
            report_version: REPORT_VERSION,
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            metrics: serde_json::to_value(metrics)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub command: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Csv {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|s| s.to_string()).collect();
        assert_eq!(row.len(), self.header.len(), "csv row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| escape(c)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Formats an optional number as a CSV cell, empty when absent.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_escapes() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(["x,y", "plain"]);
        c.push(["q\"t", ""]);
        assert_eq!(c.render(), "a,b\n\"x,y\",plain\n\"q\"\"t\",\n");
    }

    #[test]
    fn report_shape() {
        let r = Report::new("eval mnn", &serde_json::json!({"k": [3]}), 7, &serde_json::json!({"m": 0.5})).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"report_version":1,"command":"eval mnn","config":{"k":[3]},"seed":7,"metrics":{"m":0.5}}"#
        );
    }
}

//! The document every subcommand produces, and its three renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: Vec<String>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch; left out under `--no-timestamp`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub command: Vec<String>,
    pub parameters: Map<String, Value>,
    pub summary: Map<String, Value>,
    pub tables: Vec<Table>,
    pub provenance: Provenance,
}

impl ResultsDocument {
    pub fn new(command: Vec<String>, parameters: Map<String, Value>) -> Self {
        Self {
            command,
            parameters,
            summary: Map::new(),
            tables: Vec::new(),
            provenance: Provenance { version: env!("CARGO_PKG_VERSION").into(), seed: None, timestamp: None },
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(value).expect("serializable summary value"));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite numbers serialize")
    }

    /// One block per table: a `# name` line, a header, then rows at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, table) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# {}", table.name);
            let _ = writeln!(out, "{}", table.columns.join(","));
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
        out
    }

    pub fn to_human(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.summary {
            let _ = writeln!(out, "{key}: {}", human_value(value));
        }
        for table in &self.tables {
            if !out.is_empty() {
                out.push('\n');
            }
            let cells: Vec<Vec<String>> =
                table.rows.iter().map(|r| r.iter().map(|&x| human_number(x)).collect()).collect();
            let widths: Vec<usize> = (0..table.columns.len())
                .map(|j| cells.iter().map(|r| r[j].len()).chain([table.columns[j].len()]).max().unwrap_or(0))
                .collect();
            let _ = writeln!(out, "[{}]", table.name);
            let line = |items: &[String]| -> String {
                items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ")
            };
            let _ = writeln!(out, "{}", line(&table.columns));
            for row in &cells {
                let _ = writeln!(out, "{}", line(row));
            }
        }
        out
    }
}

fn human_value(value: &Value) -> String {
    match value {
        Value::Number(n) => n.as_f64().map_or_else(
            || n.to_string(),
            |x| {
                if n.is_f64() {
                    human_number(x)
                } else {
                    n.to_string()
                }
            },
        ),
        Value::String(s) => s.clone(),
        Value::Array(items) => {
            format!("[{}]", items.iter().map(human_value).collect::<Vec<_>>().join(", "))
        }
        Value::Object(map) => {
            let parts: Vec<String> = map.iter().map(|(k, v)| format!("{k}={}", human_value(v))).collect();
            format!("{{{}}}", parts.join(", "))
        }
        other => other.to_string(),
    }
}

/// Integral values (indices, counts) print without a fraction.
fn human_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e9 {
        format!("{x:.0}")
    } else {
        sig6(x)
    }
}

/// Six significant digits, switching to scientific notation outside `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    // round once in scientific form so the exponent already reflects any carry
    let sci = format!("{x:.5e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).expect("rust float formatting");
    if (-4..6).contains(&exp) {
        let rounded: f64 = sci.parse().expect("rust float formatting");
        let decimals = (5 - exp) as usize;
        format!("{rounded:.decimals$}")
    } else {
        sci
    }
}

//! Result tables: fixed-width text for people, CSV or JSON for programs.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
    /// A p-value; the text view truncates small values.
    P(f64),
    Empty,
}

impl Cell {
    fn human(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format!("{x:.4}"),
            Cell::P(p) if *p < 1e-4 => "<0.0001".into(),
            Cell::P(p) => format!("{p:.4}"),
            Cell::Empty => String::new(),
        }
    }

    fn machine(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) | Cell::P(x) => format!("{x}"),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Num(x) | Cell::P(x) => serde_json::Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
            Cell::Empty => Value::Null,
        }
    }

    fn is_text(&self) -> bool {
        matches!(self, Cell::Text(_) | Cell::Empty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::human).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].chars().count()).chain([self.columns[j].chars().count()]).max().unwrap())
            .collect();
        let left: Vec<bool> =
            (0..self.columns.len()).map(|j| self.rows.first().is_none_or(|r| r[j].is_text())).collect();
        let line = |items: &[String]| -> String {
            let parts: Vec<String> = items
                .iter()
                .enumerate()
                .map(|(j, s)| if left[j] { format!("{s:<w$}", w = widths[j]) } else { format!("{s:>w$}", w = widths[j]) })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.columns));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> CliResult<()> {
        let mut writer = csv::Writer::from_writer(w);
        let err = |e: csv::Error| CliError::Data(format!("writing CSV: {e}"));
        writer.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            writer.write_record(r.iter().map(Cell::machine)).map_err(err)?;
        }
        writer.flush().map_err(|e| CliError::Data(format!("writing CSV: {e}")))
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect();
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "title": self.title, "rows": rows })
    }
}

/// Writes tables as JSON when the path ends in `.json`, otherwise as CSV
/// with a leading `table` column naming the source table.
pub fn write_tables(path: &Path, tables: &[Table]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(io_error(path))?;
    let mut file = std::io::BufWriter::new(file);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let value = Value::Array(tables.iter().map(Table::to_json).collect());
        serde_json::to_writer_pretty(&mut file, &value).map_err(|e| CliError::Data(format!("writing JSON: {e}")))?;
        writeln!(file).map_err(io_error(path))?;
    } else if let [single] = tables {
        single.write_csv(&mut file)?;
    } else {
        let first = tables.first().ok_or_else(|| CliError::Data("nothing to write".into()))?;
        let mut merged = Table::new("", &[]);
        merged.columns = std::iter::once("table".to_string()).chain(first.columns.iter().cloned()).collect();
        for t in tables {
            if t.columns != first.columns {
                return Err(CliError::Data("tables with different columns cannot share a CSV file".into()));
            }
            for r in &t.rows {
                merged.rows.push(std::iter::once(Cell::Text(t.title.clone())).chain(r.iter().cloned()).collect());
            }
        }
        merged.write_csv(&mut file)?;
    }
    file.flush().map_err(io_error(path))
}

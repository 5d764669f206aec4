//! Result tables and their CSV/JSON renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One table cell. Floats render with 17 significant digits so every double
/// survives a round trip through the text format.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Null,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match cell {
                    Cell::Int(v) => {
                        let _ = write!(out, "{v}");
                    }
                    Cell::Num(v) => {
                        let _ = write!(out, "{v:.16e}");
                    }
                    Cell::Text(s) => out.push_str(&csv_field(s)),
                    Cell::Null => {}
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<serde_json::Value>> =
            self.rows.iter().map(|row| row.iter().map(cell_json).collect()).collect();
        let doc = serde_json::json!({ "columns": self.columns, "rows": rows });
        let mut text = serde_json::to_string_pretty(&doc).expect("tables are plain JSON data");
        text.push('\n');
        text
    }
}

fn cell_json(cell: &Cell) -> serde_json::Value {
    match cell {
        Cell::Int(v) => (*v).into(),
        // every emitted quantity is finite; a NaN here would be a library bug
        Cell::Num(v) => (*v).into(),
        Cell::Text(s) => s.as_str().into(),
        Cell::Null => serde_json::Value::Null,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Sibling path for a secondary table: "out.csv" + "_pd" -> "out_pd.csv".
/// The empty suffix names the primary table at the base path itself.
pub fn derived_path(base: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    base.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_doubles() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![Cell::Int(3), Cell::Num(0.1 + 0.2)]);
        let csv = t.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let field = line.split(',').nth(1).unwrap();
        assert_eq!(field.parse::<f64>().unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn csv_quotes_reserved_characters() {
        let mut t = Table::new(&["s"]);
        t.push(vec![Cell::Text("a,\"b\"".into())]);
        assert_eq!(t.to_csv(), "s\n\"a,\"\"b\"\"\"\n");
    }

    #[test]
    fn null_renders_as_empty_field() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![Cell::Null, Cell::Int(1)]);
        assert_eq!(t.to_csv(), "a,b\n,1\n");
    }

    #[test]
    fn derived_paths_keep_extension() {
        assert_eq!(derived_path(Path::new("x/out.csv"), "_pd"), PathBuf::from("x/out_pd.csv"));
        assert_eq!(derived_path(Path::new("out"), "_s"), PathBuf::from("out_s"));
        assert_eq!(derived_path(Path::new("x/out.csv"), ""), PathBuf::from("x/out.csv"));
    }
}

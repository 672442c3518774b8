//! Output plumbing: deterministic CSV/JSON rendering and atomic file writes.
//!
//! Every artifact carries `schema_version: 1`. Floats print with 17
//! significant digits in CSV (`{:.16e}`); JSON numbers use the shortest
//! representation that round-trips exactly. Complex values always appear as
//! paired `_re`/`_im` columns. Non-finite values (the +∞ mass-gap sentinel)
//! print as `inf` in CSV and as the strings `"inf"`/`"-inf"`/`"nan"` in
//! JSON, since JSON numbers cannot carry them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Run-wide metadata stamped into every artifact.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub command: &'static str,
    pub seed: u64,
    /// Free-form notes (e.g. the spin-flip field mapping).
    pub notes: Vec<String>,
}

/// One table cell.
#[derive(Debug, Clone)]
pub enum Cell {
    U(u64),
    I(i64),
    F(f64),
    S(String),
}

/// A result table with a fixed, declared column order.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// 17-significant-digit float text for CSV cells.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// JSON value for a float; non-finite values become strings.
pub fn jf(x: f64) -> Value {
    match serde_json::Number::from_f64(x) {
        Some(n) => Value::Number(n),
        None => Value::String(fmt_float(x)),
    }
}

fn cell_csv(cell: &Cell) -> String {
    match cell {
        Cell::U(v) => v.to_string(),
        Cell::I(v) => v.to_string(),
        Cell::F(v) => fmt_float(*v),
        Cell::S(v) => {
            debug_assert!(
                !v.contains([',', '\n', '"']),
                "string cells must not need CSV quoting"
            );
            v.clone()
        }
    }
}

fn cell_json(cell: &Cell) -> Value {
    match cell {
        Cell::U(v) => json!(v),
        Cell::I(v) => json!(v),
        Cell::F(v) => jf(*v),
        Cell::S(v) => json!(v),
    }
}

/// Renders a table in the requested format. An empty table is an error and
/// produces no artifact.
pub fn render_table(table: &Table, meta: &RunMeta, format: Format) -> Result<Vec<u8>, CliError> {
    if table.rows.is_empty() {
        return Err(CliError::EmptyResults {
            command: meta.command,
        });
    }
    match format {
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# schema_version: {SCHEMA_VERSION}");
            let _ = writeln!(out, "# command: {}", meta.command);
            let _ = writeln!(out, "# seed: {}", meta.seed);
            for note in &meta.notes {
                let _ = writeln!(out, "# note: {note}");
            }
            let _ = writeln!(out, "{}", table.columns.join(","));
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(cell_csv).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
            Ok(out.into_bytes())
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| Value::Array(row.iter().map(cell_json).collect()))
                .collect();
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "command": meta.command,
                "seed": meta.seed,
                "notes": meta.notes,
                "columns": table.columns,
                "rows": rows,
            });
            Ok(pretty_bytes(&doc))
        }
    }
}

/// Renders a JSON report (reports are always JSON, independent of the
/// table format flag).
pub fn render_report(body: Value, meta: &RunMeta) -> Vec<u8> {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": meta.command,
        "seed": meta.seed,
        "notes": meta.notes,
        "report": body,
    });
    pretty_bytes(&doc)
}

fn pretty_bytes(doc: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(doc).expect("JSON serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

/// Output format of tabular artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// A finished artifact awaiting the atomic write.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Writes `name` under `dir` via write-temp-then-rename.
pub fn write_atomic(dir: &Path, artifact: &Artifact) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let final_path = dir.join(&artifact.name);
    let tmp_path = dir.join(format!("{}.tmp", artifact.name));
    fs::write(&tmp_path, &artifact.bytes).map_err(|source| CliError::Io {
        path: tmp_path.display().to_string(),
        source,
    })?;
    fs::rename(&tmp_path, &final_path).map_err(|source| CliError::Io {
        path: final_path.display().to_string(),
        source,
    })?;
    Ok(final_path)
}

/// Machine-readable error record on standard error.
pub fn print_error_record(kind: &str, exit_code: i32, detail: &str) {
    let record = json!({
        "schema_version": SCHEMA_VERSION,
        "error": kind,
        "exit_code": exit_code,
        "detail": detail,
    });
    eprintln!("{record}");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RunMeta {
        RunMeta {
            command: "test",
            seed: 7,
            notes: vec!["a note".into()],
        }
    }

    #[test]
    fn csv_has_header_comments_and_full_precision() {
        let mut t = Table::new(vec!["k", "x"]);
        t.push(vec![Cell::U(1), Cell::F(std::f64::consts::PI)]);
        let text = String::from_utf8(render_table(&t, &meta(), Format::Csv).unwrap()).unwrap();
        assert!(text.starts_with("# schema_version: 1\n"));
        assert!(text.contains("# note: a note\n"));
        assert!(text.contains("k,x\n"));
        assert!(text.contains("3.1415926535897931e0"));
        // Round-trip the printed value.
        let printed: f64 = "3.1415926535897931e0".parse().unwrap();
        assert_eq!(printed, std::f64::consts::PI);
    }

    #[test]
    fn json_round_trips_and_orders_rows() {
        let mut t = Table::new(vec!["k", "x"]);
        t.push(vec![Cell::U(0), Cell::F(0.5)]);
        t.push(vec![Cell::U(1), Cell::F(f64::INFINITY)]);
        let bytes = render_table(&t, &meta(), Format::Json).unwrap();
        let doc: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["columns"][1], "x");
        assert_eq!(doc["rows"][0][1], json!(0.5));
        assert_eq!(doc["rows"][1][1], json!("inf"));
    }

    #[test]
    fn empty_tables_are_rejected() {
        let t = Table::new(vec!["k"]);
        assert!(matches!(
            render_table(&t, &meta(), Format::Csv),
            Err(CliError::EmptyResults { .. })
        ));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = std::env::temp_dir().join(format!("spinlab-emit-{}", std::process::id()));
        let artifact = Artifact {
            name: "t.csv".into(),
            bytes: b"x\n".to_vec(),
        };
        let path = write_atomic(&dir, &artifact).unwrap();
        assert!(path.exists());
        assert!(!dir.join("t.csv.tmp").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

//! Table and manifest writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value as Json};

use crate::params::Params;

pub const NA: &str = "NA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Raw,
    Conditional,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => x.to_string(),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => NA.into(),
        }
    }

    fn json(&self) -> Json {
        match self {
            Cell::Num(x) => json!(x),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
            Cell::Missing => Json::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Num)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

/// Column-ordered table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv))?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    /// Array of objects in column order; missing cells are `null`.
    pub fn to_json(&self) -> Json {
        Json::Array(
            self.rows
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    for (c, v) in self.columns.iter().zip(r) {
                        m.insert(c.clone(), v.json());
                    }
                    Json::Object(m)
                })
                .collect(),
        )
    }
}

/// Collects the files of one run and writes the manifest last.
pub struct Run {
    dir: PathBuf,
    format: Format,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), format, outputs: Vec::new() })
    }

    fn write(&mut self, name: String, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(&name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name);
        Ok(path)
    }

    /// Writes `stem.csv` or `stem.json` according to the run format.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<PathBuf> {
        match self.format {
            Format::Csv => self.write(format!("{stem}.csv"), &table.to_csv()?),
            Format::Json => self.json(&format!("{stem}.json"), &table.to_json()),
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name.to_owned(), &bytes)
    }

    pub fn text(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.write(name.to_owned(), bytes)
    }

    pub fn finish(
        mut self,
        command: &str,
        seed: u64,
        normalization: Normalization,
        params: &Params,
        summary: Json,
    ) -> Result<PathBuf> {
        let manifest = json!({
            "tool": "swapgame",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "format": self.format,
            "normalization": normalization,
            "params": params,
            "solver": params.solver(),
            "outputs": self.outputs,
            "summary": summary,
        });
        self.json("manifest.json", &manifest)
    }
}

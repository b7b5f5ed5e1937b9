//! File IO for the text formats plus CSV/JSON report writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use spear_core::evac::{encode_map, parse_map, EvacMap};
use spear_core::predicates::{encode_predicates, parse_predicates, PredicateSet};

pub fn load_map(path: &Path) -> Result<EvacMap> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading map file {}", path.display()))?;
    parse_map(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_map(path: &Path, map: &EvacMap) -> Result<()> {
    fs::write(path, encode_map(map)).with_context(|| format!("writing map file {}", path.display()))
}

pub fn load_predicates(path: &Path, map: &EvacMap) -> Result<PredicateSet> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading predicate file {}", path.display()))?;
    parse_predicates(&text, map).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_predicates(path: &Path, set: &PredicateSet, map: &EvacMap) -> Result<()> {
    fs::write(path, encode_predicates(set, map))
        .with_context(|| format!("writing predicate file {}", path.display()))
}

/// Report output format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

/// A report row that can print itself as one CSV line.
pub trait CsvRow {
    fn header() -> &'static str;
    fn csv(&self) -> String;
}

/// Writes rows as CSV (header + one line per row) or as a JSON array.
/// `path = None` writes to stdout.
pub fn write_report<T: CsvRow + Serialize>(
    path: Option<&Path>,
    format: OutFormat,
    rows: &[T],
) -> Result<()> {
    let body = match format {
        OutFormat::Csv => {
            let mut s = String::from(T::header());
            s.push('\n');
            for r in rows {
                s.push_str(&r.csv());
                s.push('\n');
            }
            s
        }
        OutFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows)?;
            s.push('\n');
            s
        }
    };
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing report {}", p.display())),
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}
